//! The experiment spec file: a line-based key = value tree with section
//! headers, a mandatory schema version line, and validation that reports
//! field paths.
//!
//! Grammar (one entry per line, `#` starts a comment):
//!
//! ```text
//! schema = fbsdeplab/1
//! [section]
//! name = 0.25                    # constant coefficient
//! name = poly: 0.5, 0.1         # 0.5 + 0.1 t + ...
//! name = pw: 0.0:1.0, 0.5:2.0   # piecewise constant, value from t_i
//! name = marks: 0.1, -0.2, 0.3  # one constant per mark
//! values = -1.0, 0.4, 1.2       # plain lists where a list is expected
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use fbsdeplab::filtering::FilterSystem;
use fbsdeplab::lq::{LqCoefficients, MarkFn, TimeFn};
use fbsdeplab::marks::MarkSpace;

pub const SCHEMA: &str = "fbsdeplab/1";

#[derive(Debug)]
pub enum SpecError {
    Io(std::io::Error),
    Parse { line: usize, message: String },
    Validation { field: String, message: String },
}

impl fmt::Display for SpecError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpecError::Io(e) => write!(f, "cannot read spec: {e}"),
            SpecError::Parse { line, message } => {
                write!(f, "parse error at line {line}: {message}")
            }
            SpecError::Validation { field, message } => {
                write!(f, "validation error at {field}: {message}")
            }
        }
    }
}

impl std::error::Error for SpecError {}

fn validation(field: &str, message: impl Into<String>) -> SpecError {
    SpecError::Validation {
        field: field.to_string(),
        message: message.into(),
    }
}

/// Raw parsed entries: `section.key -> (value string, line number)`.
#[derive(Debug, Default)]
struct RawSpec {
    entries: BTreeMap<String, (String, usize)>,
}

impl RawSpec {
    fn parse(text: &str) -> Result<Self, SpecError> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        let mut schema_seen = false;
        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw_line.find('#') {
                Some(pos) => &raw_line[..pos],
                None => raw_line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| SpecError::Parse {
                    line: line_no,
                    message: "unterminated section header".into(),
                })?;
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| SpecError::Parse {
                line: line_no,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let key = key.trim();
            let value = value.trim();
            if key == "schema" && section.is_empty() {
                if value != SCHEMA {
                    return Err(SpecError::Parse {
                        line: line_no,
                        message: format!("unsupported schema `{value}`, expected `{SCHEMA}`"),
                    });
                }
                schema_seen = true;
                continue;
            }
            let path = if section.is_empty() {
                key.to_string()
            } else {
                format!("{section}.{key}")
            };
            entries.insert(path, (value.to_string(), line_no));
        }
        if !schema_seen {
            return Err(SpecError::Parse {
                line: 1,
                message: format!("missing `schema = {SCHEMA}` header"),
            });
        }
        Ok(Self { entries })
    }

    fn get(&self, path: &str) -> Option<&str> {
        self.entries.get(path).map(|(v, _)| v.as_str())
    }

    fn require(&self, path: &str) -> Result<&str, SpecError> {
        self.get(path)
            .ok_or_else(|| validation(path, "missing required field"))
    }
}

fn parse_f64(path: &str, value: &str) -> Result<f64, SpecError> {
    value
        .parse::<f64>()
        .map_err(|_| validation(path, format!("not a number: `{value}`")))
}

fn parse_usize(path: &str, value: &str) -> Result<usize, SpecError> {
    value
        .parse::<usize>()
        .map_err(|_| validation(path, format!("not a non-negative integer: `{value}`")))
}

fn parse_list(path: &str, value: &str) -> Result<Vec<f64>, SpecError> {
    value
        .split(',')
        .map(|v| parse_f64(path, v.trim()))
        .collect()
}

fn parse_timefn(path: &str, value: &str) -> Result<TimeFn, SpecError> {
    if let Some(rest) = value.strip_prefix("poly:") {
        return Ok(TimeFn::Poly(parse_list(path, rest)?));
    }
    if let Some(rest) = value.strip_prefix("pw:") {
        let mut knots = Vec::new();
        for item in rest.split(',') {
            let (t, v) = item.trim().split_once(':').ok_or_else(|| {
                validation(path, format!("piecewise entry must be `t:value`, got `{item}`"))
            })?;
            knots.push((parse_f64(path, t.trim())?, parse_f64(path, v.trim())?));
        }
        return Ok(TimeFn::Piecewise(knots));
    }
    Ok(TimeFn::Const(parse_f64(path, value)?))
}

fn parse_markfn(path: &str, value: &str, n_marks: usize) -> Result<MarkFn, SpecError> {
    if let Some(rest) = value.strip_prefix("marks:") {
        let vals = parse_list(path, rest)?;
        if vals.len() != n_marks {
            return Err(validation(
                path,
                format!("expected {n_marks} per-mark values, got {}", vals.len()),
            ));
        }
        return Ok(MarkFn::from_values(vals));
    }
    // a scalar broadcasts to every mark
    Ok(MarkFn::constant(parse_f64(path, value)?, n_marks))
}

/// Experiment options with benchmark defaults.
#[derive(Debug, Clone)]
pub struct ExperimentOptions {
    pub kappa: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub bins: usize,
    pub particles: usize,
    pub epsilons: Vec<f64>,
    pub spike_tbar: f64,
    pub spike_value: f64,
    pub rk4_steps: usize,
    pub space_min: f64,
    pub space_max: f64,
    pub space_points: usize,
    pub space_pad: f64,
    pub decoupling_degree: usize,
    pub time_nodes: usize,
    pub test_controls: Vec<f64>,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        Self {
            kappa: 0.5,
            tol: 1e-8,
            max_iter: 40,
            bins: 5,
            particles: 10_000,
            epsilons: vec![0.2, 0.1, 0.05, 0.025],
            spike_tbar: 0.3,
            spike_value: 3.0,
            rk4_steps: 1000,
            space_min: -3.0,
            space_max: 5.0,
            space_points: 121,
            space_pad: 2.5,
            decoupling_degree: 1,
            time_nodes: 10,
            test_controls: vec![1.0, -1.0, 1.5, -1.5, 2.0, -2.0, 3.0, -3.0, 5.0, -5.0, 10.0],
        }
    }
}

/// The validated experiment spec.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub horizon: f64,
    pub steps: usize,
    pub paths: usize,
    pub seed: u64,
    pub basis_degree: usize,
    pub coeffs: LqCoefficients,
    pub filter: Option<FilterSystem>,
    pub options: ExperimentOptions,
}

/// Loads and validates a spec file.
pub fn load_spec(path: &Path) -> Result<ProblemSpec, SpecError> {
    let text = std::fs::read_to_string(path).map_err(SpecError::Io)?;
    parse_spec(&text)
}

pub fn parse_spec(text: &str) -> Result<ProblemSpec, SpecError> {
    let raw = RawSpec::parse(text)?;

    let horizon = parse_f64("grid.horizon", raw.require("grid.horizon")?)?;
    let steps = parse_usize("grid.steps", raw.require("grid.steps")?)?;
    if !(horizon > 0.0) {
        return Err(validation("grid.horizon", "horizon must be positive"));
    }
    if steps == 0 {
        return Err(validation("grid.steps", "steps must be >= 1"));
    }

    let marks = |name: &str| -> Result<MarkSpace, SpecError> {
        let values = parse_list(
            &format!("{name}.values"),
            raw.require(&format!("{name}.values"))?,
        )?;
        let weights = parse_list(
            &format!("{name}.weights"),
            raw.require(&format!("{name}.weights"))?,
        )?;
        MarkSpace::new(values, weights)
            .map_err(|e| validation(&format!("{name}.weights"), e.to_string()))
    };
    let ms1 = marks("marks1")?;
    let ms2 = marks("marks2")?;

    let paths = parse_usize("mc.paths", raw.get("mc.paths").unwrap_or("10000"))?;
    let seed = parse_usize("mc.seed", raw.get("mc.seed").unwrap_or("42"))? as u64;
    let basis_degree =
        parse_usize("mc.basis_degree", raw.get("mc.basis_degree").unwrap_or("3"))?;

    let timefn = |path: &str| -> Result<TimeFn, SpecError> {
        parse_timefn(path, raw.require(path)?)
    };
    let markfn = |path: &str, n: usize| -> Result<MarkFn, SpecError> {
        parse_markfn(path, raw.require(path)?, n)
    };

    let coeffs = LqCoefficients {
        ms1: ms1.clone(),
        ms2: ms2.clone(),
        x0: parse_f64("state.x0", raw.require("state.x0")?)?,
        b11: timefn("state.b11")?,
        b12: timefn("state.b12")?,
        b13: timefn("state.b13")?,
        s11: timefn("state.s11")?,
        s12: timefn("state.s12")?,
        s13: timefn("state.s13")?,
        s21: timefn("state.s21")?,
        s22: timefn("state.s22")?,
        s23: timefn("state.s23")?,
        f11: markfn("state.f11", ms1.len())?,
        f12: markfn("state.f12", ms1.len())?,
        f21: markfn("state.f21", ms2.len())?,
        f22: markfn("state.f22", ms2.len())?,
        g11: timefn("backward.g11")?,
        g12: timefn("backward.g12")?,
        g13: timefn("backward.g13")?,
        g14: timefn("backward.g14")?,
        g15: markfn("backward.g15", ms1.len())?,
        g16: markfn("backward.g16", ms2.len())?,
        g17: timefn("backward.g17")?,
        g18: timefn("backward.g18")?,
        b22: timefn("observation.b22")?,
        sigma3: timefn("observation.sigma3")?,
        f3: markfn("observation.f3", ms2.len())?,
        lambda11: markfn("observation.lambda11", ms2.len())?,
        l11: timefn("cost.l11")?,
        phi11: parse_f64("terminal.phi11", raw.require("terminal.phi11")?)?,
        phi12: parse_f64("terminal.phi12", raw.require("terminal.phi12")?)?,
    };
    coeffs.validate(horizon).map_err(|e| {
        let msg = e.to_string();
        let field = if msg.contains("l11") {
            "cost.l11"
        } else if msg.contains("tilt") || msg.contains("lambda11") {
            "observation.lambda11"
        } else if msg.contains("sigma3") {
            "observation.sigma3"
        } else if msg.contains("f3") {
            "observation.f3"
        } else {
            "coefficients"
        };
        validation(field, msg)
    })?;

    // optional filter system
    let filter = if raw.get("filter.a1").is_some() {
        let get = |k: &str| -> Result<f64, SpecError> {
            parse_f64(&format!("filter.{k}"), raw.require(&format!("filter.{k}"))?)
        };
        let list = |k: &str| -> Result<Vec<f64>, SpecError> {
            let path = format!("filter.{k}");
            let v = raw.require(&path)?;
            let v = v.strip_prefix("marks:").unwrap_or(v);
            let vals = parse_list(&path, v)?;
            if vals.len() != ms2.len() {
                return Err(validation(
                    &path,
                    format!("expected {} per-mark values", ms2.len()),
                ));
            }
            Ok(vals)
        };
        let system = FilterSystem {
            gamma0: get("gamma0")?,
            gamma1: get("gamma1")?,
            b1: get("b1")?,
            b2: get("b2")?,
            c2: list("c2")?,
            a0: get("a0")?,
            a1: get("a1")?,
            a_nonlinear: None,
            b_obs: get("b_obs")?,
            c_obs: list("c_obs")?,
            ms2: ms2.clone(),
            m0: get("m0")?,
            v0: get("v0")?,
        };
        system
            .validate()
            .map_err(|e| validation("filter", e.to_string()))?;
        Some(system)
    } else {
        None
    };

    // experiment options
    let mut options = ExperimentOptions::default();
    if let Some(v) = raw.get("experiment.kappa") {
        options.kappa = parse_f64("experiment.kappa", v)?;
    }
    if let Some(v) = raw.get("experiment.tol") {
        options.tol = parse_f64("experiment.tol", v)?;
    }
    if let Some(v) = raw.get("experiment.max_iter") {
        options.max_iter = parse_usize("experiment.max_iter", v)?;
    }
    if let Some(v) = raw.get("experiment.bins") {
        options.bins = parse_usize("experiment.bins", v)?;
    }
    if let Some(v) = raw.get("experiment.particles") {
        options.particles = parse_usize("experiment.particles", v)?;
    }
    if let Some(v) = raw.get("experiment.epsilons") {
        options.epsilons = parse_list("experiment.epsilons", v)?;
    }
    if let Some(v) = raw.get("experiment.spike_tbar") {
        options.spike_tbar = parse_f64("experiment.spike_tbar", v)?;
    }
    if let Some(v) = raw.get("experiment.spike_value") {
        options.spike_value = parse_f64("experiment.spike_value", v)?;
    }
    if let Some(v) = raw.get("experiment.rk4_steps") {
        options.rk4_steps = parse_usize("experiment.rk4_steps", v)?;
    }
    if let Some(v) = raw.get("experiment.space_min") {
        options.space_min = parse_f64("experiment.space_min", v)?;
    }
    if let Some(v) = raw.get("experiment.space_max") {
        options.space_max = parse_f64("experiment.space_max", v)?;
    }
    if let Some(v) = raw.get("experiment.space_points") {
        options.space_points = parse_usize("experiment.space_points", v)?;
    }
    if let Some(v) = raw.get("experiment.space_pad") {
        options.space_pad = parse_f64("experiment.space_pad", v)?;
    }
    if let Some(v) = raw.get("experiment.decoupling_degree") {
        options.decoupling_degree = parse_usize("experiment.decoupling_degree", v)?;
    }
    if let Some(v) = raw.get("experiment.time_nodes") {
        options.time_nodes = parse_usize("experiment.time_nodes", v)?;
    }
    if let Some(v) = raw.get("experiment.test_controls") {
        options.test_controls = parse_list("experiment.test_controls", v)?;
    }

    Ok(ProblemSpec {
        horizon,
        steps,
        paths,
        seed,
        basis_degree,
        coeffs,
        filter,
        options,
    })
}
