//! Sampled driver realizations: two Brownian paths and two jump trains on a
//! common time grid, plus compensated integration against the jump measures.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::marks::{JumpEvent, JumpTrain, MarkSpace};
use crate::rng::stream_rng;

/// One sampled realization of all driving noise on a grid.
///
/// The Brownian arrays hold values at the grid nodes with `w(0) = 0`. The
/// same event times serve both probability measures; only the compensator
/// applied by an integrator differs.
#[derive(Debug, Clone)]
pub struct Drivers {
    pub grid: TimeGrid,
    pub ms1: MarkSpace,
    pub ms2: MarkSpace,
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
    pub jumps1: JumpTrain,
    pub jumps2: JumpTrain,
    pub rng_seed: u64,
    pub rng_stream: u64,
}

impl Drivers {
    pub fn dw1(&self, k: usize) -> f64 {
        self.w1[k + 1] - self.w1[k]
    }

    pub fn dw2(&self, k: usize) -> f64 {
        self.w2[k + 1] - self.w2[k]
    }
}

fn sample_brownian(rng: &mut impl Rng, grid: &TimeGrid) -> Vec<f64> {
    let mut w = Vec::with_capacity(grid.n_steps() + 1);
    w.push(0.0);
    for k in 0..grid.n_steps() {
        let dt = grid.dt(k);
        let z: f64 = rand_distr::StandardNormal.sample(rng);
        w.push(w[k] + z * dt.sqrt());
    }
    w
}

fn sample_train(rng: &mut impl Rng, grid: &TimeGrid, space: &MarkSpace) -> Result<JumpTrain> {
    let mass = space.total_mass();
    if mass <= 0.0 {
        return Ok(JumpTrain::empty(grid));
    }
    let lambda = mass * grid.horizon();
    let count = Poisson::new(lambda)
        .map_err(|e| Error::InvalidArgument(format!("bad jump intensity: {e}")))?
        .sample(rng) as usize;
    let mut events = Vec::with_capacity(count);
    for _ in 0..count {
        // time uniform on (0, T]
        let u: f64 = rng.random();
        let time = grid.horizon() * (1.0 - u);
        // mark proportional to weights
        let pick: f64 = rng.random::<f64>() * mass;
        let mut acc = 0.0;
        let mut mark = space.len() - 1;
        for k in 0..space.len() {
            acc += space.weight(k);
            if pick < acc {
                mark = k;
                break;
            }
        }
        events.push(JumpEvent {
            time: time.max(f64::MIN_POSITIVE),
            mark,
        });
    }
    JumpTrain::new(events, space, grid)
}

/// Samples one realization of all drivers, reproducibly in `(seed, stream)`.
pub fn sample_drivers(
    grid: &TimeGrid,
    ms1: &MarkSpace,
    ms2: &MarkSpace,
    seed: u64,
    stream: u64,
) -> Result<Drivers> {
    let mut rng = stream_rng(seed, stream);
    let w1 = sample_brownian(&mut rng, grid);
    let w2 = sample_brownian(&mut rng, grid);
    let jumps1 = sample_train(&mut rng, grid, ms1)?;
    let jumps2 = sample_train(&mut rng, grid, ms2)?;
    Ok(Drivers {
        grid: grid.clone(),
        ms1: ms1.clone(),
        ms2: ms2.clone(),
        w1,
        w2,
        jumps1,
        jumps2,
        rng_seed: seed,
        rng_stream: stream,
    })
}

/// Samples `n_paths` independent driver realizations in parallel, one RNG
/// substream per path.
pub fn sample_driver_bundle(
    grid: &TimeGrid,
    ms1: &MarkSpace,
    ms2: &MarkSpace,
    seed: u64,
    n_paths: usize,
) -> Result<Vec<Drivers>> {
    (0..n_paths)
        .into_par_iter()
        .map(|j| sample_drivers(grid, ms1, ms2, seed, j as u64))
        .collect()
}

/// Integral of a deterministic integrand against the compensated jump
/// measure: the raw sum over events minus the compensator
/// `int_0^T sum_k g(t, e_k) nu(e_k) dt` (trapezoidal in t).
pub fn integrate_compensated(
    g: impl Fn(f64, f64) -> f64,
    train: &JumpTrain,
    space: &MarkSpace,
    grid: &TimeGrid,
) -> Result<f64> {
    let mut raw = 0.0;
    for ev in train.events() {
        let v = g(ev.time, space.mark(ev.mark));
        if !v.is_finite() {
            return Err(Error::NumericError(format!(
                "integrand not finite at event t={}, e={}",
                ev.time,
                space.mark(ev.mark)
            )));
        }
        raw += v;
    }
    let mut compensator = 0.0;
    let node_sum = |t: f64| -> Result<f64> {
        let mut s = 0.0;
        for k in 0..space.len() {
            let v = g(t, space.mark(k));
            if !v.is_finite() {
                return Err(Error::NumericError(format!(
                    "integrand not finite at t={t}, e={}",
                    space.mark(k)
                )));
            }
            s += v * space.weight(k);
        }
        Ok(s)
    };
    for k in 0..grid.n_steps() {
        let a = node_sum(grid.node(k))?;
        let b = node_sum(grid.node(k + 1))?;
        compensator += 0.5 * (a + b) * grid.dt(k);
    }
    Ok(raw - compensator)
}
