//! Comparator-based optimality check: the candidate feedback control is
//! run against a suite of admissible alternatives on common random
//! numbers, and each cost gap is reported with a paired standard error.

use crate::error::Result;
use crate::grid::TimeGrid;
use crate::lq::cost::{evaluate_cost, CostSamples};
use crate::lq::{LqCoefficients, LqControlLaw, RiccatiBundle};
use crate::spike::{window_steps, SpikeSpec};
use crate::stats::covariance;

#[derive(Debug, Clone)]
pub struct ComparatorRow {
    pub name: String,
    pub j: f64,
    pub se: f64,
    /// `J(comparator) - J(candidate)`.
    pub gap: f64,
    pub gap_se: f64,
    pub z: f64,
}

#[derive(Debug, Clone)]
pub struct OptimalityReport {
    pub candidate_j: f64,
    pub candidate_se: f64,
    pub rows: Vec<ComparatorRow>,
    /// True when no comparator beats the candidate by more than `3 SE`.
    pub pass: bool,
}

/// Paired gap of two cost sample sets computed on the same drivers:
/// `gap = J(u) - J(candidate)` with a delta-method standard error using
/// the full covariance of the four per-path series.
fn paired_gap(u: &CostSamples, cand: &CostSamples) -> (f64, f64) {
    let n = u.running.len() as f64;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
    let (au, bu) = (mean(&u.running), mean(&u.y0));
    let (ac, bc) = (mean(&cand.running), mean(&cand.y0));
    let gap = (au + bu * bu) - (ac + bc * bc);
    // gradient of the gap in the four means
    let g = [1.0, 2.0 * bu, -1.0, -2.0 * bc];
    let series = [&u.running, &u.y0, &cand.running, &cand.y0];
    let mut var = 0.0;
    for (i, si) in series.iter().enumerate() {
        for (j, sj) in series.iter().enumerate() {
            let c = if i == j {
                covariance(si, si)
            } else {
                covariance(si, sj)
            };
            var += g[i] * g[j] * c;
        }
    }
    // the two middle series are the same realization pair, so the sign
    // pattern of the gradient already encodes the pairing
    (gap, (var.max(0.0) / n).sqrt())
}

/// The shipped comparator suite: constants across the control set, scaled
/// and sign-flipped feedback, and spiked variants of the candidate.
pub fn default_comparators(grid: &TimeGrid) -> Vec<LqControlLaw> {
    let t = grid.horizon();
    let spike = |t_bar: f64, eps: f64, value: f64| -> Vec<usize> {
        window_steps(
            grid,
            &SpikeSpec {
                t_bar,
                eps,
                value,
            },
        )
    };
    let mut out = vec![
        LqControlLaw::constant(1.0),
        LqControlLaw::constant(-1.0),
        LqControlLaw::constant(1.5),
        LqControlLaw::constant(-1.5),
        LqControlLaw::constant(2.0),
        LqControlLaw::constant(-2.0),
        LqControlLaw::constant(3.0),
        LqControlLaw::constant(-3.0),
        LqControlLaw::constant(5.0),
        LqControlLaw::constant(-5.0),
        LqControlLaw::scaled(0.5),
        LqControlLaw::scaled(0.8),
        LqControlLaw::scaled(1.2),
        LqControlLaw::scaled(1.5),
        LqControlLaw::scaled(2.0),
        LqControlLaw::scaled(-1.0),
        LqControlLaw::scaled(0.0),
    ];
    out.push(LqControlLaw::candidate().with_spike(spike(0.2 * t, 0.1 * t, 2.0), 2.0));
    out.push(LqControlLaw::candidate().with_spike(spike(0.5 * t, 0.1 * t, -2.0), -2.0));
    out.push(LqControlLaw::candidate().with_spike(spike(0.7 * t, 0.2 * t, 3.0), 3.0));
    out
}

/// Runs the candidate against `comparators` (the default suite when
/// empty), `n_paths` paths each on common random numbers.
pub fn verify_optimality(
    coeffs: &LqCoefficients,
    riccati: &RiccatiBundle,
    grid: &TimeGrid,
    comparators: Vec<LqControlLaw>,
    n_paths: usize,
    seed: u64,
) -> Result<OptimalityReport> {
    let comparators = if comparators.is_empty() {
        default_comparators(grid)
    } else {
        comparators
    };
    let candidate = LqControlLaw::candidate();
    let cand_samples = evaluate_cost(coeffs, riccati, &candidate, grid, n_paths, seed)?;
    let cand_est = cand_samples.estimate();

    let mut rows = Vec::with_capacity(comparators.len());
    for law in &comparators {
        let samples = evaluate_cost(coeffs, riccati, law, grid, n_paths, seed)?;
        let est = samples.estimate();
        let (gap, gap_se) = paired_gap(&samples, &cand_samples);
        let z = if gap_se > 0.0 { gap / gap_se } else { f64::INFINITY };
        rows.push(ComparatorRow {
            name: law.name.clone(),
            j: est.j,
            se: est.se,
            gap,
            gap_se,
            z,
        });
    }
    let pass = rows.iter().all(|r| r.gap >= -3.0 * r.gap_se);
    Ok(OptimalityReport {
        candidate_j: cand_est.j,
        candidate_se: cand_est.se,
        rows,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lq::{default_mark_spaces, lq_default, solve_riccati_system};

    #[test]
    fn candidate_vs_itself_has_zero_gap() {
        let (ms1, ms2) = default_mark_spaces();
        let c = lq_default(ms1, ms2);
        let grid = TimeGrid::uniform(1.0, 100).unwrap();
        let r = solve_riccati_system(&c, &grid).unwrap();
        let report = verify_optimality(
            &c,
            &r,
            &grid,
            vec![LqControlLaw::candidate()],
            500,
            3,
        )
        .unwrap();
        assert!(report.rows[0].gap.abs() < 1e-12);
    }

    #[test]
    fn comparators_do_not_beat_candidate() {
        let (ms1, ms2) = default_mark_spaces();
        let c = lq_default(ms1, ms2);
        let grid = TimeGrid::uniform(1.0, 100).unwrap();
        let r = solve_riccati_system(&c, &grid).unwrap();
        let report = verify_optimality(&c, &r, &grid, vec![], 2000, 5).unwrap();
        assert_eq!(report.rows.len(), 20);
        for row in &report.rows {
            assert!(
                row.gap >= -3.0 * row.gap_se,
                "{} beats candidate: gap {} se {}",
                row.name,
                row.gap,
                row.gap_se
            );
        }
        assert!(report.pass);
    }
}
