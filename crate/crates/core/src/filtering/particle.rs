//! Bootstrap particle filter oracle for the signal-observation system.
//!
//! Particles carry their own first-Brownian noise; the shared
//! observation-channel noise is recovered per particle from the observed
//! increment (the observation map is invertible given the particle), and
//! the weight picks up the Gaussian likelihood of that increment. Observed
//! jump times are known, and the mark intensity does not depend on the
//! signal, so events reweight by an intensity ratio of one and simply
//! shift each particle.

use rand::Rng;
use rand_distr::Distribution;

use crate::drivers::Drivers;
use crate::error::Result;
use crate::filtering::FilterSystem;
use crate::rng::stream_rng;

/// Oracle output: the weighted-mean path and the effective-sample-size
/// trace.
#[derive(Debug, Clone)]
pub struct ParticleOutput {
    pub mean: Vec<f64>,
    pub ess: Vec<f64>,
    /// Set when the effective sample size dropped below 10 at some step
    /// (resampling still keeps the filter running).
    pub degeneracy: bool,
}

/// Runs the oracle along one observation path with `n_particles`
/// particles, systematic resampling every step.
pub fn particle_oracle(
    system: &FilterSystem,
    obs_path: &[f64],
    drivers: &Drivers,
    n_particles: usize,
    seed: u64,
) -> Result<ParticleOutput> {
    system.validate()?;
    let grid = &drivers.grid;
    let n = grid.n_steps();
    let mut rng = stream_rng(seed, 0);

    let mut particles: Vec<f64> = (0..n_particles)
        .map(|_| {
            let z: f64 = rand_distr::StandardNormal.sample(&mut rng);
            system.m0 + system.v0.sqrt() * z
        })
        .collect();
    let mut weights = vec![1.0 / n_particles as f64; n_particles];
    let mut mean = Vec::with_capacity(n + 1);
    let mut ess_trace = Vec::with_capacity(n + 1);
    let wmean = |ps: &[f64], ws: &[f64]| ps.iter().zip(ws).map(|(p, w)| p * w).sum::<f64>();
    mean.push(wmean(&particles, &weights));
    ess_trace.push(n_particles as f64);
    let mut degeneracy = false;

    let comp_cobs: f64 = system
        .c_obs
        .iter()
        .zip(system.ms2.weights())
        .map(|(c, w)| c * w)
        .sum();
    let comp_c2: f64 = system
        .c2
        .iter()
        .zip(system.ms2.weights())
        .map(|(c, w)| c * w)
        .sum();

    for k in 0..n {
        let dt = grid.dt(k);
        // continuous part of the observed increment
        let mut dy = obs_path[k + 1] - obs_path[k] + comp_cobs * dt;
        let mut jump_shift = 0.0;
        for ev in drivers.jumps2.in_step(k) {
            dy -= system.c_obs[ev.mark];
            jump_shift += system.c2[ev.mark];
        }

        // propagate with the observation-consistent shared noise and
        // weight by the increment likelihood
        let mut log_w: Vec<f64> = Vec::with_capacity(n_particles);
        for p in particles.iter_mut() {
            let resid = dy - system.a_eval(*p) * dt;
            log_w.push(-resid * resid / (2.0 * system.b_obs * system.b_obs * dt));
            let dw2 = resid / system.b_obs;
            let z: f64 = rand_distr::StandardNormal.sample(&mut rng);
            *p += (system.gamma0 + system.gamma1 * *p) * dt
                + system.b1 * dt.sqrt() * z
                + system.b2 * dw2
                + jump_shift
                - comp_c2 * dt;
        }
        let max_lw = log_w.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut total = 0.0;
        for (w, lw) in weights.iter_mut().zip(&log_w) {
            *w *= (lw - max_lw).exp();
            total += *w;
        }
        for w in weights.iter_mut() {
            *w /= total;
        }
        let ess = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        if ess < 10.0 {
            degeneracy = true;
        }
        mean.push(wmean(&particles, &weights));
        ess_trace.push(ess);

        // systematic resampling every step
        let u0: f64 = rng.random::<f64>() / n_particles as f64;
        let mut cumulative = 0.0;
        let mut idx = 0usize;
        let mut resampled = Vec::with_capacity(n_particles);
        for i in 0..n_particles {
            let target = u0 + i as f64 / n_particles as f64;
            while cumulative + weights[idx] < target && idx + 1 < n_particles {
                cumulative += weights[idx];
                idx += 1;
            }
            resampled.push(particles[idx]);
        }
        particles = resampled;
        weights.fill(1.0 / n_particles as f64);
    }

    Ok(ParticleOutput {
        mean,
        ess: ess_trace,
        degeneracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drivers::sample_drivers;
    use crate::grid::TimeGrid;
    use crate::marks::MarkSpace;

    fn system() -> FilterSystem {
        let ms2 = MarkSpace::new(vec![-0.8, 0.6, 1.5], vec![0.9, 0.6, 0.5]).unwrap();
        FilterSystem {
            gamma0: 0.0,
            gamma1: -1.0,
            b1: 0.5,
            b2: 0.3,
            c2: vec![0.2, -0.15, 0.1],
            a0: 0.0,
            a1: 1.0,
            a_nonlinear: None,
            b_obs: 0.5,
            c_obs: vec![0.6, 1.0, 1.4],
            ms2,
            m0: 1.0,
            v0: 0.2,
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let sys = system();
        let grid = TimeGrid::uniform(1.0, 40).unwrap();
        let d = sample_drivers(&grid, &MarkSpace::empty(), &sys.ms2, 5, 0).unwrap();
        let (_, y) = sys.simulate(&d, 1.1);
        let a = particle_oracle(&sys, &y, &d, 500, 9).unwrap();
        let b = particle_oracle(&sys, &y, &d, 500, 9).unwrap();
        assert_eq!(a.mean, b.mean);
    }

    #[test]
    fn uninformative_likelihood_matches_prior_mean() {
        // a1 = 0 and b2 = 0: particles never see the observation, so the
        // oracle mean follows the prior flow
        let mut sys = system();
        sys.a1 = 0.0;
        sys.b2 = 0.0;
        sys.c2 = vec![0.0; 3];
        sys.gamma0 = 0.4;
        sys.v0 = 0.0;
        let grid = TimeGrid::uniform(1.0, 100).unwrap();
        let d = sample_drivers(&grid, &MarkSpace::empty(), &sys.ms2, 6, 0).unwrap();
        let (_, y) = sys.simulate(&d, sys.m0);
        let out = particle_oracle(&sys, &y, &d, 4000, 11).unwrap();
        for (k, &t) in grid.nodes().iter().enumerate() {
            let expect = 0.4 + 0.6 * (-t).exp();
            assert!(
                (out.mean[k] - expect).abs() < 0.02,
                "oracle {} vs {expect} at t={t}",
                out.mean[k]
            );
        }
    }

    #[test]
    fn oracle_agrees_with_innovation_filter() {
        let sys = system();
        let grid = TimeGrid::uniform(1.0, 200).unwrap();
        let d = sample_drivers(&grid, &MarkSpace::empty(), &sys.ms2, 7, 0).unwrap();
        let (_, y) = sys.simulate(&d, 1.2);
        let filt = crate::filtering::integrate_innovation_filter(&sys, &y, &d).unwrap();
        let oracle = particle_oracle(&sys, &y, &d, 10_000, 13).unwrap();
        let sd = sys.stationary_sd().unwrap();
        let rmse = (filt
            .mean
            .iter()
            .zip(&oracle.mean)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / filt.mean.len() as f64)
            .sqrt();
        assert!(rmse < 0.05 * sd, "rmse {rmse} vs 5% of sd {sd}");
    }

    #[test]
    fn variance_scaling_with_particle_count() {
        // doubling particles should trend the squared error down
        let sys = system();
        let grid = TimeGrid::uniform(1.0, 100).unwrap();
        let mut errs = Vec::new();
        for &np in &[250usize, 1000, 4000] {
            let mut sq = 0.0;
            let reps = 6;
            for rep in 0..reps {
                let d =
                    sample_drivers(&grid, &MarkSpace::empty(), &sys.ms2, 40 + rep, 0).unwrap();
                let (_, y) = sys.simulate(&d, 1.0);
                let filt =
                    crate::filtering::integrate_innovation_filter(&sys, &y, &d).unwrap();
                let oracle = particle_oracle(&sys, &y, &d, np, 100 + rep).unwrap();
                sq += filt
                    .mean
                    .iter()
                    .zip(&oracle.mean)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    / filt.mean.len() as f64;
            }
            errs.push(sq / reps as f64);
        }
        assert!(
            errs[0] > errs[2],
            "mse did not shrink with particles: {errs:?}"
        );
    }
}
