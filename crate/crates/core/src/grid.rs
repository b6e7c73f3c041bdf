//! Time grids on `[0, T]`.

use crate::error::{Error, Result};

/// A strictly increasing partition `0 = t_0 < ... < t_n = T`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    nodes: Vec<f64>,
}

impl TimeGrid {
    /// Uniform grid with `n_steps` steps.
    pub fn uniform(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "horizon must be positive and finite, got {horizon}"
            )));
        }
        if n_steps == 0 {
            return Err(Error::InvalidArgument("n_steps must be >= 1".into()));
        }
        let nodes = (0..=n_steps)
            .map(|k| horizon * k as f64 / n_steps as f64)
            .collect();
        Ok(Self { horizon, nodes })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn node(&self, k: usize) -> f64 {
        self.nodes[k]
    }

    /// Width of step `k`, the interval `(t_k, t_{k+1}]`.
    pub fn dt(&self, k: usize) -> f64 {
        self.nodes[k + 1] - self.nodes[k]
    }

    /// Index of the step whose interval `(t_k, t_{k+1}]` contains `t`.
    /// Times at or below 0 map to step 0.
    pub fn step_of(&self, t: f64) -> usize {
        match self
            .nodes
            .binary_search_by(|node| node.partial_cmp(&t).unwrap())
        {
            Ok(k) => k.saturating_sub(1),
            Err(k) => k.saturating_sub(1).min(self.n_steps() - 1),
        }
    }

    /// Index of the grid node closest to `t`.
    pub fn nearest_node(&self, t: f64) -> usize {
        let mut best = 0;
        let mut dist = f64::INFINITY;
        for (k, &node) in self.nodes.iter().enumerate() {
            let d = (node - t).abs();
            if d < dist {
                dist = d;
                best = k;
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_partition() {
        let g = TimeGrid::uniform(1.0, 4).unwrap();
        assert_eq!(g.nodes(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(g.n_steps(), 4);
    }

    #[test]
    fn single_step() {
        let g = TimeGrid::uniform(1.0, 1).unwrap();
        assert_eq!(g.nodes(), &[0.0, 1.0]);
    }

    #[test]
    fn degenerate_horizon_rejected() {
        assert!(TimeGrid::uniform(0.0, 4).is_err());
        assert!(TimeGrid::uniform(-1.0, 4).is_err());
        assert!(TimeGrid::uniform(1.0, 0).is_err());
    }

    #[test]
    fn step_lookup() {
        let g = TimeGrid::uniform(1.0, 4).unwrap();
        assert_eq!(g.step_of(0.1), 0);
        assert_eq!(g.step_of(0.25), 0); // node belongs to the step it closes
        assert_eq!(g.step_of(0.26), 1);
        assert_eq!(g.step_of(1.0), 3);
    }
}
