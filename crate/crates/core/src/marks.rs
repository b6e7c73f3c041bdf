//! Finite mark spaces and jump event trains.

use crate::error::{Error, Result};
use crate::grid::TimeGrid;

/// A finite mark space: mark values `e_1..e_K` with intensities `nu(e_k)`
/// per unit time.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkSpace {
    marks: Vec<f64>,
    weights: Vec<f64>,
}

impl MarkSpace {
    pub fn new(marks: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if marks.len() != weights.len() {
            return Err(Error::InvalidArgument(format!(
                "marks/weights length mismatch: {} vs {}",
                marks.len(),
                weights.len()
            )));
        }
        for &w in &weights {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "mark weight must be finite and >= 0, got {w}"
                )));
            }
        }
        Ok(Self { marks, weights })
    }

    /// Empty mark space (no jumps ever).
    pub fn empty() -> Self {
        Self {
            marks: vec![],
            weights: vec![],
        }
    }

    pub fn len(&self) -> usize {
        self.marks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.marks.is_empty()
    }

    pub fn mark(&self, k: usize) -> f64 {
        self.marks[k]
    }

    pub fn weight(&self, k: usize) -> f64 {
        self.weights[k]
    }

    pub fn marks(&self) -> &[f64] {
        &self.marks
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `sum_k f(e_k) nu(e_k)` - the integral of `f` against the intensity.
    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.marks
            .iter()
            .zip(&self.weights)
            .map(|(&e, &w)| f(e) * w)
            .sum()
    }
}

/// One jump event: time in `(0, T]` and the index of its mark.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpEvent {
    pub time: f64,
    pub mark: usize,
}

/// An ordered train of jump events with an index from grid steps to events,
/// so per-step event lookup is O(1).
#[derive(Debug, Clone, PartialEq)]
pub struct JumpTrain {
    events: Vec<JumpEvent>,
    /// CSR offsets: events of step `k` are `events[offsets[k]..offsets[k+1]]`.
    offsets: Vec<usize>,
}

impl JumpTrain {
    /// Builds a train from events, validating and indexing them on `grid`.
    pub fn new(mut events: Vec<JumpEvent>, space: &MarkSpace, grid: &TimeGrid) -> Result<Self> {
        events.sort_by(|a, b| a.time.partial_cmp(&b.time).unwrap());
        for ev in &events {
            if !(ev.time > 0.0 && ev.time <= grid.horizon()) {
                return Err(Error::InvalidArgument(format!(
                    "jump time {} outside (0, {}]",
                    ev.time,
                    grid.horizon()
                )));
            }
            if ev.mark >= space.len() {
                return Err(Error::InvalidArgument(format!(
                    "mark index {} out of range (space has {})",
                    ev.mark,
                    space.len()
                )));
            }
        }
        let n = grid.n_steps();
        let mut offsets = vec![0usize; n + 1];
        for ev in &events {
            offsets[grid.step_of(ev.time) + 1] += 1;
        }
        for k in 0..n {
            offsets[k + 1] += offsets[k];
        }
        Ok(Self { events, offsets })
    }

    pub fn empty(grid: &TimeGrid) -> Self {
        Self {
            events: vec![],
            offsets: vec![0; grid.n_steps() + 1],
        }
    }

    pub fn events(&self) -> &[JumpEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Events inside step `k`, i.e. with time in `(t_k, t_{k+1}]`, in time
    /// order.
    pub fn in_step(&self, k: usize) -> &[JumpEvent] {
        &self.events[self.offsets[k]..self.offsets[k + 1]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space() -> MarkSpace {
        MarkSpace::new(vec![-1.0, 0.5], vec![1.2, 0.8]).unwrap()
    }

    #[test]
    fn total_mass_is_weight_sum() {
        assert!((space().total_mass() - 2.0).abs() < 1e-15);
        assert_eq!(MarkSpace::empty().total_mass(), 0.0);
    }

    #[test]
    fn negative_weight_rejected() {
        assert!(MarkSpace::new(vec![0.0], vec![-0.1]).is_err());
    }

    #[test]
    fn integrate_weighs_marks() {
        let s = space();
        let val = s.integrate(|e| e * e);
        assert!((val - (1.0 * 1.2 + 0.25 * 0.8)).abs() < 1e-15);
    }

    #[test]
    fn train_indexing_per_step() {
        let g = TimeGrid::uniform(1.0, 4).unwrap();
        let s = space();
        let train = JumpTrain::new(
            vec![
                JumpEvent { time: 0.6, mark: 1 },
                JumpEvent { time: 0.1, mark: 0 },
                JumpEvent { time: 0.25, mark: 1 },
                JumpEvent { time: 1.0, mark: 0 },
            ],
            &s,
            &g,
        )
        .unwrap();
        assert_eq!(train.in_step(0).len(), 2); // 0.1 and the node-hit 0.25
        assert_eq!(train.in_step(1).len(), 0);
        assert_eq!(train.in_step(2).len(), 1);
        assert_eq!(train.in_step(3).len(), 1);
        // sorted ascending
        assert!(train.events().windows(2).all(|w| w[0].time <= w[1].time));
    }

    #[test]
    fn out_of_range_event_rejected() {
        let g = TimeGrid::uniform(1.0, 4).unwrap();
        let s = space();
        assert!(JumpTrain::new(vec![JumpEvent { time: 1.5, mark: 0 }], &s, &g).is_err());
        assert!(JumpTrain::new(vec![JumpEvent { time: 0.0, mark: 0 }], &s, &g).is_err());
        assert!(JumpTrain::new(vec![JumpEvent { time: 0.5, mark: 9 }], &s, &g).is_err());
    }
}
