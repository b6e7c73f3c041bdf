//! Spike perturbations of a control on a window `(tbar, tbar + eps]`,
//! skipping steps that contain an observable jump.

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::marks::JumpTrain;
use crate::problem::Control;

/// A spike: perturb to the constant `value` on `(tbar, tbar + eps]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpikeSpec {
    pub t_bar: f64,
    pub eps: f64,
    pub value: f64,
}

impl SpikeSpec {
    pub fn validate(&self, horizon: f64) -> Result<()> {
        if !(self.t_bar >= 0.0 && self.eps > 0.0 && self.t_bar + self.eps <= horizon + 1e-12) {
            return Err(Error::InvalidArgument(format!(
                "spike window ({}, {}] must sit inside [0, {horizon}]",
                self.t_bar,
                self.t_bar + self.eps
            )));
        }
        Ok(())
    }
}

/// Steps whose interval lies inside the spike window. Spike placement snaps
/// to grid nodes: a step belongs to the window when its full interval does.
pub fn window_steps(grid: &TimeGrid, spec: &SpikeSpec) -> Vec<usize> {
    let lo = spec.t_bar;
    let hi = spec.t_bar + spec.eps;
    (0..grid.n_steps())
        .filter(|&k| grid.node(k) >= lo - 1e-12 && grid.node(k + 1) <= hi + 1e-12)
        .collect()
}

/// Builds the spiked control: `value` on window steps, except steps that
/// contain an observable-train event, which keep the base control.
pub fn build_spike_control(
    base: &Control,
    spec: &SpikeSpec,
    jumps2: &JumpTrain,
    grid: &TimeGrid,
) -> Result<Control> {
    spec.validate(grid.horizon())?;
    let mut out = base.clone();
    for k in window_steps(grid, spec) {
        if jumps2.in_step(k).is_empty() {
            out.values[k] = spec.value;
        }
    }
    Ok(out)
}
