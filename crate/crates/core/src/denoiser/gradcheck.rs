//! Central finite-difference check of analytic parameter gradients.

use super::train::TrainBatch;

/// Relative errors use `max(|analytic|, |numeric|, REL_FLOOR)` as denominator
/// so parameters with vanishing gradients do not report roundoff as error.
pub const REL_FLOOR: f64 = 1e-7;
pub const DEFAULT_STEP: f64 = 1e-5;

pub trait Differentiable {
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    fn loss_and_grad(&self, batch: &TrainBatch) -> (f64, Vec<f64>);
    fn loss(&self, batch: &TrainBatch) -> f64 {
        self.loss_and_grad(batch).0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: usize,
    pub n_params: usize,
    pub step: f64,
    pub tolerance: f64,
    pub passed: bool,
}

pub fn grad_check<M: Differentiable + Clone>(
    model: &M,
    probe: &TrainBatch,
    tolerance: f64,
) -> GradCheckReport {
    grad_check_with_step(model, probe, tolerance, DEFAULT_STEP)
}

pub fn grad_check_with_step<M: Differentiable + Clone>(
    model: &M,
    probe: &TrainBatch,
    tolerance: f64,
    step: f64,
) -> GradCheckReport {
    let (_, analytic) = model.loss_and_grad(probe);
    let mut work = model.clone();
    let mut worst = (0.0f64, 0usize);
    for i in 0..analytic.len() {
        let orig = work.params()[i];
        work.params_mut()[i] = orig + step;
        let up = work.loss(probe);
        work.params_mut()[i] = orig - step;
        let down = work.loss(probe);
        work.params_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let denom = analytic[i].abs().max(numeric.abs()).max(REL_FLOOR);
        let rel = (analytic[i] - numeric).abs() / denom;
        // NaN propagates as failure
        if rel > worst.0 || rel.is_nan() {
            worst = (rel, i);
        }
    }
    GradCheckReport {
        max_rel_error: worst.0,
        worst_param: worst.1,
        n_params: analytic.len(),
        step,
        tolerance,
        passed: worst.0 <= tolerance,
    }
}
