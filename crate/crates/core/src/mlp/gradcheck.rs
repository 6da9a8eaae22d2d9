use ndarray::ArrayView2;

use super::{bce_grad, bce_with_logits, MlpModel, NormStats};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Gradients smaller than this are compared on an absolute scale; the
/// central difference carries roughly `1e-11` of round-off.
const REL_FLOOR: f64 = 1e-6;

fn loss(model: &MlpModel, batch: ArrayView2<f64>, labels: &[f64], stats: NormStats) -> f64 {
    let cache = model.forward_cached::<rand_chacha::ChaCha8Rng>(batch, stats, None);
    bce_with_logits(cache.logits.view(), labels)
}

fn check(model: &MlpModel, batch: ArrayView2<f64>, labels: &[f64], stats: NormStats) -> f64 {
    let cache = model.forward_cached::<rand_chacha::ChaCha8Rng>(batch, stats, None);
    let analytic = model.backward(&cache, bce_grad(cache.logits.view(), labels).view(), stats);
    let mut work = model.clone();
    let mut worst: f64 = 0.0;
    for (t, grad) in analytic.tensors.iter().enumerate() {
        for (i, &a) in grad.iter().enumerate() {
            let orig = work.param_slices_mut()[t][i];
            work.param_slices_mut()[t][i] = orig + FD_STEP;
            let up = loss(&work, batch, labels, stats);
            work.param_slices_mut()[t][i] = orig - FD_STEP;
            let down = loss(&work, batch, labels, stats);
            work.param_slices_mut()[t][i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            worst = worst.max(rel);
        }
    }
    worst
}

/// Max relative error between backprop and central finite differences over
/// every parameter, with batch normalisation on its running statistics and
/// dropout disabled (the eval-mode function).
pub fn gradient_check(model: &MlpModel, batch: ArrayView2<f64>, labels: &[f64]) -> f64 {
    check(model, batch, labels, NormStats::Running)
}

/// As [`gradient_check`], but batch normalisation uses the batch statistics
/// (the training-mode function without dropout).
pub fn gradient_check_batch_stats(model: &MlpModel, batch: ArrayView2<f64>, labels: &[f64]) -> f64 {
    check(model, batch, labels, NormStats::Batch)
}
