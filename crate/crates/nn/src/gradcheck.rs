//! Finite-difference verification of [`backward`](crate::network::backward).

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::network::{backward, forward, forward_with_cache, Mode, NetworkState};
use crate::spec::NetworkSpec;
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;

/// Loss over the network output returning value and output gradient.
pub type LossFn<'a> = dyn Fn(&Tensor<f64>) -> Result<(f64, Tensor<f64>)> + 'a;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// `(layer, slot, index)` of the worst weight; `None` when the worst entry
    /// was an input element.
    pub worst: Option<(usize, usize, usize)>,
    pub checked: usize,
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-12)
}

/// Compares analytic gradients against central differences with step
/// `1e-5` on up to `per_tensor` sampled entries of every weight tensor and of
/// the input. The same `mode` (and so the same dropout masks) is used for
/// every evaluation.
pub fn gradient_check(
    spec: &NetworkSpec,
    state: &NetworkState<f64>,
    input: &Tensor<f64>,
    mode: Mode,
    loss_fn: &LossFn<'_>,
    per_tensor: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let (out, cache) = forward_with_cache(spec, state, input, mode)?;
    let (_, upstream) = loss_fn(&out)?;
    let (grads, dinput) = backward(spec, state, &cache, &upstream)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = state.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        checked: 0,
    };
    let eval = |st: &NetworkState<f64>, x: &Tensor<f64>| -> Result<f64> {
        Ok(loss_fn(&forward(spec, st, x, mode)?)?.0)
    };
    for layer in 0..state.weights.len() {
        for slot in 0..state.weights[layer].len() {
            let len = state.weights[layer][slot].len();
            for idx in sample(&mut rng, len, per_tensor.min(len)) {
                let base = state.weights[layer][slot].data()[idx];
                probe.weights[layer][slot].data_mut()[idx] = base + FD_STEP;
                let plus = eval(&probe, input)?;
                probe.weights[layer][slot].data_mut()[idx] = base - FD_STEP;
                let minus = eval(&probe, input)?;
                probe.weights[layer][slot].data_mut()[idx] = base;
                let numeric = (plus - minus) / (2.0 * FD_STEP);
                let err = relative_error(grads.0[layer][slot].data()[idx], numeric);
                report.checked += 1;
                if err > report.max_relative_error {
                    report.max_relative_error = err;
                    report.worst = Some((layer, slot, idx));
                }
            }
        }
    }
    let mut x = input.clone();
    for idx in sample(&mut rng, input.len(), per_tensor.min(input.len())) {
        let base = input.data()[idx];
        x.data_mut()[idx] = base + FD_STEP;
        let plus = eval(state, &x)?;
        x.data_mut()[idx] = base - FD_STEP;
        let minus = eval(state, &x)?;
        x.data_mut()[idx] = base;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let err = relative_error(dinput.data()[idx], numeric);
        report.checked += 1;
        if err > report.max_relative_error {
            report.max_relative_error = err;
            report.worst = None;
        }
    }
    Ok(report)
}
