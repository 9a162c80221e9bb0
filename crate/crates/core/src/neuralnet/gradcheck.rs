//! Finite-difference check of the analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::loss::multitask_loss;
use super::net::{ConvNet, Mode};
use super::{NetError, Tensor};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Scalars skipped because a ReLU, pool winner, clamp or L1 sign flipped
    /// between the two probes (the loss is not differentiable there).
    pub excluded: usize,
    /// `(parameter, element, analytic, numeric)` of the worst scalar.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Compare backprop against central differences on `n_params` randomly
/// chosen scalars (every tensor contributes at least one).
///
/// Runs on a clone with dropout off and batch-statistics normalisation, so
/// the loss is a deterministic function of the parameters.
#[allow(clippy::too_many_arguments)]
pub fn grad_check<T: Scalar>(
    net: &ConvNet<T>,
    batch: &Tensor<T>,
    sex: &[T],
    age: &[T],
    lambda: f64,
    epsilon: f64,
    n_params: usize,
    seed: u64,
) -> Result<GradCheckReport, NetError> {
    let mut net = net.clone();
    net.set_dropout(0.0);
    let task = net.task();

    let probe = |net: &mut ConvNet<T>| -> Result<(f64, Vec<u32>, Vec<i8>), NetError> {
        let out = net.forward(batch, Mode::Train)?;
        let l = multitask_loss(&out, sex, age, task, lambda);
        Ok((l.loss.combined, net.activation_signature(), l.signature))
    };

    net.zero_grad();
    let out = net.forward(batch, Mode::Train)?;
    let base = multitask_loss(&out, sex, age, task, lambda);
    let base_act = net.activation_signature();
    net.backward(&base.grad);
    let analytic: Vec<Vec<f64>> = net.params().iter().map(|p| p.grad.iter().map(|g| g.to_f64_lossy()).collect()).collect();
    let names: Vec<String> = net.params().iter().map(|p| p.name.clone()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks: Vec<(usize, usize)> = Vec::new();
    for (pi, g) in analytic.iter().enumerate() {
        if !g.is_empty() {
            picks.push((pi, sample(&mut rng, g.len(), 1).index(0)));
        }
    }
    let total: usize = analytic.iter().map(Vec::len).sum();
    let extra = n_params.saturating_sub(picks.len()).min(total);
    for flat in sample(&mut rng, total, extra) {
        let mut rem = flat;
        for (pi, g) in analytic.iter().enumerate() {
            if rem < g.len() {
                if !picks.contains(&(pi, rem)) {
                    picks.push((pi, rem));
                }
                break;
            }
            rem -= g.len();
        }
    }

    let mut report = GradCheckReport { max_rel_error: 0.0, checked: 0, excluded: 0, worst: None };
    for (pi, ei) in picks {
        let orig = net.params()[pi].value[ei];
        net.params_mut()[pi].value[ei] = orig + T::lit(epsilon);
        let (lp, ap, sp) = probe(&mut net)?;
        net.params_mut()[pi].value[ei] = orig - T::lit(epsilon);
        let (lm, am, sm) = probe(&mut net)?;
        net.params_mut()[pi].value[ei] = orig;
        if ap != base_act || am != base_act || sp != base.signature || sm != base.signature {
            report.excluded += 1;
            continue;
        }
        let numeric = (lp - lm) / (2.0 * epsilon);
        let a = analytic[pi][ei];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        report.checked += 1;
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(rel);
            report.worst = Some((names[pi].clone(), ei, a, numeric));
        }
    }
    Ok(report)
}
