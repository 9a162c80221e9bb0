//! Binary cross-entropy, L1 and their weighted sum.

use serde::{Deserialize, Serialize};

use super::{Task, Tensor};
use crate::scalar::Scalar;

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before the log.
pub const PROB_CLAMP: f64 = 1e-7;

pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// `-(y ln p + (1 - y) ln(1 - p))` with `p` clamped.
pub fn bce_loss(y: f64, p: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

pub fn l1_loss(y: f64, y_hat: f64) -> f64 {
    (y - y_hat).abs()
}

/// `L_r + lambda * L_c`.
pub fn combined_loss(l_r: f64, l_c: f64, lambda: f64) -> f64 {
    l_r + lambda * l_c
}

/// Batch-mean losses. `combined` is `L_r + lambda L_c` for the joint task
/// and the single active loss otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub loss_r: Option<f64>,
    pub loss_c: Option<f64>,
    pub combined: f64,
}

#[derive(Debug, Clone)]
pub struct LossOutput<T> {
    pub loss: LossBreakdown,
    /// Gradient of `combined` with respect to the raw network outputs.
    pub grad: Tensor<T>,
    /// Per-sample discrete states: clamp saturation and L1 sign. Finite
    /// differences are only valid where these do not change.
    pub signature: Vec<i8>,
}

/// Loss and output gradient for a batch. `sex` holds 1 for female and 0 for
/// male; `age` holds years. Unused targets are ignored.
pub fn multitask_loss<T: Scalar>(outputs: &Tensor<T>, sex: &[T], age: &[T], task: Task, lambda: f64) -> LossOutput<T> {
    let n = outputs.batch();
    let o = task.outputs();
    let inv_n = T::one() / T::from_usize_lossy(n.max(1));
    let lam = T::lit(lambda);
    let (w_c, w_r) = match task {
        Task::Both => (lam, T::one()),
        _ => (T::one(), T::one()),
    };
    let lo = T::lit(PROB_CLAMP);
    let hi = T::one() - lo;
    let mut grad = vec![T::zero(); n * o];
    let mut signature = Vec::with_capacity(n * 2);
    let (mut sum_c, mut sum_r) = (T::zero(), T::zero());
    for s in 0..n {
        if let Some(ci) = task.sex_index() {
            let z = outputs.data()[s * o + ci];
            let y = sex[s];
            let p = sigmoid(z);
            let (pc, state) = if p < lo {
                (lo, -1)
            } else if p > hi {
                (hi, 1)
            } else {
                (p, 0)
            };
            sum_c += -(y * pc.ln() + (T::one() - y) * (T::one() - pc).ln());
            if state == 0 {
                grad[s * o + ci] = w_c * (p - y) * inv_n;
            }
            signature.push(state);
        }
        if let Some(ai) = task.age_index() {
            let d = outputs.data()[s * o + ai] - age[s];
            sum_r += d.abs();
            let sign = if d > T::zero() {
                1
            } else if d < T::zero() {
                -1
            } else {
                0
            };
            grad[s * o + ai] = w_r * T::lit(sign as f64) * inv_n;
            signature.push(sign);
        }
    }
    let loss_c = task.has_sex().then(|| (sum_c * inv_n).to_f64_lossy());
    let loss_r = task.has_age().then(|| (sum_r * inv_n).to_f64_lossy());
    let combined = match task {
        Task::Both => combined_loss(loss_r.unwrap_or(0.0), loss_c.unwrap_or(0.0), lambda),
        Task::Sex => loss_c.unwrap_or(0.0),
        Task::Age => loss_r.unwrap_or(0.0),
    };
    LossOutput {
        loss: LossBreakdown { loss_r, loss_c, combined },
        grad: Tensor::new(vec![n, o], grad).expect("gradient shape"),
        signature,
    }
}
