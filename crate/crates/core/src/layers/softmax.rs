//! Per-frame log-softmax over the alphabet axis of `[A × T]` logits.

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Returns log-probabilities; each column exponentiates to a distribution.
pub fn log_softmax_frames<S: Scalar>(logits: &Tensor<S>) -> Result<Tensor<S>> {
    if logits.rank() != 2 {
        return Err(shape_err!(
            "logits must be [A x T], got {:?}",
            logits.shape()
        ));
    }
    let (a, t) = (logits.dim(0), logits.dim(1));
    let d = logits.data();
    let mut out = vec![S::zero(); a * t];
    for col in 0..t {
        let mut m = S::neg_infinity();
        for k in 0..a {
            m = m.max(d[k * t + col]);
        }
        let mut s = S::zero();
        for k in 0..a {
            s += (d[k * t + col] - m).exp();
        }
        let lse = m + s.ln();
        for k in 0..a {
            out[k * t + col] = d[k * t + col] - lse;
        }
    }
    Tensor::new(vec![a, t], out)
}

pub fn softmax_frames<S: Scalar>(logits: &Tensor<S>) -> Result<Tensor<S>> {
    Ok(log_softmax_frames(logits)?.map(S::exp))
}

/// Maps a gradient w.r.t. log-probabilities to one w.r.t. logits:
/// `g - p · Σ_k g`.
pub fn log_softmax_backward<S: Scalar>(
    log_probs: &Tensor<S>,
    grad: &Tensor<S>,
) -> Result<Tensor<S>> {
    if grad.shape() != log_probs.shape() {
        return Err(shape_err!(
            "log-softmax gradient {:?} vs {:?}",
            grad.shape(),
            log_probs.shape()
        ));
    }
    let (a, t) = (log_probs.dim(0), log_probs.dim(1));
    let (lp, g) = (log_probs.data(), grad.data());
    let mut out = g.to_vec();
    for col in 0..t {
        let mut total = S::zero();
        for k in 0..a {
            total += g[k * t + col];
        }
        for k in 0..a {
            out[k * t + col] -= lp[k * t + col].exp() * total;
        }
    }
    Tensor::new(vec![a, t], out)
}
