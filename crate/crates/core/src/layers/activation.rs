//! Pointwise activations: ReLU, PReLU (one slope per feature map) and maxout.
//!
//! Feature maps are indexed by axis 0 of every tensor handled here.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Linear,
    Relu,
    Prelu,
    #[default]
    Maxout,
}

pub const PRELU_INIT_SLOPE: f64 = 0.1;

#[derive(Clone, Debug)]
pub struct ReluTape {
    positive: Vec<bool>,
    shape: Vec<usize>,
}

pub fn relu<S: Scalar>(h: &Tensor<S>) -> (Tensor<S>, ReluTape) {
    let positive: Vec<bool> = h.data().iter().map(|&v| v > S::zero()).collect();
    let out = h.map(|v| if v > S::zero() { v } else { S::zero() });
    let tape = ReluTape {
        positive,
        shape: h.shape().to_vec(),
    };
    (out, tape)
}

/// The subgradient at exactly zero is zero.
pub fn relu_backward<S: Scalar>(tape: &ReluTape, grad: &Tensor<S>) -> Result<Tensor<S>> {
    if grad.shape() != tape.shape {
        return Err(shape_err!(
            "relu gradient {:?} vs {:?}",
            grad.shape(),
            tape.shape
        ));
    }
    let data = grad
        .data()
        .iter()
        .zip(&tape.positive)
        .map(|(&g, &p)| if p { g } else { S::zero() })
        .collect();
    Tensor::new(tape.shape.clone(), data)
}

#[derive(Clone, Debug)]
pub struct PreluTape<S> {
    input: Tensor<S>,
    alpha: Vec<S>,
}

fn check_alpha<S: Scalar>(h: &Tensor<S>, alpha: &[S]) -> Result<usize> {
    if h.rank() == 0 || alpha.len() != h.dim(0) {
        return Err(shape_err!(
            "prelu has {} slopes for {} feature maps",
            alpha.len(),
            h.shape().first().copied().unwrap_or(0)
        ));
    }
    Ok(h.len() / h.dim(0))
}

pub fn prelu<S: Scalar>(h: &Tensor<S>, alpha: &[S]) -> Result<(Tensor<S>, PreluTape<S>)> {
    let per_map = check_alpha(h, alpha)?;
    let mut out = h.clone();
    for (chunk, &a) in out.data_mut().chunks_exact_mut(per_map).zip(alpha) {
        for v in chunk {
            if *v <= S::zero() {
                *v *= a;
            }
        }
    }
    let tape = PreluTape {
        input: h.clone(),
        alpha: alpha.to_vec(),
    };
    Ok((out, tape))
}

/// Returns `(grad_h, grad_alpha)`.
pub fn prelu_backward<S: Scalar>(
    tape: &PreluTape<S>,
    grad: &Tensor<S>,
) -> Result<(Tensor<S>, Vec<S>)> {
    if grad.shape() != tape.input.shape() {
        return Err(shape_err!(
            "prelu gradient {:?} vs {:?}",
            grad.shape(),
            tape.input.shape()
        ));
    }
    let per_map = tape.input.len() / tape.input.dim(0);
    let mut gh = grad.clone();
    let mut galpha = vec![S::zero(); tape.alpha.len()];
    for (map, (gchunk, hchunk)) in gh
        .data_mut()
        .chunks_exact_mut(per_map)
        .zip(tape.input.data().chunks_exact(per_map))
        .enumerate()
    {
        let a = tape.alpha[map];
        for (g, &h) in gchunk.iter_mut().zip(hchunk) {
            if h <= S::zero() {
                galpha[map] += h * *g;
                *g *= a;
            }
        }
    }
    Ok((gh, galpha))
}

#[derive(Clone, Debug)]
pub struct MaxoutTape {
    pieces: usize,
    winners: Vec<u8>,
    input_shape: Vec<usize>,
}

/// Elementwise max over `pieces` equal blocks of axis 0. Piece `j` of map `i`
/// lives at index `j * maps + i`. Ties go to the lowest piece.
pub fn maxout<S: Scalar>(pre: &Tensor<S>, pieces: usize) -> Result<(Tensor<S>, MaxoutTape)> {
    if pieces == 0 || pieces > u8::MAX as usize || pre.rank() == 0 || pre.dim(0) % pieces != 0 {
        return Err(shape_err!(
            "cannot split {:?} into {pieces} maxout pieces",
            pre.shape()
        ));
    }
    let block = pre.len() / pieces;
    let d = pre.data();
    let mut out = d[..block].to_vec();
    let mut winners = vec![0u8; block];
    for j in 1..pieces {
        let piece = &d[j * block..(j + 1) * block];
        for ((o, w), &v) in out.iter_mut().zip(&mut winners).zip(piece) {
            if v > *o {
                *o = v;
                *w = j as u8;
            }
        }
    }
    let mut shape = pre.shape().to_vec();
    shape[0] /= pieces;
    let tape = MaxoutTape {
        pieces,
        winners,
        input_shape: pre.shape().to_vec(),
    };
    Ok((Tensor::new(shape, out)?, tape))
}

pub fn maxout_backward<S: Scalar>(tape: &MaxoutTape, grad: &Tensor<S>) -> Result<Tensor<S>> {
    let block = tape.winners.len();
    if grad.len() != block {
        return Err(shape_err!(
            "maxout gradient {:?} does not match {} outputs",
            grad.shape(),
            block
        ));
    }
    let mut out = vec![S::zero(); block * tape.pieces];
    for (e, (&g, &w)) in grad.data().iter().zip(&tape.winners).enumerate() {
        out[w as usize * block + e] = g;
    }
    Tensor::new(tape.input_shape.clone(), out)
}

/// Two-piece maxout of separately computed candidates.
pub fn maxout2<S: Scalar>(h1: &Tensor<S>, h2: &Tensor<S>) -> Result<(Tensor<S>, MaxoutTape)> {
    if h1.shape() != h2.shape() {
        return Err(shape_err!(
            "maxout candidates differ in shape: {:?} vs {:?}",
            h1.shape(),
            h2.shape()
        ));
    }
    let mut shape = h1.shape().to_vec();
    shape[0] *= 2;
    let stacked = Tensor::new(shape, [h1.data(), h2.data()].concat())?;
    maxout(&stacked, 2)
}

/// Splits a stacked two-piece gradient back into `(grad_h1, grad_h2)`.
pub fn maxout2_backward<S: Scalar>(
    tape: &MaxoutTape,
    grad: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>)> {
    let g = maxout_backward(tape, grad)?;
    let half = g.len() / 2;
    let d = g.data();
    Ok((
        Tensor::new(grad.shape().to_vec(), d[..half].to_vec())?,
        Tensor::new(grad.shape().to_vec(), d[half..].to_vec())?,
    ))
}
