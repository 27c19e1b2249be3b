//! Inverted dropout: survivors are scaled by `1 / (1 - rate)` at training
//! time so inference is the identity.

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct DropoutTape<S> {
    /// `None` when the layer acted as the identity.
    mask: Option<Vec<S>>,
    shape: Vec<usize>,
}

pub fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!(
            "dropout rate {rate} outside [0, 1)"
        )));
    }
    Ok(())
}

pub fn dropout<S: Scalar, R: Rng + ?Sized>(
    x: &Tensor<S>,
    rate: f64,
    rng: &mut R,
    training: bool,
) -> Result<(Tensor<S>, DropoutTape<S>)> {
    check_rate(rate)?;
    if !training || rate == 0.0 {
        let tape = DropoutTape {
            mask: None,
            shape: x.shape().to_vec(),
        };
        return Ok((x.clone(), tape));
    }
    let keep = S::lit(1.0 / (1.0 - rate));
    let mask: Vec<S> = (0..x.len())
        .map(|_| {
            if rng.gen::<f64>() < rate {
                S::zero()
            } else {
                keep
            }
        })
        .collect();
    let mut out = x.clone();
    for (v, &m) in out.data_mut().iter_mut().zip(&mask) {
        *v *= m;
    }
    let tape = DropoutTape {
        mask: Some(mask),
        shape: x.shape().to_vec(),
    };
    Ok((out, tape))
}

pub fn dropout_backward<S: Scalar>(tape: &DropoutTape<S>, grad: &Tensor<S>) -> Result<Tensor<S>> {
    if grad.shape() != tape.shape {
        return Err(shape_err!(
            "dropout gradient {:?} vs {:?}",
            grad.shape(),
            tape.shape
        ));
    }
    let mut g = grad.clone();
    if let Some(mask) = &tape.mask {
        for (v, &m) in g.data_mut().iter_mut().zip(mask) {
            *v *= m;
        }
    }
    Ok(g)
}
