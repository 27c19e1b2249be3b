//! Max pooling along the frequency axis only; the time extent is untouched.

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolSpec {
    pub size: usize,
    pub step: usize,
}

impl PoolSpec {
    /// Trailing bands that do not fill a window are dropped.
    pub fn output_bands(&self, bands: usize) -> Result<usize> {
        if self.size == 0 || self.step == 0 {
            return Err(shape_err!("pool size and step must be positive: {self:?}"));
        }
        if bands < self.size {
            return Err(shape_err!(
                "{bands} bands cannot fill a pooling window of {}",
                self.size
            ));
        }
        Ok((bands - self.size) / self.step + 1)
    }
}

#[derive(Clone, Debug)]
pub struct PoolTape {
    input_shape: [usize; 3],
    argmax: Vec<usize>,
}

pub fn maxpool_freq<S: Scalar>(x: &Tensor<S>, spec: &PoolSpec) -> Result<(Tensor<S>, PoolTape)> {
    if x.rank() != 3 {
        return Err(shape_err!(
            "pooling expects [maps x bands x frames], got {:?}",
            x.shape()
        ));
    }
    let (k, b, f) = (x.dim(0), x.dim(1), x.dim(2));
    let bo = spec.output_bands(b)?;
    let d = x.data();
    let mut out = Vec::with_capacity(k * bo * f);
    let mut argmax = Vec::with_capacity(k * bo * f);
    for map in 0..k {
        for r in 0..bo {
            let start = (map * b + r * spec.step) * f;
            for t in 0..f {
                let mut best = start + t;
                for j in 1..spec.size {
                    let idx = start + j * f + t;
                    if d[idx] > d[best] {
                        best = idx;
                    }
                }
                out.push(d[best]);
                argmax.push(best);
            }
        }
    }
    let tape = PoolTape {
        input_shape: [k, b, f],
        argmax,
    };
    Ok((Tensor::new(vec![k, bo, f], out)?, tape))
}

pub fn maxpool_freq_backward<S: Scalar>(tape: &PoolTape, grad: &Tensor<S>) -> Result<Tensor<S>> {
    if grad.len() != tape.argmax.len() {
        return Err(shape_err!(
            "pool gradient {:?} does not match {} pooled outputs",
            grad.shape(),
            tape.argmax.len()
        ));
    }
    let [k, b, f] = tape.input_shape;
    let mut gx = vec![S::zero(); k * b * f];
    for (&g, &i) in grad.data().iter().zip(&tape.argmax) {
        gx[i] += g;
    }
    Tensor::new(tape.input_shape.to_vec(), gx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_window() {
        let x = Tensor::new(vec![1, 3, 1], vec![1.0, 5.0, 3.0]).unwrap();
        let (y, _) = maxpool_freq(&x, &PoolSpec { size: 3, step: 3 }).unwrap();
        assert_eq!(y.data(), &[5.0]);
    }

    #[test]
    fn default_geometry() {
        let spec = PoolSpec { size: 3, step: 3 };
        assert_eq!(spec.output_bands(41).unwrap(), 13);
        let x = Tensor::<f32>::zeros(&[2, 41, 100]);
        let (y, _) = maxpool_freq(&x, &spec).unwrap();
        assert_eq!(y.shape(), &[2, 13, 100]);
        assert!(spec.output_bands(2).is_err());
    }

    #[test]
    fn gradient_goes_to_window_max() {
        let x = Tensor::new(vec![1, 4, 1], vec![1.0, 5.0, 3.0, 9.0]).unwrap();
        let (_, tape) = maxpool_freq(&x, &PoolSpec { size: 2, step: 2 }).unwrap();
        let g = Tensor::new(vec![1, 2, 1], vec![10.0, 20.0]).unwrap();
        assert_eq!(
            maxpool_freq_backward(&tape, &g).unwrap().data(),
            &[0.0, 10.0, 0.0, 20.0]
        );
    }

    proptest! {
        #[test]
        fn equals_window_scan(
            vals in proptest::collection::vec(-5.0f64..5.0, 24),
            size in 1usize..4,
            step in 1usize..4,
        ) {
            let (k, b, f) = (2, 6, 2);
            let x = Tensor::new(vec![k, b, f], vals.clone()).unwrap();
            let spec = PoolSpec { size, step };
            let (y, _) = maxpool_freq(&x, &spec).unwrap();
            let bo = (b - size) / step + 1;
            prop_assert_eq!(y.shape(), &[k, bo, f][..]);
            for map in 0..k {
                for r in 0..bo {
                    for t in 0..f {
                        let mut window: Vec<f64> = (0..size).map(|j| vals[(map * b + r * step + j) * f + t]).collect();
                        let want = window.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        window.reverse();
                        let permuted = window.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        prop_assert_eq!(y.data()[(map * bo + r) * f + t], want);
                        prop_assert_eq!(permuted, want);
                    }
                }
            }
        }
    }
}
