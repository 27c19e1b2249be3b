//! Time-distributed affine layer: the same `W x + b` at every frame.

use crate::error::{shape_err, Result};
use crate::kernels::{gemm_nn, gemm_nt, gemm_tn};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DenseSpec {
    pub in_width: usize,
    /// Raw outputs before any maxout reduction.
    pub out_width: usize,
}

impl DenseSpec {
    pub fn weight_shape(&self) -> [usize; 2] {
        [self.out_width, self.in_width]
    }
}

#[derive(Clone, Debug)]
pub struct DenseTape<S> {
    spec: DenseSpec,
    input: Tensor<S>,
}

#[derive(Clone, Debug)]
pub struct DenseGrads<S> {
    pub input: Tensor<S>,
    pub weights: Tensor<S>,
    pub biases: Tensor<S>,
}

/// `x` is `[in_width × frames]`; output is `[out_width × frames]`.
pub fn dense_forward<S: Scalar>(
    x: &Tensor<S>,
    spec: &DenseSpec,
    weights: &Tensor<S>,
    biases: &Tensor<S>,
) -> Result<(Tensor<S>, DenseTape<S>)> {
    if x.rank() != 2 || x.dim(0) != spec.in_width {
        return Err(shape_err!(
            "dense input {:?} does not have width {}",
            x.shape(),
            spec.in_width
        ));
    }
    if weights.shape() != spec.weight_shape() || biases.shape() != [spec.out_width] {
        return Err(shape_err!(
            "dense parameters {:?}/{:?} do not match {spec:?}",
            weights.shape(),
            biases.shape()
        ));
    }
    let f = x.dim(1);
    let o = spec.out_width;
    let mut out = vec![S::zero(); o * f];
    for (row, &b) in out.chunks_exact_mut(f).zip(biases.data()) {
        row.fill(b);
    }
    gemm_nn(o, spec.in_width, f, weights.data(), x.data(), &mut out);
    let tape = DenseTape {
        spec: *spec,
        input: x.clone(),
    };
    Ok((Tensor::new(vec![o, f], out)?, tape))
}

pub fn dense_backward<S: Scalar>(
    tape: &DenseTape<S>,
    weights: &Tensor<S>,
    grad_out: &Tensor<S>,
) -> Result<DenseGrads<S>> {
    let spec = &tape.spec;
    let f = tape.input.dim(1);
    if grad_out.shape() != [spec.out_width, f] {
        return Err(shape_err!(
            "dense upstream gradient {:?}, expected {:?}",
            grad_out.shape(),
            [spec.out_width, f]
        ));
    }
    let (o, d) = (spec.out_width, spec.in_width);
    let g = grad_out.data();
    let biases = g.chunks_exact(f).map(|r| r.iter().copied().sum()).collect();
    let mut gw = vec![S::zero(); o * d];
    gemm_nt(o, f, d, g, tape.input.data(), &mut gw);
    let mut gx = vec![S::zero(); d * f];
    gemm_tn(d, o, f, weights.data(), g, &mut gx);
    Ok(DenseGrads {
        input: Tensor::new(vec![d, f], gx)?,
        weights: Tensor::new(vec![o, d], gw)?,
        biases: Tensor::new(vec![o], biases)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eye(n: usize) -> Tensor<f64> {
        Tensor::from_fn(&[n, n], |i| if i / n == i % n { 1.0 } else { 0.0 })
    }

    #[test]
    fn identity_weights() {
        let x = Tensor::<f64>::from_fn(&[3, 4], |i| i as f64 * 0.5 - 1.0);
        let spec = DenseSpec {
            in_width: 3,
            out_width: 3,
        };
        let (y, _) = dense_forward(&x, &spec, &eye(3), &Tensor::zeros(&[3])).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn single_frame_is_matvec() {
        let w = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let x = Tensor::new(vec![2, 1], vec![1.0, -1.0]).unwrap();
        let spec = DenseSpec {
            in_width: 2,
            out_width: 3,
        };
        let b = Tensor::new(vec![3], vec![0.5, 0.0, 0.0]).unwrap();
        let (y, _) = dense_forward(&x, &spec, &w, &b).unwrap();
        assert_eq!(y.data(), &[-0.5, -1.0, -1.0]);
        assert_eq!(w.matmul(&x).unwrap().data(), &[-1.0, -1.0, -1.0]);
    }

    #[test]
    fn time_permutation_commutes() {
        let w = Tensor::<f64>::from_fn(&[2, 3], |i| (i as f64).sin());
        let b = Tensor::new(vec![2], vec![0.1, -0.2]).unwrap();
        let x = Tensor::<f64>::from_fn(&[3, 4], |i| (i as f64 * 0.3).cos());
        let perm = [2, 0, 3, 1];
        let xp = Tensor::from_fn(&[3, 4], |i| x.data()[(i / 4) * 4 + perm[i % 4]]);
        let spec = DenseSpec {
            in_width: 3,
            out_width: 2,
        };
        let (y, _) = dense_forward(&x, &spec, &w, &b).unwrap();
        let (yp, _) = dense_forward(&xp, &spec, &w, &b).unwrap();
        for r in 0..2 {
            for t in 0..4 {
                assert_eq!(yp.data()[r * 4 + t], y.data()[r * 4 + perm[t]]);
            }
        }
    }

    #[test]
    fn width_mismatch() {
        let spec = DenseSpec {
            in_width: 3,
            out_width: 2,
        };
        let x = Tensor::<f64>::zeros(&[4, 2]);
        assert!(dense_forward(&x, &spec, &Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2])).is_err());
    }
}
