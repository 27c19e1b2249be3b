//! Stride-1 2D cross-correlation over `[channels × bands × frames]` inputs,
//! lowered to a matrix product through an im2col buffer.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::kernels::{gemm_nn, gemm_nt, gemm_tn};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Zero padding that keeps the extent unchanged.
    #[default]
    Same,
    Valid,
}

impl Padding {
    /// Zeros added before and after an axis for a filter of width `filter`.
    pub fn amounts(self, filter: usize) -> (usize, usize) {
        match self {
            Padding::Same => {
                let lo = (filter - 1) / 2;
                (lo, filter - 1 - lo)
            }
            Padding::Valid => (0, 0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    /// Raw output channels (for a maxout layer, pieces × maps).
    pub out_maps: usize,
    pub filter_freq: usize,
    pub filter_time: usize,
    pub freq_padding: Padding,
    pub time_padding: Padding,
}

impl ConvSpec {
    pub fn same(
        in_channels: usize,
        out_maps: usize,
        filter_freq: usize,
        filter_time: usize,
    ) -> Self {
        ConvSpec {
            in_channels,
            out_maps,
            filter_freq,
            filter_time,
            freq_padding: Padding::Same,
            time_padding: Padding::Same,
        }
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.out_maps,
            self.in_channels,
            self.filter_freq,
            self.filter_time,
        ]
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.filter_freq * self.filter_time
    }

    /// Output `(bands, frames)` for an input of `(bands, frames)`.
    pub fn output_extent(&self, bands: usize, frames: usize) -> Result<(usize, usize)> {
        if self.out_maps == 0 || self.filter_freq == 0 || self.filter_time == 0 {
            return Err(shape_err!("degenerate convolution {self:?}"));
        }
        let (fl, fh) = self.freq_padding.amounts(self.filter_freq);
        let (tl, th) = self.time_padding.amounts(self.filter_time);
        let pb = bands + fl + fh;
        let pf = frames + tl + th;
        if pb < self.filter_freq || pf < self.filter_time {
            return Err(shape_err!(
                "{}x{} filter larger than padded input {}x{}",
                self.filter_freq,
                self.filter_time,
                pb,
                pf
            ));
        }
        Ok((pb - self.filter_freq + 1, pf - self.filter_time + 1))
    }
}

/// Forward intermediates for [`conv2d_backward`].
#[derive(Clone, Debug)]
pub struct ConvTape<S> {
    spec: ConvSpec,
    input_shape: [usize; 3],
    out_bands: usize,
    out_frames: usize,
    cols: Vec<S>,
}

#[derive(Clone, Debug)]
pub struct ConvGrads<S> {
    pub input: Tensor<S>,
    pub weights: Tensor<S>,
    pub biases: Tensor<S>,
}

struct Geometry {
    c: usize,
    b: usize,
    f: usize,
    m: usize,
    n: usize,
    bo: usize,
    fo: usize,
    pad_b: usize,
    pad_t: usize,
}

impl Geometry {
    fn new(spec: &ConvSpec, shape: [usize; 3], bo: usize, fo: usize) -> Self {
        Geometry {
            c: shape[0],
            b: shape[1],
            f: shape[2],
            m: spec.filter_freq,
            n: spec.filter_time,
            bo,
            fo,
            pad_b: spec.freq_padding.amounts(spec.filter_freq).0,
            pad_t: spec.time_padding.amounts(spec.filter_time).0,
        }
    }

    /// Visits every contiguous (column, input) run shared by `cols` and `x`:
    /// `(row of cols, offset in that row, offset in x, run length)`.
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        for ch in 0..self.c {
            for di in 0..self.m {
                for dj in 0..self.n {
                    let row = (ch * self.m + di) * self.n + dj;
                    let t0 = self.pad_t.saturating_sub(dj);
                    let t1 = self.fo.min((self.f + self.pad_t).saturating_sub(dj));
                    if t0 >= t1 {
                        continue;
                    }
                    for i in 0..self.bo {
                        let ii = i + di;
                        if ii < self.pad_b || ii - self.pad_b >= self.b {
                            continue;
                        }
                        let src_band = ii - self.pad_b;
                        let src_t = t0 + dj - self.pad_t;
                        f(
                            row,
                            i * self.fo + t0,
                            (ch * self.b + src_band) * self.f + src_t,
                            t1 - t0,
                        );
                    }
                }
            }
        }
    }
}

fn check_params<S: Scalar>(spec: &ConvSpec, weights: &Tensor<S>, biases: &Tensor<S>) -> Result<()> {
    if weights.shape() != spec.weight_shape() {
        return Err(shape_err!(
            "conv weights {:?}, expected {:?}",
            weights.shape(),
            spec.weight_shape()
        ));
    }
    if biases.shape() != [spec.out_maps] {
        return Err(shape_err!(
            "conv biases {:?}, expected [{}]",
            biases.shape(),
            spec.out_maps
        ));
    }
    Ok(())
}

/// `H_i = W_i ∗ X + b_i` for every output map `i`.
pub fn conv2d_forward<S: Scalar>(
    x: &Tensor<S>,
    spec: &ConvSpec,
    weights: &Tensor<S>,
    biases: &Tensor<S>,
) -> Result<(Tensor<S>, ConvTape<S>)> {
    if x.rank() != 3 || x.dim(0) != spec.in_channels {
        return Err(shape_err!(
            "conv input {:?} does not have {} channels",
            x.shape(),
            spec.in_channels
        ));
    }
    check_params(spec, weights, biases)?;
    let input_shape = [x.dim(0), x.dim(1), x.dim(2)];
    let (bo, fo) = spec.output_extent(input_shape[1], input_shape[2])?;
    let geo = Geometry::new(spec, input_shape, bo, fo);
    let plane = bo * fo;
    let k = spec.patch_len();

    let mut cols = vec![S::zero(); k * plane];
    let xd = x.data();
    geo.for_each_run(|row, col_off, x_off, len| {
        let dst = row * plane + col_off;
        cols[dst..dst + len].copy_from_slice(&xd[x_off..x_off + len]);
    });

    let o = spec.out_maps;
    let mut out = vec![S::zero(); o * plane];
    for (map, chunk) in out.chunks_exact_mut(plane).enumerate() {
        chunk.fill(biases.data()[map]);
    }
    gemm_nn(o, k, plane, weights.data(), &cols, &mut out);

    let tape = ConvTape {
        spec: *spec,
        input_shape,
        out_bands: bo,
        out_frames: fo,
        cols,
    };
    Ok((Tensor::new(vec![o, bo, fo], out)?, tape))
}

pub fn conv2d_backward<S: Scalar>(
    tape: &ConvTape<S>,
    weights: &Tensor<S>,
    grad_out: &Tensor<S>,
) -> Result<ConvGrads<S>> {
    conv2d_backward_opt(tape, weights, grad_out, true)
}

/// Skips the input gradient (returned as zeros) when `need_input` is false.
pub(crate) fn conv2d_backward_opt<S: Scalar>(
    tape: &ConvTape<S>,
    weights: &Tensor<S>,
    grad_out: &Tensor<S>,
    need_input: bool,
) -> Result<ConvGrads<S>> {
    let spec = &tape.spec;
    let o = spec.out_maps;
    if grad_out.shape() != [o, tape.out_bands, tape.out_frames] {
        return Err(shape_err!(
            "conv upstream gradient {:?} does not match forward output {:?}",
            grad_out.shape(),
            [o, tape.out_bands, tape.out_frames]
        ));
    }
    if weights.shape() != spec.weight_shape() {
        return Err(shape_err!("conv weights changed shape since forward"));
    }
    let plane = tape.out_bands * tape.out_frames;
    let k = spec.patch_len();
    let g = grad_out.data();

    let biases: Vec<S> = g
        .chunks_exact(plane)
        .map(|r| r.iter().copied().sum())
        .collect();

    let mut gw = vec![S::zero(); o * k];
    gemm_nt(o, plane, k, g, &tape.cols, &mut gw);

    let [c, b, f] = tape.input_shape;
    let mut gx = vec![S::zero(); c * b * f];
    if !need_input {
        return Ok(ConvGrads {
            input: Tensor::new(tape.input_shape.to_vec(), gx)?,
            weights: Tensor::new(spec.weight_shape().to_vec(), gw)?,
            biases: Tensor::new(vec![o], biases)?,
        });
    }
    let mut gcols = vec![S::zero(); k * plane];
    gemm_tn(k, o, plane, weights.data(), g, &mut gcols);
    let geo = Geometry::new(spec, tape.input_shape, tape.out_bands, tape.out_frames);
    geo.for_each_run(|row, col_off, x_off, len| {
        let src = &gcols[row * plane + col_off..row * plane + col_off + len];
        for (d, &s) in gx[x_off..x_off + len].iter_mut().zip(src) {
            *d += s;
        }
    });

    Ok(ConvGrads {
        input: Tensor::new(tape.input_shape.to_vec(), gx)?,
        weights: Tensor::new(spec.weight_shape().to_vec(), gw)?,
        biases: Tensor::new(vec![o], biases)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct loop over the correlation with explicit padding.
    fn naive(x: &Tensor<f64>, spec: &ConvSpec, w: &Tensor<f64>, bias: &Tensor<f64>) -> Tensor<f64> {
        let (c, b, f) = (x.dim(0), x.dim(1), x.dim(2));
        let (bo, fo) = spec.output_extent(b, f).unwrap();
        let (pb, _) = spec.freq_padding.amounts(spec.filter_freq);
        let (pt, _) = spec.time_padding.amounts(spec.filter_time);
        let (m, n) = (spec.filter_freq, spec.filter_time);
        let mut out = Tensor::zeros(&[spec.out_maps, bo, fo]);
        for o in 0..spec.out_maps {
            for i in 0..bo {
                for t in 0..fo {
                    let mut acc = bias.data()[o];
                    for ch in 0..c {
                        for di in 0..m {
                            for dj in 0..n {
                                let ii = i as isize + di as isize - pb as isize;
                                let tt = t as isize + dj as isize - pt as isize;
                                if ii < 0 || tt < 0 || ii >= b as isize || tt >= f as isize {
                                    continue;
                                }
                                acc += w.data()[((o * c + ch) * m + di) * n + dj]
                                    * x.data()[(ch * b + ii as usize) * f + tt as usize];
                            }
                        }
                    }
                    out.data_mut()[(o * bo + i) * fo + t] = acc;
                }
            }
        }
        out
    }

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn same_padding_shape() {
        let spec = ConvSpec::same(3, 128, 3, 5);
        assert_eq!(spec.output_extent(41, 100).unwrap(), (41, 100));
        assert_eq!(spec.output_extent(41, 1).unwrap(), (41, 1));
    }

    #[test]
    fn identity_filter() {
        let spec = ConvSpec::same(1, 1, 1, 1);
        let x = Tensor::<f64>::from_fn(&[1, 3, 4], |i| i as f64 - 5.0);
        let w = Tensor::full(&[1, 1, 1, 1], 1.0);
        let (y, tape) = conv2d_forward(&x, &spec, &w, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(y.data(), x.data());
        let g = Tensor::<f64>::from_fn(&[1, 3, 4], |i| i as f64);
        assert_eq!(
            conv2d_backward(&tape, &w, &g).unwrap().input.data(),
            g.data()
        );
    }

    #[test]
    fn valid_two_by_two() {
        let spec = ConvSpec {
            freq_padding: Padding::Valid,
            time_padding: Padding::Valid,
            ..ConvSpec::same(1, 1, 2, 2)
        };
        let x = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let (y, _) = conv2d_forward(&x, &spec, &w, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[5.0]);
    }

    #[test]
    fn shape_errors() {
        let spec = ConvSpec::same(2, 1, 3, 3);
        let x = Tensor::<f64>::zeros(&[1, 4, 4]);
        let w = Tensor::zeros(&spec.weight_shape());
        assert!(conv2d_forward(&x, &spec, &w, &Tensor::zeros(&[1])).is_err());
        let valid = ConvSpec {
            freq_padding: Padding::Valid,
            ..ConvSpec::same(1, 1, 5, 1)
        };
        let x = Tensor::<f64>::zeros(&[1, 4, 4]);
        let w = Tensor::zeros(&valid.weight_shape());
        assert!(conv2d_forward(&x, &valid, &w, &Tensor::zeros(&[1])).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = ConvSpec::same(2, 3, 3, 5);
        let x = random(&[2, 5, 6], &mut rng);
        let w = random(&spec.weight_shape(), &mut rng);
        let (y, tape) = conv2d_forward(&x, &spec, &w, &Tensor::zeros(&[3])).unwrap();
        let g = conv2d_backward(&tape, &w, &Tensor::zeros(y.shape())).unwrap();
        assert_eq!(g.input.max_abs(), 0.0);
        assert_eq!(g.weights.max_abs(), 0.0);
        assert_eq!(g.biases.max_abs(), 0.0);
    }

    #[test]
    fn matches_direct_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (fp, tp, m, n) in [
            (Padding::Same, Padding::Same, 3, 5),
            (Padding::Valid, Padding::Same, 3, 2),
            (Padding::Same, Padding::Valid, 2, 3),
            (Padding::Valid, Padding::Valid, 1, 1),
        ] {
            let spec = ConvSpec {
                freq_padding: fp,
                time_padding: tp,
                ..ConvSpec::same(2, 3, m, n)
            };
            let x = random(&[2, 6, 7], &mut rng);
            let w = random(&spec.weight_shape(), &mut rng);
            let bias = random(&[3], &mut rng);
            let (y, _) = conv2d_forward(&x, &spec, &w, &bias).unwrap();
            let want = naive(&x, &spec, &w, &bias);
            assert_eq!(y.shape(), want.shape());
            for (a, b) in y.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    /// Central differences, h = 1e-6, on the 1-channel 2x2 valid example.
    #[test]
    fn finite_difference_two_by_two() {
        let spec = ConvSpec {
            freq_padding: Padding::Valid,
            time_padding: Padding::Valid,
            ..ConvSpec::same(1, 1, 2, 2)
        };
        let x = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let bias = Tensor::zeros(&[1]);
        // loss = 0.5 * y^2
        let loss = |w: &Tensor<f64>| {
            let (y, _) = conv2d_forward(&x, &spec, w, &bias).unwrap();
            0.5 * y.data()[0] * y.data()[0]
        };
        let (y, tape) = conv2d_forward(&x, &spec, &w, &bias).unwrap();
        let g = conv2d_backward(&tape, &w, &y).unwrap();
        let h = 1e-6;
        for i in 0..4 {
            let mut wp = w.clone();
            wp.data_mut()[i] += h;
            let mut wm = w.clone();
            wm.data_mut()[i] -= h;
            let fd = (loss(&wp) - loss(&wm)) / (2.0 * h);
            assert!(
                (fd - g.weights.data()[i]).abs() < 1e-7,
                "weight {i}: {fd} vs {}",
                g.weights.data()[i]
            );
        }
        assert_eq!(g.biases.data(), &[5.0]);
    }
}
