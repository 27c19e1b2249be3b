//! Static filterbank frames to normalized 3-channel network input:
//! regression deltas, delta-deltas and per-dimension standardization.
//!
//! Feature math runs in `f64`; [`assemble_input`] casts to the run precision.

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DELTA_WINDOW: usize = 2;
pub const VARIANCE_FLOOR: f64 = 1e-8;
pub const CHANNELS: usize = 3;

/// `d_t = Σ_{n=1..N} n (c_{t+n} − c_{t−n}) / (2 Σ n²)` per band, with the first
/// and last frames replicated past the edges.
pub fn compute_deltas(stat: &Tensor<f64>, window: usize) -> Result<Tensor<f64>> {
    if window == 0 {
        return Err(Error::InvalidArgument(
            "delta window must be at least 1".into(),
        ));
    }
    if stat.rank() != 2 {
        return Err(shape_err!(
            "static features must be [bands x frames], got {:?}",
            stat.shape()
        ));
    }
    let (b, f) = (stat.dim(0), stat.dim(1));
    let denom = 2.0 * (1..=window).map(|n| (n * n) as f64).sum::<f64>();
    let d = stat.data();
    let mut out = vec![0.0; b * f];
    for band in 0..b {
        let row = &d[band * f..(band + 1) * f];
        for t in 0..f {
            let mut acc = 0.0;
            for n in 1..=window {
                let ahead = row[(t + n).min(f - 1)];
                let behind = row[t.saturating_sub(n)];
                acc += n as f64 * (ahead - behind);
            }
            out[band * f + t] = acc / denom;
        }
    }
    Tensor::new(vec![b, f], out)
}

/// `[3 × bands × frames]`: static, Δ, ΔΔ.
pub fn stack_channels(stat: &Tensor<f64>) -> Result<Tensor<f64>> {
    let delta = compute_deltas(stat, DELTA_WINDOW)?;
    let delta2 = compute_deltas(&delta, DELTA_WINDOW)?;
    let (b, f) = (stat.dim(0), stat.dim(1));
    let data = [stat.data(), delta.data(), delta2.data()].concat();
    Tensor::new(vec![CHANNELS, b, f], data)
}

/// Per-(channel, band) mean and standard deviation over a training set.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizationStats {
    pub mean: Tensor<f64>,
    pub std: Tensor<f64>,
}

impl NormalizationStats {
    pub fn bands(&self) -> usize {
        self.mean.dim(1)
    }

    pub fn channels(&self) -> usize {
        self.mean.dim(0)
    }

    pub fn identity(channels: usize, bands: usize) -> Self {
        NormalizationStats {
            mean: Tensor::zeros(&[channels, bands]),
            std: Tensor::full(&[channels, bands], 1.0),
        }
    }

    fn check(&self, x: &Tensor<f64>) -> Result<()> {
        if x.rank() != 3 || x.shape()[..2] != self.mean.shape()[..] {
            return Err(shape_err!(
                "features {:?} do not match statistics for {:?}",
                x.shape(),
                self.mean.shape()
            ));
        }
        Ok(())
    }

    pub fn normalize(&self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        self.check(x)?;
        let f = x.dim(2);
        let mut out = x.clone();
        for (dim, row) in out.data_mut().chunks_exact_mut(f).enumerate() {
            let (m, s) = (self.mean.data()[dim], self.std.data()[dim]);
            row.iter_mut().for_each(|v| *v = (*v - m) / s);
        }
        Ok(out)
    }

    pub fn denormalize(&self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        self.check(x)?;
        let f = x.dim(2);
        let mut out = x.clone();
        for (dim, row) in out.data_mut().chunks_exact_mut(f).enumerate() {
            let (m, s) = (self.mean.data()[dim], self.std.data()[dim]);
            row.iter_mut().for_each(|v| *v = *v * s + m);
        }
        Ok(out)
    }

    /// Two concatenated `TNSR` tensors: means then standard deviations.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = self.mean.encode();
        self.std.encode_into(&mut out);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<(Self, usize)> {
        let (mean, a) = Tensor::<f64>::decode_exact(bytes)?;
        let (std, b) = Tensor::<f64>::decode_exact(&bytes[a..])?;
        if mean.rank() != 2 || mean.shape() != std.shape() {
            return Err(Error::Format(format!(
                "statistics shapes {:?} / {:?}",
                mean.shape(),
                std.shape()
            )));
        }
        Ok((NormalizationStats { mean, std }, a + b))
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::decode(&bytes)?.0)
    }
}

/// Streaming (Welford) mean and variance per dimension.
#[derive(Clone, Debug)]
pub struct StatsAccumulator {
    shape: [usize; 2],
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl StatsAccumulator {
    pub fn new(channels: usize, bands: usize) -> Self {
        StatsAccumulator {
            shape: [channels, bands],
            count: 0,
            mean: vec![0.0; channels * bands],
            m2: vec![0.0; channels * bands],
        }
    }

    /// Adds every frame of a `[channels × bands × frames]` tensor.
    pub fn push(&mut self, x: &Tensor<f64>) -> Result<()> {
        if x.rank() != 3 || x.shape()[..2] != self.shape {
            return Err(shape_err!(
                "features {:?} do not match {:?}",
                x.shape(),
                self.shape
            ));
        }
        let f = x.dim(2);
        let d = x.data();
        for t in 0..f {
            self.count += 1;
            let n = self.count as f64;
            for dim in 0..self.mean.len() {
                let v = d[dim * f + t];
                let delta = v - self.mean[dim];
                self.mean[dim] += delta / n;
                self.m2[dim] += delta * (v - self.mean[dim]);
            }
        }
        Ok(())
    }

    pub fn frames(&self) -> u64 {
        self.count
    }

    pub fn finish(&self) -> Result<NormalizationStats> {
        if self.count < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 training frames, have {}",
                self.count
            )));
        }
        let n = self.count as f64;
        let std = self
            .m2
            .iter()
            .map(|&m2| (m2 / n).max(VARIANCE_FLOOR).sqrt())
            .collect();
        Ok(NormalizationStats {
            mean: Tensor::new(self.shape.to_vec(), self.mean.clone())?,
            std: Tensor::new(self.shape.to_vec(), std)?,
        })
    }
}

/// Fits statistics over the stacked static/Δ/ΔΔ features of every utterance.
pub fn fit_normalization<'a, I>(statics: I) -> Result<NormalizationStats>
where
    I: IntoIterator<Item = &'a Tensor<f64>>,
{
    let mut acc: Option<StatsAccumulator> = None;
    for stat in statics {
        let stacked = stack_channels(stat)?;
        acc.get_or_insert_with(|| StatsAccumulator::new(CHANNELS, stat.dim(0)))
            .push(&stacked)?;
    }
    acc.ok_or_else(|| Error::InvalidArgument("no training utterances".into()))?
        .finish()
}

/// Normalized `[3 × bands × frames]` network input at precision `S`.
pub fn assemble_input<S: Scalar>(
    stat: &Tensor<f64>,
    stats: &NormalizationStats,
) -> Result<Tensor<S>> {
    if stat.rank() != 2 || stat.dim(0) != stats.bands() {
        return Err(shape_err!(
            "static features {:?} have a different band count than the statistics ({})",
            stat.shape(),
            stats.bands()
        ));
    }
    Ok(stats.normalize(&stack_channels(stat)?)?.cast())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(b: usize, f: usize) -> Tensor<f64> {
        Tensor::from_fn(&[b, f], |i| (i % f) as f64)
    }

    #[test]
    fn constant_has_zero_deltas() {
        let x = Tensor::full(&[2, 7], 3.5);
        assert!(compute_deltas(&x, 2)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn ramp_interior_delta_is_one() {
        let d = compute_deltas(&ramp(1, 9), 2).unwrap();
        for t in 2..7 {
            assert_eq!(d.data()[t], 1.0);
        }
    }

    #[test]
    fn single_frame_has_zero_deltas() {
        let x = Tensor::new(vec![3, 1], vec![1.0, -2.0, 5.0]).unwrap();
        assert!(compute_deltas(&x, 2)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
        assert!(compute_deltas(&x, 0).is_err());
    }

    fn toy_set() -> Vec<Tensor<f64>> {
        vec![
            Tensor::from_fn(&[4, 5], |i| ((i * 7) % 11) as f64 * 0.3 - 1.0),
            Tensor::from_fn(&[4, 3], |i| ((i * 5) % 7) as f64 * 0.9 + 2.0),
        ]
    }

    #[test]
    fn streaming_matches_two_pass() {
        let set = toy_set();
        let stats = fit_normalization(&set).unwrap();
        let stacked: Vec<Tensor<f64>> = set.iter().map(|s| stack_channels(s).unwrap()).collect();
        for dim in 0..CHANNELS * 4 {
            let vals: Vec<f64> = stacked
                .iter()
                .flat_map(|x| {
                    let f = x.dim(2);
                    x.data()[dim * f..(dim + 1) * f].to_vec()
                })
                .collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!((stats.mean.data()[dim] - mean).abs() < 1e-12);
            assert!((stats.std.data()[dim] - var.max(VARIANCE_FLOOR).sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn normalized_training_set_is_standard() {
        let set = toy_set();
        let stats = fit_normalization(&set).unwrap();
        let mut acc = StatsAccumulator::new(CHANNELS, 4);
        for s in &set {
            acc.push(&assemble_input::<f64>(s, &stats).unwrap())
                .unwrap();
        }
        let refit = acc.finish().unwrap();
        for (&m, &s) in refit.mean.data().iter().zip(refit.std.data()) {
            assert!(m.abs() <= 1e-6);
            // Constant dimensions are floored and normalize to zero.
            assert!(
                (s - 1.0).abs() <= 1e-6 || s == VARIANCE_FLOOR.sqrt(),
                "std {s}"
            );
        }
    }

    #[test]
    fn constant_dimension_is_floored() {
        let set = vec![Tensor::full(&[2, 6], 4.0)];
        let stats = fit_normalization(&set).unwrap();
        assert!(stats.std.data().iter().all(|&s| s == VARIANCE_FLOOR.sqrt()));
        let x = assemble_input::<f64>(&set[0], &stats).unwrap();
        assert!(x.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fitting_requires_data() {
        assert!(fit_normalization(std::iter::empty()).is_err());
        let one = vec![Tensor::full(&[2, 1], 1.0)];
        assert!(fit_normalization(&one).is_err());
    }

    #[test]
    fn band_mismatch_rejected() {
        let stats = NormalizationStats::identity(3, 41);
        assert!(assemble_input::<f32>(&Tensor::zeros(&[40, 5]), &stats).is_err());
        let x = assemble_input::<f32>(&Tensor::zeros(&[41, 5]), &stats).unwrap();
        assert_eq!(x.shape(), &[3, 41, 5]);
    }

    #[test]
    fn stats_encoding_roundtrip() {
        let stats = fit_normalization(&toy_set()).unwrap();
        let (back, used) = NormalizationStats::decode(&stats.encode()).unwrap();
        assert_eq!(used, stats.encode().len());
        assert_eq!(back, stats);
    }

    proptest! {
        #[test]
        fn deltas_are_linear(
            x in proptest::collection::vec(-4i32..4, 12),
            y in proptest::collection::vec(-4i32..4, 12),
            a in -3i32..3,
            b in -3i32..3,
        ) {
            // Multiples of 10 keep every intermediate, including the division by
            // 2·Σn² = 10, exactly representable.
            let tx = Tensor::new(vec![2, 6], x.iter().map(|&v| v as f64 * 10.0).collect()).unwrap();
            let ty = Tensor::new(vec![2, 6], y.iter().map(|&v| v as f64 * 10.0).collect()).unwrap();
            let comb = Tensor::from_fn(&[2, 6], |i| a as f64 * tx.data()[i] + b as f64 * ty.data()[i]);
            let lhs = compute_deltas(&comb, 2).unwrap();
            let dx = compute_deltas(&tx, 2).unwrap();
            let dy = compute_deltas(&ty, 2).unwrap();
            for i in 0..12 {
                prop_assert_eq!(lhs.data()[i], a as f64 * dx.data()[i] + b as f64 * dy.data()[i]);
            }
        }

        #[test]
        fn normalize_roundtrip(vals in proptest::collection::vec(-100.0f64..100.0, 24), f in 1usize..5) {
            let x = Tensor::new(vec![3, 2, 4], vals).unwrap();
            let stats = NormalizationStats {
                mean: Tensor::from_fn(&[3, 2], |i| i as f64 - 2.5),
                std: Tensor::from_fn(&[3, 2], |i| 0.1 + i as f64),
            };
            let back = stats.denormalize(&stats.normalize(&x).unwrap()).unwrap();
            for (a, b) in back.data().iter().zip(x.data()) {
                prop_assert!((a - b).abs() <= 1e-10);
            }
            let s = assemble_input::<f32>(&Tensor::zeros(&[2, f]), &stats).unwrap();
            prop_assert_eq!(s.shape(), &[3, 2, f][..]);
        }
    }
}
