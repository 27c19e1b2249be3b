//! Self-contained, seeded verification suites: finite-difference gradient
//! checks, CTC against path enumeration, and shape preservation sweeps.

use std::fmt;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::{InputGeometry, LayerConfig, NetworkConfig};
use crate::ctc::{ctc_grad, ctc_loss, enumerate_oracle};
use crate::error::Result;
use crate::layers::activation::{maxout_backward, prelu_backward, ActivationKind};
use crate::layers::conv::{ConvGrads, ConvTape};
use crate::layers::{
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, log_softmax_backward,
    log_softmax_frames, maxout, maxpool_freq, maxpool_freq_backward, prelu, ConvSpec, DenseSpec,
    Mode, Network, Padding, PoolSpec,
};
use crate::optim::init_uniform;
use crate::params::Parameters;
use crate::tensor::{reduce_logsumexp, Tensor};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-6;
/// Largest accepted relative error between analytic and numeric gradients.
pub const GRAD_TOLERANCE: f64 = 1e-4;
/// Denominator floor of the relative error. Central differences at `FD_STEP`
/// carry about 1e-9 of rounding noise on losses of order 10, so gradients
/// smaller than this are effectively compared absolutely.
pub const GRAD_FLOOR: f64 = 1e-6;
/// Largest accepted |loss + ln(oracle probability)|.
pub const ORACLE_TOLERANCE: f64 = 1e-9;
pub const ORACLE_INSTANCES: usize = 1000;

pub type ConvBackward = fn(&ConvTape<f64>, &Tensor<f64>, &Tensor<f64>) -> Result<ConvGrads<f64>>;

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteReport {
    pub suite: String,
    pub cases: usize,
    pub checks: usize,
    pub tolerance: f64,
    pub max_error: f64,
    pub worst: String,
    /// First few failing checks, for diagnostics.
    pub failures: Vec<String>,
    pub failed: usize,
}

const KEPT_FAILURES: usize = 10;

impl SuiteReport {
    fn new(suite: &str, tolerance: f64) -> Self {
        SuiteReport {
            suite: suite.to_string(),
            cases: 0,
            checks: 0,
            tolerance,
            max_error: 0.0,
            worst: String::new(),
            failures: Vec::new(),
            failed: 0,
        }
    }

    pub fn passed(&self) -> bool {
        self.failed == 0 && self.checks > 0
    }

    fn record(&mut self, error: f64, what: impl FnOnce() -> String) {
        self.checks += 1;
        let bad = !(error <= self.tolerance);
        if error > self.max_error || error.is_nan() {
            self.max_error = if error.is_nan() { f64::INFINITY } else { error };
            self.worst = what();
            if bad {
                self.push_failure(self.worst.clone());
            }
        } else if bad {
            self.push_failure(what());
        }
    }

    fn fail(&mut self, msg: String) {
        self.checks += 1;
        self.push_failure(msg);
    }

    fn push_failure(&mut self, msg: String) {
        self.failed += 1;
        if self.failures.len() < KEPT_FAILURES {
            self.failures.push(msg);
        }
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} ({} cases, {} checks, max error {:.3e}, tolerance {:.0e})",
            self.suite,
            if self.passed() { "PASS" } else { "FAIL" },
            self.cases,
            self.checks,
            self.max_error,
            self.tolerance
        )?;
        if !self.worst.is_empty() {
            write!(f, "\n  worst: {}", self.worst)?;
        }
        for failure in &self.failures {
            write!(f, "\n  failed: {failure}")?;
        }
        if self.failed > self.failures.len() {
            write!(
                f,
                "\n  ... {} more failures",
                self.failed - self.failures.len()
            )?;
        }
        Ok(())
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

/// Central difference of `f` along coordinate `i` of `x`.
pub fn central_difference(
    x: &mut [f64],
    i: usize,
    mut f: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<f64> {
    let orig = x[i];
    x[i] = orig + FD_STEP;
    let plus = f(x)?;
    x[i] = orig - FD_STEP;
    let minus = f(x)?;
    x[i] = orig;
    Ok((plus - minus) / (2.0 * FD_STEP))
}

/// Compares `analytic` against central differences of `f` at every coordinate.
pub fn check_gradient(
    report: &mut SuiteReport,
    label: &str,
    x: &[f64],
    analytic: &[f64],
    mut f: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<()> {
    let mut x = x.to_vec();
    for (i, &a) in analytic.iter().enumerate() {
        let n = central_difference(&mut x, i, &mut f)?;
        report.record(relative_error(a, n), || {
            format!("{label}[{i}]: analytic {a:.9e}, numeric {n:.9e}")
        });
    }
    Ok(())
}

fn gaussian_tensor(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let d = Normal::new(0.0, std).expect("positive std");
    Tensor::from_fn(shape, |_| d.sample(rng))
}

fn weighted_sum(y: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

fn with_data(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data.to_vec()).expect("shape preserved")
}

/// The gradient suite with the shipped convolution backward.
pub fn gradcheck_suite(seed: u64) -> Result<SuiteReport> {
    gradcheck_suite_with(seed, conv2d_backward::<f64>)
}

/// The gradient suite with a caller-supplied convolution backward, so a
/// faulty implementation can be shown to fail.
pub fn gradcheck_suite_with(seed: u64, conv_backward: ConvBackward) -> Result<SuiteReport> {
    let mut report = SuiteReport::new("gradcheck", GRAD_TOLERANCE);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    check_ctc(&mut report, &mut rng, 40)?;
    check_conv_layer(&mut report, &mut rng, conv_backward)?;
    check_other_layers(&mut report, &mut rng)?;
    for (name, config) in toy_networks() {
        check_network(&mut report, &mut rng, &name, config, conv_backward)?;
    }
    Ok(report)
}

fn random_target(
    rng: &mut ChaCha8Rng,
    symbols: usize,
    max_len: usize,
    frames: usize,
) -> Vec<usize> {
    loop {
        let len = rng.gen_range(0..=max_len);
        let target: Vec<usize> = (0..len).map(|_| rng.gen_range(1..symbols)).collect();
        let repeats = target.windows(2).filter(|w| w[0] == w[1]).count();
        if target.len() + repeats <= frames {
            return target;
        }
    }
}

fn check_ctc(report: &mut SuiteReport, rng: &mut ChaCha8Rng, instances: usize) -> Result<()> {
    for case in 0..instances {
        let a = rng.gen_range(2..=5);
        let t = rng.gen_range(1..=8);
        let target = random_target(rng, a, 4, t);
        let logits = gaussian_tensor(&[a, t], 1.5, rng);
        let lp = log_softmax_frames(&logits)?;
        let out = ctc_loss(&lp, &target)?;
        let analytic = ctc_grad(&out.lattice, &lp)?;
        check_gradient(
            report,
            &format!("ctc#{case} A={a} T={t} z={target:?}"),
            logits.data(),
            analytic.data(),
            |z| Ok(ctc_loss(&log_softmax_frames(&with_data(&[a, t], z))?, &target)?.loss),
        )?;
        report.cases += 1;
    }
    Ok(())
}

fn check_conv_layer(
    report: &mut SuiteReport,
    rng: &mut ChaCha8Rng,
    backward: ConvBackward,
) -> Result<()> {
    let specs = [
        ConvSpec::same(2, 3, 3, 5),
        ConvSpec {
            in_channels: 3,
            out_maps: 2,
            filter_freq: 2,
            filter_time: 4,
            freq_padding: Padding::Valid,
            time_padding: Padding::Same,
        },
    ];
    for (case, spec) in specs.iter().enumerate() {
        let x = gaussian_tensor(&[spec.in_channels, 6, 7], 1.0, rng);
        let w = gaussian_tensor(&spec.weight_shape(), 0.5, rng);
        let b = gaussian_tensor(&[spec.out_maps], 0.5, rng);
        let (y, tape) = conv2d_forward(&x, spec, &w, &b)?;
        let r = gaussian_tensor(y.shape(), 1.0, rng);
        let grads = backward(&tape, &w, &r)?;
        let label = format!("conv#{case}");
        check_gradient(
            report,
            &format!("{label}.input"),
            x.data(),
            grads.input.data(),
            |v| {
                Ok(weighted_sum(
                    &conv2d_forward(&with_data(x.shape(), v), spec, &w, &b)?.0,
                    &r,
                ))
            },
        )?;
        check_gradient(
            report,
            &format!("{label}.weight"),
            w.data(),
            grads.weights.data(),
            |v| {
                Ok(weighted_sum(
                    &conv2d_forward(&x, spec, &with_data(w.shape(), v), &b)?.0,
                    &r,
                ))
            },
        )?;
        check_gradient(
            report,
            &format!("{label}.bias"),
            b.data(),
            grads.biases.data(),
            |v| {
                Ok(weighted_sum(
                    &conv2d_forward(&x, spec, &w, &with_data(b.shape(), v))?.0,
                    &r,
                ))
            },
        )?;
        report.cases += 1;
    }
    Ok(())
}

fn check_other_layers(report: &mut SuiteReport, rng: &mut ChaCha8Rng) -> Result<()> {
    // Dense.
    let spec = DenseSpec {
        in_width: 5,
        out_width: 4,
    };
    let x = gaussian_tensor(&[5, 3], 1.0, rng);
    let w = gaussian_tensor(&spec.weight_shape(), 0.5, rng);
    let b = gaussian_tensor(&[4], 0.5, rng);
    let (y, tape) = dense_forward(&x, &spec, &w, &b)?;
    let r = gaussian_tensor(y.shape(), 1.0, rng);
    let g = dense_backward(&tape, &w, &r)?;
    check_gradient(report, "dense.input", x.data(), g.input.data(), |v| {
        Ok(weighted_sum(
            &dense_forward(&with_data(x.shape(), v), &spec, &w, &b)?.0,
            &r,
        ))
    })?;
    check_gradient(report, "dense.weight", w.data(), g.weights.data(), |v| {
        Ok(weighted_sum(
            &dense_forward(&x, &spec, &with_data(w.shape(), v), &b)?.0,
            &r,
        ))
    })?;
    check_gradient(report, "dense.bias", b.data(), g.biases.data(), |v| {
        Ok(weighted_sum(
            &dense_forward(&x, &spec, &w, &with_data(b.shape(), v))?.0,
            &r,
        ))
    })?;
    report.cases += 1;

    // Frequency max pooling.
    let pool = PoolSpec { size: 3, step: 2 };
    let x = gaussian_tensor(&[2, 9, 4], 1.0, rng);
    let (y, tape) = maxpool_freq(&x, &pool)?;
    let r = gaussian_tensor(y.shape(), 1.0, rng);
    let g = maxpool_freq_backward(&tape, &r)?;
    check_gradient(report, "pool.input", x.data(), g.data(), |v| {
        Ok(weighted_sum(
            &maxpool_freq(&with_data(x.shape(), v), &pool)?.0,
            &r,
        ))
    })?;
    report.cases += 1;

    // Maxout over three pieces.
    let x = gaussian_tensor(&[6, 2, 3], 1.0, rng);
    let (y, tape) = maxout(&x, 3)?;
    let r = gaussian_tensor(y.shape(), 1.0, rng);
    let g = maxout_backward(&tape, &r)?;
    check_gradient(report, "maxout.input", x.data(), g.data(), |v| {
        Ok(weighted_sum(&maxout(&with_data(x.shape(), v), 3)?.0, &r))
    })?;
    report.cases += 1;

    // PReLU, input and slopes.
    let x = gaussian_tensor(&[3, 2, 4], 1.0, rng);
    let alpha: Vec<f64> = (0..3).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let (y, tape) = prelu(&x, &alpha)?;
    let r = gaussian_tensor(y.shape(), 1.0, rng);
    let (gx, galpha) = prelu_backward(&tape, &r)?;
    check_gradient(report, "prelu.input", x.data(), gx.data(), |v| {
        Ok(weighted_sum(
            &prelu(&with_data(x.shape(), v), &alpha)?.0,
            &r,
        ))
    })?;
    check_gradient(report, "prelu.alpha", &alpha, &galpha, |v| {
        Ok(weighted_sum(&prelu(&x, v)?.0, &r))
    })?;
    report.cases += 1;

    // Per-frame log-softmax.
    let z = gaussian_tensor(&[4, 3], 1.0, rng);
    let lp = log_softmax_frames(&z)?;
    let r = gaussian_tensor(lp.shape(), 1.0, rng);
    let g = log_softmax_backward(&lp, &r)?;
    check_gradient(report, "log_softmax.input", z.data(), g.data(), |v| {
        Ok(weighted_sum(
            &log_softmax_frames(&with_data(z.shape(), v))?,
            &r,
        ))
    })?;
    report.cases += 1;
    Ok(())
}

/// Two maxout convolutions and one dense output layer on `3 × 9 × 12`.
pub fn toy_network() -> NetworkConfig {
    NetworkConfig {
        input: InputGeometry {
            channels: 3,
            bands: 9,
        },
        alphabet_size: 4,
        layers: vec![
            LayerConfig::conv(4, 3, 5, ActivationKind::Maxout),
            LayerConfig::conv(3, 3, 5, ActivationKind::Maxout),
            LayerConfig::dense(4, ActivationKind::Linear),
        ],
    }
}

fn toy_networks() -> Vec<(String, NetworkConfig)> {
    let mut prelu_conv = LayerConfig::conv(3, 2, 3, ActivationKind::Prelu);
    if let LayerConfig::Conv(c) = &mut prelu_conv {
        c.freq_padding = Padding::Valid;
    }
    let mut maxout3 = LayerConfig::dense(3, ActivationKind::Maxout);
    if let LayerConfig::Dense(d) = &mut maxout3 {
        d.pieces = 3;
    }
    vec![
        ("toy(2 conv maxout + dense)".to_string(), toy_network()),
        (
            "prelu/pool/relu/dropout".to_string(),
            NetworkConfig {
                input: InputGeometry {
                    channels: 3,
                    bands: 9,
                },
                alphabet_size: 3,
                layers: vec![
                    prelu_conv,
                    LayerConfig::pool(2, 2),
                    LayerConfig::dropout(0.3),
                    LayerConfig::conv(2, 3, 3, ActivationKind::Relu),
                    LayerConfig::dense(5, ActivationKind::Prelu),
                    LayerConfig::dropout(0.2),
                    maxout3,
                    LayerConfig::dense(3, ActivationKind::Linear),
                ],
            },
        ),
    ]
}

/// Checks every parameter of `config` on a random input and target. Dropout
/// masks are fixed by reseeding the same generator for every evaluation.
fn check_network(
    report: &mut SuiteReport,
    rng: &mut ChaCha8Rng,
    name: &str,
    config: NetworkConfig,
    conv_backward: ConvBackward,
) -> Result<()> {
    let frames = 12;
    let network = Network::new(config)?;
    let a = network.alphabet_size();
    let mut params: Parameters<f64> = init_uniform(network.param_specs(), rng, -0.5, 0.5)?;
    for p in params.iter_mut() {
        if p.class != crate::params::ParamClass::Weight {
            let d = Normal::new(0.0, 0.3).expect("std");
            for v in p.tensor.data_mut() {
                *v += d.sample(rng);
            }
        }
    }
    let input = network.config().input;
    let x = gaussian_tensor(&[input.channels, input.bands, frames], 1.0, rng);
    let target = random_target(rng, a, 4, frames);
    let mask_seed = rng.next_u64();

    let loss = |params: &Parameters<f64>| -> Result<f64> {
        let mut mask = ChaCha8Rng::seed_from_u64(mask_seed);
        let (lp, _) = network.forward(params, &x, Mode::Train(&mut mask))?;
        Ok(ctc_loss(&lp, &target)?.loss)
    };
    let mut mask = ChaCha8Rng::seed_from_u64(mask_seed);
    let (lp, tape) = network.forward(&params, &x, Mode::Train(&mut mask))?;
    let out = ctc_loss(&lp, &target)?;
    let g = crate::ctc::ctc_grad_log_probs(&out.lattice, &lp)?;
    let grads = network.backward_with(&params, &tape, &g, conv_backward)?;

    for index in 0..params.len() {
        let pname = params
            .iter()
            .nth(index)
            .map(|p| p.name.clone())
            .unwrap_or_default();
        let analytic = grads.tensor(index).data().to_vec();
        let mut probe = params.clone();
        for (i, &an) in analytic.iter().enumerate() {
            let orig = probe.tensor(index).data()[i];
            probe.tensor_mut(index).data_mut()[i] = orig + FD_STEP;
            let plus = loss(&probe)?;
            probe.tensor_mut(index).data_mut()[i] = orig - FD_STEP;
            let minus = loss(&probe)?;
            probe.tensor_mut(index).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            report.record(relative_error(an, numeric), || {
                format!("{name} {pname}[{i}]: analytic {an:.9e}, numeric {numeric:.9e}")
            });
        }
    }
    report.cases += 1;
    Ok(())
}

/// CTC loss against brute-force path enumeration on random small instances,
/// plus the per-frame forward-backward consistency of every lattice.
pub fn ctc_oracle_suite(seed: u64, instances: usize) -> Result<SuiteReport> {
    let mut report = SuiteReport::new("ctc-oracle", ORACLE_TOLERANCE);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut infeasible = 0usize;
    while report.cases < instances {
        let a = rng.gen_range(2..=3);
        let t = rng.gen_range(1..=8);
        let len = rng.gen_range(0..=4);
        let target: Vec<usize> = (0..len).map(|_| rng.gen_range(1..a)).collect();
        let logits = gaussian_tensor(&[a, t], 1.5, &mut rng);
        let lp = log_softmax_frames(&logits)?;
        let out = ctc_loss(&lp, &target)?;
        let p = enumerate_oracle(&lp, &target)?;
        let what = || format!("A={a} T={t} z={target:?}");
        if p == 0.0 {
            infeasible += 1;
            if !(out.infeasible && out.loss == f64::INFINITY) {
                report.fail(format!(
                    "{}: oracle says infeasible, loss {}",
                    what(),
                    out.loss
                ));
            }
            continue;
        }
        let expected = -p.ln();
        report.record((out.loss - expected).abs(), || {
            format!(
                "{}: loss {:.15e}, oracle {:.15e}",
                what(),
                out.loss,
                expected
            )
        });
        let ll = out.lattice.log_likelihood();
        for frame in 0..t {
            let terms: Vec<f64> = (0..out.lattice.states())
                .map(|s| out.lattice.alpha(s, frame) + out.lattice.beta(s, frame))
                .collect();
            let total = reduce_logsumexp(&terms)?;
            report.record((total - ll).abs(), || {
                format!(
                    "{}: forward-backward total at t={frame} off by {:.3e}",
                    what(),
                    total - ll
                )
            });
        }
        report.cases += 1;
    }
    if infeasible > 0 {
        report
            .worst
            .push_str(&format!(" ({infeasible} infeasible instances also agreed)"));
    }
    Ok(report)
}

/// Output extents of the default network for the given frame counts, plus
/// time-extent preservation at every layer of a narrowed copy of it.
pub fn shapes_suite(seed: u64, frames: &[usize], random_lengths: usize) -> Result<SuiteReport> {
    let mut report = SuiteReport::new("shapes", 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = NetworkConfig::standard();
    let network = Network::new(config.clone())?;
    let a = network.alphabet_size();
    let pooled = network.band_trace().get(1).and_then(|&(_, b)| b);
    report.record(if pooled == Some(13) { 0.0 } else { 1.0 }, || {
        format!("bands after layer 1: {pooled:?} (want 13)")
    });
    let params: Parameters<f32> = init_uniform(network.param_specs(), &mut rng, -0.05, 0.05)?;
    let geom = config.input;
    for &f in frames {
        let x = Tensor::<f32>::from_fn(&[geom.channels, geom.bands, f], |i| {
            ((i % 17) as f32 - 8.0) / 8.0
        });
        let lp = network.predict(&params, &x)?;
        let ok = lp.shape() == [a, f];
        report.record(if ok { 0.0 } else { 1.0 }, || {
            format!(
                "default network on 3x41x{f}: emitted {:?}, want [{a}, {f}]",
                lp.shape()
            )
        });
        report.cases += 1;
    }

    let narrow = narrowed(&config);
    let network = Network::new(narrow)?;
    let params: Parameters<f32> = init_uniform(network.param_specs(), &mut rng, -0.05, 0.05)?;
    for _ in 0..random_lengths {
        let f = rng.gen_range(1..=200);
        let x = Tensor::<f32>::from_fn(&[geom.channels, geom.bands, f], |_| {
            rng.gen_range(-1.0..1.0)
        });
        for (layer, shape) in network.trace_shapes(&params, &x)?.iter().enumerate() {
            let ok = shape.last() == Some(&f);
            report.record(if ok { 0.0 } else { 1.0 }, || {
                format!("layer {layer} on f={f}: output {shape:?}")
            });
        }
        report.cases += 1;
    }
    Ok(report)
}

/// Same layer sequence, filters and pooling as `config`, with every layer
/// shrunk to a few maps or units.
fn narrowed(config: &NetworkConfig) -> NetworkConfig {
    let mut out = config.clone();
    let last = out.layers.len() - 1;
    for (i, layer) in out.layers.iter_mut().enumerate() {
        match layer {
            LayerConfig::Conv(c) => c.maps = c.maps.min(4),
            LayerConfig::Dense(d) if i != last => d.units = d.units.min(8),
            _ => {}
        }
    }
    out
}
