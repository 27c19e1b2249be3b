//! Parameter initialization and the two optimizer stages: Adam, then plain
//! SGD with a coupled L2 penalty on weights.

use rand::distributions::{Distribution, Uniform};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::activation::PRELU_INIT_SLOPE;
use crate::params::{Param, ParamClass, ParamSpec, Parameters};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const INIT_RANGE: f64 = 0.05;
pub const ADAM_LR: f64 = 1e-4;
pub const SGD_LR: f64 = 1e-5;
pub const FINE_TUNE_L2: f64 = 1e-5;

/// Weights i.i.d. uniform on `[lo, hi]`, biases zero, PReLU slopes 0.1.
pub fn init_uniform<S: Scalar, R: Rng + ?Sized>(
    specs: &[ParamSpec],
    rng: &mut R,
    lo: f64,
    hi: f64,
) -> Result<Parameters<S>> {
    if !(lo < hi) {
        return Err(Error::InvalidArgument(format!(
            "empty init interval [{lo}, {hi}]"
        )));
    }
    let dist = Uniform::new_inclusive(lo, hi);
    let params = specs
        .iter()
        .map(|s| {
            let tensor = match s.class {
                ParamClass::Weight => Tensor::from_fn(&s.shape, |_| S::lit(dist.sample(rng))),
                ParamClass::Bias => Tensor::zeros(&s.shape),
                ParamClass::Slope => Tensor::full(&s.shape, S::lit(PRELU_INIT_SLOPE)),
            };
            Param {
                name: s.name.clone(),
                class: s.class,
                tensor,
            }
        })
        .collect();
    Ok(Parameters::new(params))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Adam,
    Sgd,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Adam => "adam",
            Stage::Sgd => "sgd",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Coupled L2 coefficient, applied to weights only.
    pub l2: f64,
    /// Optional global-norm gradient clip.
    pub clip_norm: Option<f64>,
}

impl Hyperparams {
    pub fn adam() -> Self {
        Hyperparams {
            lr: ADAM_LR,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            l2: 0.0,
            clip_norm: None,
        }
    }

    pub fn sgd() -> Self {
        Hyperparams {
            lr: SGD_LR,
            l2: FINE_TUNE_L2,
            ..Self::adam()
        }
    }

    pub fn for_stage(stage: Stage) -> Self {
        match stage {
            Stage::Adam => Self::adam(),
            Stage::Sgd => Self::sgd(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<S> {
    pub stage: Stage,
    pub hyper: Hyperparams,
    pub step: u64,
    /// Adam first moments; empty for SGD.
    pub first: Parameters<S>,
    /// Adam second moments; empty for SGD.
    pub second: Parameters<S>,
}

impl<S: Scalar> OptimizerState<S> {
    pub fn new(stage: Stage, hyper: Hyperparams, params: &Parameters<S>) -> Self {
        let (first, second) = match stage {
            Stage::Adam => (params.zeros_like(), params.zeros_like()),
            Stage::Sgd => (Parameters::default(), Parameters::default()),
        };
        OptimizerState {
            stage,
            hyper,
            step: 0,
            first,
            second,
        }
    }

    pub fn apply(&mut self, params: &mut Parameters<S>, grads: &Parameters<S>) -> Result<()> {
        match self.stage {
            Stage::Adam => adam_step(params, grads, self),
            Stage::Sgd => sgd_step(params, grads, self),
        }
    }
}

fn l2_term<S: Scalar>(class: ParamClass, l2: S, p: S) -> S {
    match class {
        ParamClass::Weight => l2 * p,
        ParamClass::Bias | ParamClass::Slope => S::zero(),
    }
}

fn clip_factor<S: Scalar>(grads: &Parameters<S>, clip: Option<f64>) -> S {
    match clip {
        Some(max) => {
            let norm = grads.global_norm().as_f64();
            if norm > max && norm > 0.0 {
                S::lit(max / norm)
            } else {
                S::one()
            }
        }
        None => S::one(),
    }
}

/// Bias-corrected Adam. `state.step` is incremented before the correction.
pub fn adam_step<S: Scalar>(
    params: &mut Parameters<S>,
    grads: &Parameters<S>,
    state: &mut OptimizerState<S>,
) -> Result<()> {
    params.check_compatible(grads)?;
    params.check_compatible(&state.first)?;
    params.check_compatible(&state.second)?;
    state.step += 1;
    let h = state.hyper;
    let t = state.step as i32;
    let c1 = S::lit(1.0 - h.beta1.powi(t));
    let c2 = S::lit(1.0 - h.beta2.powi(t));
    let (b1, b2) = (S::lit(h.beta1), S::lit(h.beta2));
    let (lr, eps, l2) = (S::lit(h.lr), S::lit(h.eps), S::lit(h.l2));
    let scale = clip_factor(grads, h.clip_norm);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads.iter())
        .zip(state.first.iter_mut())
        .zip(state.second.iter_mut())
    {
        let class = p.class;
        let pd = p.tensor.data_mut();
        let md = m.tensor.data_mut();
        let vd = v.tensor.data_mut();
        for i in 0..pd.len() {
            let gi = g.tensor.data()[i] * scale + l2_term(class, l2, pd[i]);
            md[i] = b1 * md[i] + (S::one() - b1) * gi;
            vd[i] = b2 * vd[i] + (S::one() - b2) * gi * gi;
            let mhat = md[i] / c1;
            let vhat = vd[i] / c2;
            pd[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

/// `p ← p − lr·(g + l2·p)`, with the penalty on weights only.
pub fn sgd_step<S: Scalar>(
    params: &mut Parameters<S>,
    grads: &Parameters<S>,
    state: &mut OptimizerState<S>,
) -> Result<()> {
    params.check_compatible(grads)?;
    state.step += 1;
    let lr = S::lit(state.hyper.lr);
    let l2 = S::lit(state.hyper.l2);
    let scale = clip_factor(grads, state.hyper.clip_norm);
    for (p, g) in params.iter_mut().zip(grads.iter()) {
        let class = p.class;
        for (pv, &gv) in p.tensor.data_mut().iter_mut().zip(g.tensor.data()) {
            *pv -= lr * (gv * scale + l2_term(class, l2, *pv));
        }
    }
    Ok(())
}
