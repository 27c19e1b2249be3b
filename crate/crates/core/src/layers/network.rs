//! Composition of the configured layer stack into per-frame log-probabilities,
//! and the matching reverse pass over the recorded tapes.

use rand::RngCore;

use super::activation::{
    maxout, maxout_backward, prelu, prelu_backward, relu, relu_backward, ActivationKind,
    MaxoutTape, PreluTape, ReluTape,
};
use super::conv::{conv2d_backward_opt, conv2d_forward, ConvGrads, ConvSpec, ConvTape, Padding};
use super::dense::{dense_backward, dense_forward, DenseSpec, DenseTape};
use super::dropout::{check_rate, dropout, dropout_backward, DropoutTape};
use super::pool::{maxpool_freq, maxpool_freq_backward, PoolSpec, PoolTape};
use super::softmax::{log_softmax_backward, log_softmax_frames};
use crate::config::{LayerConfig, NetworkConfig};
use crate::error::{shape_err, Error, Result};
use crate::params::{ParamClass, ParamSpec, Parameters};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Act {
    Linear,
    Relu,
    Prelu,
    Maxout(usize),
}

impl Act {
    fn new(kind: ActivationKind, pieces: usize) -> Result<Self> {
        Ok(match kind {
            ActivationKind::Linear => Act::Linear,
            ActivationKind::Relu => Act::Relu,
            ActivationKind::Prelu => Act::Prelu,
            ActivationKind::Maxout if (2..=255).contains(&pieces) => Act::Maxout(pieces),
            ActivationKind::Maxout => {
                return Err(Error::InvalidArgument(format!(
                    "maxout needs 2..=255 pieces, got {pieces}"
                )))
            }
        })
    }

    fn raw_width(self, maps: usize) -> usize {
        match self {
            Act::Maxout(p) => maps * p,
            _ => maps,
        }
    }
}

#[derive(Clone, Debug)]
enum Planned {
    Conv {
        spec: ConvSpec,
        act: Act,
        first_param: usize,
    },
    Pool(PoolSpec),
    Dense {
        spec: DenseSpec,
        act: Act,
        first_param: usize,
    },
    Dropout(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Geom {
    Spatial { maps: usize, bands: usize },
    Flat(usize),
}

impl Geom {
    fn width(self) -> usize {
        match self {
            Geom::Spatial { maps, bands } => maps * bands,
            Geom::Flat(w) => w,
        }
    }
}

/// How dropout layers behave during a forward pass.
pub enum Mode<'a> {
    Train(&'a mut dyn RngCore),
    Eval,
}

#[derive(Clone, Debug)]
pub enum ActTape<S> {
    Linear,
    Relu(ReluTape),
    Prelu(PreluTape<S>),
    Maxout(MaxoutTape),
}

/// Intermediates recorded by one layer during a forward pass.
#[derive(Clone, Debug)]
pub enum LayerTape<S> {
    Conv {
        conv: ConvTape<S>,
        act: ActTape<S>,
    },
    Pool(PoolTape),
    Dense {
        dense: DenseTape<S>,
        act: ActTape<S>,
        /// Shape of the spatial input that was flattened, if any.
        unflattened: Option<Vec<usize>>,
    },
    Dropout(DropoutTape<S>),
}

/// Everything [`Network::backward`] needs from one forward call.
#[derive(Clone, Debug)]
pub struct NetworkTape<S> {
    layers: Vec<LayerTape<S>>,
    log_probs: Tensor<S>,
    last_shape: Vec<usize>,
}

impl<S> NetworkTape<S> {
    pub fn log_probs(&self) -> &Tensor<S> {
        &self.log_probs
    }
}

/// A validated layer stack. Parameters are held separately in [`Parameters`].
#[derive(Clone, Debug)]
pub struct Network {
    config: NetworkConfig,
    plan: Vec<Planned>,
    params: Vec<ParamSpec>,
}

impl Network {
    pub fn new(config: NetworkConfig) -> Result<Self> {
        if config.input.channels == 0 || config.input.bands == 0 {
            return Err(Error::InvalidArgument(
                "input geometry must be positive".into(),
            ));
        }
        if config.alphabet_size < 2 {
            return Err(Error::InvalidArgument(
                "alphabet needs blank plus one symbol".into(),
            ));
        }
        let mut geom = Geom::Spatial {
            maps: config.input.channels,
            bands: config.input.bands,
        };
        let mut plan = Vec::with_capacity(config.layers.len());
        let mut params = Vec::new();
        for (i, layer) in config.layers.iter().enumerate() {
            let planned =
                Self::plan_layer(i, layer, &mut geom, &mut params).map_err(|e| e.at_layer(i))?;
            plan.push(planned);
        }
        if geom.width() != config.alphabet_size {
            return Err(shape_err!(
                "network emits {} values per frame but the alphabet has {} symbols",
                geom.width(),
                config.alphabet_size
            ));
        }
        Ok(Network {
            config,
            plan,
            params,
        })
    }

    fn plan_layer(
        index: usize,
        layer: &LayerConfig,
        geom: &mut Geom,
        params: &mut Vec<ParamSpec>,
    ) -> Result<Planned> {
        let first_param = params.len();
        let mut push = |suffix: &str, class, shape: Vec<usize>| {
            params.push(ParamSpec {
                name: format!("layer{index:02}.{suffix}"),
                class,
                shape,
            });
        };
        Ok(match layer {
            LayerConfig::Conv(c) => {
                let Geom::Spatial { maps, bands } = *geom else {
                    return Err(shape_err!("convolution after a flattening dense layer"));
                };
                let act = Act::new(c.activation, c.pieces)?;
                let spec = ConvSpec {
                    in_channels: maps,
                    out_maps: act.raw_width(c.maps),
                    filter_freq: c.filter_freq,
                    filter_time: c.filter_time,
                    freq_padding: c.freq_padding,
                    time_padding: Padding::Same,
                };
                let (out_bands, _) = spec.output_extent(bands, 1)?;
                push("weight", ParamClass::Weight, spec.weight_shape().to_vec());
                push("bias", ParamClass::Bias, vec![spec.out_maps]);
                if act == Act::Prelu {
                    push("alpha", ParamClass::Slope, vec![c.maps]);
                }
                *geom = Geom::Spatial {
                    maps: c.maps,
                    bands: out_bands,
                };
                Planned::Conv {
                    spec,
                    act,
                    first_param,
                }
            }
            LayerConfig::Pool(p) => {
                let Geom::Spatial { maps, bands } = *geom else {
                    return Err(shape_err!("pooling after a flattening dense layer"));
                };
                let spec = PoolSpec {
                    size: p.size,
                    step: p.step,
                };
                *geom = Geom::Spatial {
                    maps,
                    bands: spec.output_bands(bands)?,
                };
                Planned::Pool(spec)
            }
            LayerConfig::Dense(d) => {
                if d.units == 0 {
                    return Err(shape_err!("dense layer with zero units"));
                }
                let act = Act::new(d.activation, d.pieces)?;
                let spec = DenseSpec {
                    in_width: geom.width(),
                    out_width: act.raw_width(d.units),
                };
                push("weight", ParamClass::Weight, spec.weight_shape().to_vec());
                push("bias", ParamClass::Bias, vec![spec.out_width]);
                if act == Act::Prelu {
                    push("alpha", ParamClass::Slope, vec![d.units]);
                }
                *geom = Geom::Flat(d.units);
                Planned::Dense {
                    spec,
                    act,
                    first_param,
                }
            }
            LayerConfig::Dropout(d) => {
                check_rate(d.rate)?;
                Planned::Dropout(d.rate)
            }
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn param_specs(&self) -> &[ParamSpec] {
        &self.params
    }

    pub fn alphabet_size(&self) -> usize {
        self.config.alphabet_size
    }

    pub fn check_params<S: Scalar>(&self, params: &Parameters<S>) -> Result<()> {
        let have = params.specs();
        if have != self.params {
            let detail = self
                .params
                .iter()
                .zip(&have)
                .find(|(a, b)| a != b)
                .map(|(a, b)| {
                    format!(
                        "expected {} {:?}, found {} {:?}",
                        a.name, a.shape, b.name, b.shape
                    )
                })
                .unwrap_or_else(|| {
                    format!(
                        "expected {} tensors, found {}",
                        self.params.len(),
                        have.len()
                    )
                });
            return Err(shape_err!("parameters do not match network: {detail}"));
        }
        Ok(())
    }

    /// Extent of every intermediate `(maps or width, bands)` after each layer.
    pub fn band_trace(&self) -> Vec<(usize, Option<usize>)> {
        let mut geom = Geom::Spatial {
            maps: self.config.input.channels,
            bands: self.config.input.bands,
        };
        let mut out = Vec::new();
        for layer in &self.plan {
            geom = match (layer, geom) {
                (Planned::Conv { spec, act, .. }, Geom::Spatial { bands, .. }) => Geom::Spatial {
                    maps: spec.out_maps / act.raw_width(1),
                    bands: spec.output_extent(bands, 1).map(|e| e.0).unwrap_or(0),
                },
                (Planned::Pool(p), Geom::Spatial { maps, bands }) => Geom::Spatial {
                    maps,
                    bands: p.output_bands(bands).unwrap_or(0),
                },
                (Planned::Dense { spec, act, .. }, _) => {
                    Geom::Flat(spec.out_width / act.raw_width(1))
                }
                (_, g) => g,
            };
            out.push(match geom {
                Geom::Spatial { maps, bands } => (maps, Some(bands)),
                Geom::Flat(w) => (w, None),
            });
        }
        out
    }

    fn check_input<S: Scalar>(&self, x: &Tensor<S>) -> Result<()> {
        let want = [self.config.input.channels, self.config.input.bands];
        if x.rank() != 3 || x.shape()[..2] != want {
            return Err(shape_err!(
                "input {:?} does not match configured {} channels x {} bands",
                x.shape(),
                want[0],
                want[1]
            ));
        }
        Ok(())
    }

    /// Forward pass that records tapes for [`Network::backward`].
    pub fn forward<S: Scalar>(
        &self,
        params: &Parameters<S>,
        x: &Tensor<S>,
        mode: Mode<'_>,
    ) -> Result<(Tensor<S>, NetworkTape<S>)> {
        let (lp, tape) = self.run(params, x, mode, true)?;
        Ok((lp, tape.expect("tape recorded")))
    }

    /// Inference-mode log-probabilities without keeping intermediates.
    pub fn predict<S: Scalar>(&self, params: &Parameters<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
        Ok(self.run(params, x, Mode::Eval, false)?.0)
    }

    /// Output shape of every layer for an inference pass over `x`.
    pub fn trace_shapes<S: Scalar>(
        &self,
        params: &Parameters<S>,
        x: &Tensor<S>,
    ) -> Result<Vec<Vec<usize>>> {
        self.check_input(x)?;
        self.check_params(params)?;
        let mut h = x.clone();
        let mut shapes = Vec::with_capacity(self.plan.len());
        for (i, layer) in self.plan.iter().enumerate() {
            h = Self::layer_forward(layer, params, h, &mut Mode::Eval)
                .map_err(|e| e.at_layer(i))?
                .0;
            shapes.push(h.shape().to_vec());
        }
        Ok(shapes)
    }

    fn run<S: Scalar>(
        &self,
        params: &Parameters<S>,
        x: &Tensor<S>,
        mut mode: Mode<'_>,
        record: bool,
    ) -> Result<(Tensor<S>, Option<NetworkTape<S>>)> {
        self.check_input(x)?;
        self.check_params(params)?;
        let mut h = x.clone();
        let mut tapes = Vec::with_capacity(if record { self.plan.len() } else { 0 });
        for (i, layer) in self.plan.iter().enumerate() {
            let (out, tape) =
                Self::layer_forward(layer, params, h, &mut mode).map_err(|e| e.at_layer(i))?;
            h = out;
            if record {
                tapes.push(tape);
            }
        }
        let last_shape = h.shape().to_vec();
        let frames = x.dim(2);
        let logits = h.reshape(vec![self.config.alphabet_size, frames])?;
        let log_probs = log_softmax_frames(&logits)?;
        let tape = record.then(|| NetworkTape {
            layers: tapes,
            log_probs: log_probs.clone(),
            last_shape,
        });
        Ok((log_probs, tape))
    }

    fn layer_forward<S: Scalar>(
        layer: &Planned,
        params: &Parameters<S>,
        h: Tensor<S>,
        mode: &mut Mode<'_>,
    ) -> Result<(Tensor<S>, LayerTape<S>)> {
        Ok(match layer {
            Planned::Conv {
                spec,
                act,
                first_param,
            } => {
                let (pre, conv) = conv2d_forward(
                    &h,
                    spec,
                    params.tensor(*first_param),
                    params.tensor(first_param + 1),
                )?;
                let (out, act) = activate(pre, *act, params, first_param + 2)?;
                (out, LayerTape::Conv { conv, act })
            }
            Planned::Pool(spec) => {
                let (out, tape) = maxpool_freq(&h, spec)?;
                (out, LayerTape::Pool(tape))
            }
            Planned::Dense {
                spec,
                act,
                first_param,
            } => {
                let unflattened = (h.rank() == 3).then(|| h.shape().to_vec());
                let h = if h.rank() == 3 {
                    let f = h.dim(2);
                    h.reshape(vec![spec.in_width, f])?
                } else {
                    h
                };
                let (pre, dense) = dense_forward(
                    &h,
                    spec,
                    params.tensor(*first_param),
                    params.tensor(first_param + 1),
                )?;
                let (out, act) = activate(pre, *act, params, first_param + 2)?;
                (
                    out,
                    LayerTape::Dense {
                        dense,
                        act,
                        unflattened,
                    },
                )
            }
            Planned::Dropout(rate) => {
                let (out, tape) = match mode {
                    Mode::Train(rng) => dropout(&h, *rate, &mut **rng, true)?,
                    Mode::Eval => {
                        dropout(&h, *rate, &mut rand::rngs::mock::StepRng::new(0, 0), false)?
                    }
                };
                (out, LayerTape::Dropout(tape))
            }
        })
    }

    /// Parameter gradients for the loss whose gradient w.r.t. the emitted
    /// log-probabilities is `grad_log_probs`.
    pub fn backward<S: Scalar>(
        &self,
        params: &Parameters<S>,
        tape: &NetworkTape<S>,
        grad_log_probs: &Tensor<S>,
    ) -> Result<Parameters<S>> {
        let mut grads = params.zeros_like();
        self.backward_into(params, tape, grad_log_probs, &mut grads)?;
        Ok(grads)
    }

    /// Like [`Network::backward`] but adds into `grads`.
    pub fn backward_into<S: Scalar>(
        &self,
        params: &Parameters<S>,
        tape: &NetworkTape<S>,
        grad_log_probs: &Tensor<S>,
        grads: &mut Parameters<S>,
    ) -> Result<()> {
        self.backward_impl(params, tape, grad_log_probs, grads, &|t, w, g, need| {
            conv2d_backward_opt(t, w, g, need)
        })
    }

    /// Like [`Network::backward`] with a substitute convolution backward,
    /// used to show that gradient checks catch a faulty implementation.
    pub fn backward_with<S: Scalar>(
        &self,
        params: &Parameters<S>,
        tape: &NetworkTape<S>,
        grad_log_probs: &Tensor<S>,
        conv_backward: fn(&ConvTape<S>, &Tensor<S>, &Tensor<S>) -> Result<ConvGrads<S>>,
    ) -> Result<Parameters<S>> {
        let mut grads = params.zeros_like();
        self.backward_impl(params, tape, grad_log_probs, &mut grads, &|t, w, g, _| {
            conv_backward(t, w, g)
        })?;
        Ok(grads)
    }

    fn backward_impl<S: Scalar>(
        &self,
        params: &Parameters<S>,
        tape: &NetworkTape<S>,
        grad_log_probs: &Tensor<S>,
        grads: &mut Parameters<S>,
        conv_backward: &ConvBackwardFn<'_, S>,
    ) -> Result<()> {
        if tape.layers.len() != self.plan.len() {
            return Err(shape_err!(
                "tape has {} layers, network {}",
                tape.layers.len(),
                self.plan.len()
            ));
        }
        params.check_compatible(grads)?;
        let g = log_softmax_backward(&tape.log_probs, grad_log_probs)?;
        let mut g = g.reshape(tape.last_shape.clone())?;
        for (i, (layer, lt)) in self.plan.iter().zip(&tape.layers).enumerate().rev() {
            let need_input = i > 0;
            g = Self::layer_backward(layer, lt, params, g, grads, need_input, conv_backward)
                .map_err(|e| e.at_layer(i))?;
        }
        Ok(())
    }

    fn layer_backward<S: Scalar>(
        layer: &Planned,
        tape: &LayerTape<S>,
        params: &Parameters<S>,
        g: Tensor<S>,
        grads: &mut Parameters<S>,
        need_input: bool,
        conv_backward: &ConvBackwardFn<'_, S>,
    ) -> Result<Tensor<S>> {
        match (layer, tape) {
            (Planned::Conv { first_param, .. }, LayerTape::Conv { conv, act }) => {
                let gpre = deactivate(act, g, grads, first_param + 2)?;
                let cg = conv_backward(conv, params.tensor(*first_param), &gpre, need_input)?;
                grads.tensor_mut(*first_param).add_assign(&cg.weights)?;
                grads.tensor_mut(first_param + 1).add_assign(&cg.biases)?;
                Ok(if need_input {
                    cg.input
                } else {
                    Tensor::zeros(&[1])
                })
            }
            (Planned::Pool(_), LayerTape::Pool(t)) => maxpool_freq_backward(t, &g),
            (
                Planned::Dense { first_param, .. },
                LayerTape::Dense {
                    dense,
                    act,
                    unflattened,
                },
            ) => {
                let gpre = deactivate(act, g, grads, first_param + 2)?;
                let dg = dense_backward(dense, params.tensor(*first_param), &gpre)?;
                grads.tensor_mut(*first_param).add_assign(&dg.weights)?;
                grads.tensor_mut(first_param + 1).add_assign(&dg.biases)?;
                match unflattened {
                    Some(shape) => dg.input.reshape(shape.clone()),
                    None => Ok(dg.input),
                }
            }
            (Planned::Dropout(_), LayerTape::Dropout(t)) => dropout_backward(t, &g),
            _ => Err(shape_err!("tape does not belong to this layer")),
        }
    }
}

type ConvBackwardFn<'a, S> =
    dyn Fn(&ConvTape<S>, &Tensor<S>, &Tensor<S>, bool) -> Result<ConvGrads<S>> + 'a;

fn activate<S: Scalar>(
    pre: Tensor<S>,
    act: Act,
    params: &Parameters<S>,
    alpha_index: usize,
) -> Result<(Tensor<S>, ActTape<S>)> {
    Ok(match act {
        Act::Linear => (pre, ActTape::Linear),
        Act::Relu => {
            let (o, t) = relu(&pre);
            (o, ActTape::Relu(t))
        }
        Act::Prelu => {
            let (o, t) = prelu(&pre, params.tensor(alpha_index).data())?;
            (o, ActTape::Prelu(t))
        }
        Act::Maxout(p) => {
            let (o, t) = maxout(&pre, p)?;
            (o, ActTape::Maxout(t))
        }
    })
}

fn deactivate<S: Scalar>(
    tape: &ActTape<S>,
    g: Tensor<S>,
    grads: &mut Parameters<S>,
    alpha_index: usize,
) -> Result<Tensor<S>> {
    match tape {
        ActTape::Linear => Ok(g),
        ActTape::Relu(t) => relu_backward(t, &g),
        ActTape::Prelu(t) => {
            let (gh, ga) = prelu_backward(t, &g)?;
            let alpha = grads.tensor_mut(alpha_index);
            for (a, d) in alpha.data_mut().iter_mut().zip(ga) {
                *a += d;
            }
            Ok(gh)
        }
        ActTape::Maxout(t) => maxout_backward(t, &g),
    }
}
