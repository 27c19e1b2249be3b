//! Declarative network description, read from and written to JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::activation::ActivationKind;
use crate::layers::conv::Padding;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputGeometry {
    pub channels: usize,
    pub bands: usize,
}

fn two() -> usize {
    2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub maps: usize,
    pub filter_freq: usize,
    pub filter_time: usize,
    #[serde(default)]
    pub activation: ActivationKind,
    /// Only read for maxout.
    #[serde(default = "two")]
    pub pieces: usize,
    #[serde(default)]
    pub freq_padding: Padding,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolLayer {
    pub size: usize,
    pub step: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub units: usize,
    #[serde(default)]
    pub activation: ActivationKind,
    #[serde(default = "two")]
    pub pieces: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropoutLayer {
    pub rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerConfig {
    Conv(ConvLayer),
    Pool(PoolLayer),
    Dense(DenseLayer),
    Dropout(DropoutLayer),
}

impl LayerConfig {
    pub fn conv(
        maps: usize,
        filter_freq: usize,
        filter_time: usize,
        activation: ActivationKind,
    ) -> Self {
        LayerConfig::Conv(ConvLayer {
            maps,
            filter_freq,
            filter_time,
            activation,
            pieces: 2,
            freq_padding: Padding::Same,
        })
    }

    pub fn pool(size: usize, step: usize) -> Self {
        LayerConfig::Pool(PoolLayer { size, step })
    }

    pub fn dense(units: usize, activation: ActivationKind) -> Self {
        LayerConfig::Dense(DenseLayer {
            units,
            activation,
            pieces: 2,
        })
    }

    pub fn dropout(rate: f64) -> Self {
        LayerConfig::Dropout(DropoutLayer { rate })
    }
}

/// Ordered layer stack. The last layer's (flattened) width must equal
/// `alphabet_size`; its outputs are the per-frame logits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input: InputGeometry,
    pub alphabet_size: usize,
    pub layers: Vec<LayerConfig>,
}

pub const DEFAULT_BANDS: usize = 41;
pub const DEFAULT_CHANNELS: usize = 3;
pub const DEFAULT_ALPHABET_SIZE: usize = 62;
pub const DEFAULT_DROPOUT: f64 = 0.3;

impl NetworkConfig {
    /// Ten 3×5 maxout conv layers (128 maps ×4, then 256 ×6), 3×1 frequency
    /// pooling after the first, three 1024-unit maxout dense layers and a
    /// linear output layer over 61 phones plus blank.
    pub fn standard() -> Self {
        Self::convolutional(
            InputGeometry {
                channels: DEFAULT_CHANNELS,
                bands: DEFAULT_BANDS,
            },
            DEFAULT_ALPHABET_SIZE,
            &[128, 128, 128, 128, 256, 256, 256, 256, 256, 256],
            &[1024, 1024, 1024],
            DEFAULT_DROPOUT,
            true,
        )
    }

    /// Maxout conv stack of 3×5 filters with 3/3 frequency pooling after the
    /// first layer, followed by maxout dense layers and a linear output.
    pub fn convolutional(
        input: InputGeometry,
        alphabet_size: usize,
        conv_maps: &[usize],
        dense_units: &[usize],
        dropout: f64,
        dropout_in_conv: bool,
    ) -> Self {
        let mut layers = Vec::new();
        for (i, &maps) in conv_maps.iter().enumerate() {
            layers.push(LayerConfig::conv(maps, 3, 5, ActivationKind::Maxout));
            if i == 0 {
                layers.push(LayerConfig::pool(3, 3));
            }
            if dropout_in_conv && dropout > 0.0 {
                layers.push(LayerConfig::dropout(dropout));
            }
        }
        for &units in dense_units {
            layers.push(LayerConfig::dense(units, ActivationKind::Maxout));
            if dropout > 0.0 {
                layers.push(LayerConfig::dropout(dropout));
            }
        }
        layers.push(LayerConfig::dense(alphabet_size, ActivationKind::Linear));
        NetworkConfig {
            input,
            alphabet_size,
            layers,
        }
    }

    /// Sets the rate of every dropout layer.
    pub fn set_dropout(&mut self, rate: f64) {
        for layer in &mut self.layers {
            if let LayerConfig::Dropout(d) = layer {
                d.rate = rate;
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
