//! Named trainable tensors in a fixed order shared by gradients, optimizer
//! state and checkpoints.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Which regularization rules apply to a parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamClass {
    Weight,
    Bias,
    /// PReLU negative-side slope.
    Slope,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<S> {
    pub name: String,
    pub class: ParamClass,
    pub tensor: Tensor<S>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub class: ParamClass,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Parameters<S> {
    params: Vec<Param<S>>,
}

impl<S: Scalar> Parameters<S> {
    pub fn new(params: Vec<Param<S>>) -> Self {
        Parameters { params }
    }

    pub fn zeros(specs: &[ParamSpec]) -> Self {
        Parameters {
            params: specs
                .iter()
                .map(|s| Param {
                    name: s.name.clone(),
                    class: s.class,
                    tensor: Tensor::zeros(&s.shape),
                })
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Parameters {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    class: p.class,
                    tensor: Tensor::zeros(p.tensor.shape()),
                })
                .collect(),
        }
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        self.params
            .iter()
            .map(|p| ParamSpec {
                name: p.name.clone(),
                class: p.class,
                shape: p.tensor.shape().to_vec(),
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Param<S>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> std::slice::IterMut<'_, Param<S>> {
        self.params.iter_mut()
    }

    pub fn tensor(&self, index: usize) -> &Tensor<S> {
        &self.params[index].tensor
    }

    pub fn tensor_mut(&mut self, index: usize) -> &mut Tensor<S> {
        &mut self.params[index].tensor
    }

    pub fn by_name(&self, name: &str) -> Option<&Param<S>> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Total scalar count.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(shape_err!(
                "parameter sets differ in length: {} vs {}",
                self.params.len(),
                other.params.len()
            ));
        }
        for (a, b) in self.params.iter().zip(&other.params) {
            if a.name != b.name || a.tensor.shape() != b.tensor.shape() {
                return Err(shape_err!(
                    "parameter {} {:?} does not match {} {:?}",
                    a.name,
                    a.tensor.shape(),
                    b.name,
                    b.tensor.shape()
                ));
            }
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.check_compatible(other)?;
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            a.tensor.add_assign(&b.tensor)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: S) {
        for p in &mut self.params {
            p.tensor.scale(factor);
        }
    }

    pub fn global_norm(&self) -> S {
        let mut sq = S::zero();
        for p in &self.params {
            for &v in p.tensor.data() {
                sq += v * v;
            }
        }
        sq.sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.tensor.is_finite())
    }

    pub fn into_vec(self) -> Vec<Param<S>> {
        self.params
    }
}
