//! Trainable parameters and the standard layers built on them.

use std::collections::HashSet;
use std::sync::{Arc, RwLock};

use rand::{Rng, RngCore};

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

struct ParamInner {
    name: String,
    trainable: bool,
    value: RwLock<Tensor>,
}

/// A named, shared handle to a parameter tensor.
///
/// Layers hold clones of the handle; the optimizer swaps in new values with
/// [`Param::set_data`]. A frozen parameter is a leaf without
/// `requires_grad`, so no gradient ever reaches it.
#[derive(Clone)]
pub struct Param(Arc<ParamInner>);

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor, trainable: bool) -> Param {
        Param(Arc::new(ParamInner {
            name: name.into(),
            trainable,
            value: RwLock::new(value.into_leaf(trainable)),
        }))
    }

    pub fn name(&self) -> &str {
        &self.0.name
    }

    pub fn trainable(&self) -> bool {
        self.0.trainable
    }

    /// Current value as a graph leaf.
    pub fn tensor(&self) -> Tensor {
        self.0.value.read().expect("param lock poisoned").clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tensor().shape().to_vec()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.tensor().to_vec()
    }

    /// Replaces the value with a fresh leaf; clears any gradient.
    pub fn set_data(&self, data: Vec<f64>) -> Result<()> {
        let mut slot = self.0.value.write().expect("param lock poisoned");
        let shape = slot.shape().to_vec();
        *slot = Tensor::new(data, &shape)?.into_leaf(self.0.trainable);
        Ok(())
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.tensor().grad()
    }

    pub fn zero_grad(&self) {
        self.tensor().zero_grad()
    }
}

impl std::fmt::Debug for Param {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Param")
            .field("name", &self.name())
            .field("shape", &self.shape())
            .field("trainable", &self.trainable())
            .finish()
    }
}

/// Ordered registry of every parameter in a model. Names are unique.
#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> ParamSet {
        ParamSet::default()
    }

    pub fn push(&mut self, param: Param) -> Result<()> {
        if self.get(param.name()).is_some() {
            return Err(TensorError::Contract(format!(
                "duplicate parameter name {}",
                param.name()
            )));
        }
        self.params.push(param);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name() == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn trainable(&self) -> Vec<Param> {
        self.params.iter().filter(|p| p.trainable()).cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn zero_grad(&self) {
        self.params.iter().for_each(Param::zero_grad);
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.tensor().numel()).sum()
    }

    pub(crate) fn check_unique(names: impl Iterator<Item = String>) -> Result<()> {
        let mut seen = HashSet::new();
        for n in names {
            if !seen.insert(n.clone()) {
                return Err(TensorError::Checkpoint(format!("duplicate tensor name {n}")));
            }
        }
        Ok(())
    }
}

/// Hands out named parameters under a dotted prefix, drawing initial values
/// from one generator.
pub struct ParamBuilder<'a> {
    params: &'a mut ParamSet,
    rng: &'a mut dyn RngCore,
    prefix: String,
    trainable: bool,
}

impl<'a> ParamBuilder<'a> {
    pub fn new(params: &'a mut ParamSet, rng: &'a mut dyn RngCore) -> ParamBuilder<'a> {
        ParamBuilder {
            params,
            rng,
            prefix: String::new(),
            trainable: true,
        }
    }

    pub fn scope(&mut self, name: &str) -> ParamBuilder<'_> {
        let prefix = self.qualify(name);
        ParamBuilder {
            params: &mut *self.params,
            rng: &mut *self.rng,
            prefix,
            trainable: self.trainable,
        }
    }

    /// Sub-builder whose parameters are registered as frozen.
    pub fn frozen(&mut self, name: &str) -> ParamBuilder<'_> {
        let mut b = self.scope(name);
        b.trainable = false;
        b
    }

    pub fn with_trainable(mut self, trainable: bool) -> Self {
        self.trainable = trainable;
        self
    }

    fn qualify(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    pub fn rng(&mut self) -> &mut dyn RngCore {
        &mut *self.rng
    }

    pub fn tensor(&mut self, name: &str, value: Tensor) -> Result<Param> {
        let p = Param::new(self.qualify(name), value, self.trainable);
        self.params.push(p.clone())?;
        Ok(p)
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> Result<Param> {
        let rng = &mut *self.rng;
        let value = Tensor::from_fn(shape, |_| rng.gen_range(-bound..=bound));
        self.tensor(name, value)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Param> {
        self.tensor(name, Tensor::full(shape, value))
    }
}

/// `y = x W^T + b` over the last axis.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Param,
    pub bias: Option<Param>,
}

impl Linear {
    /// Uniform(±1/sqrt(fan_in)) initialisation for weight and bias.
    pub fn new(pb: &mut ParamBuilder, fan_in: usize, fan_out: usize, bias: bool) -> Result<Linear> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = pb.uniform("weight", &[fan_out, fan_in], bound)?;
        let bias = if bias {
            Some(pb.uniform("bias", &[fan_out], bound)?)
        } else {
            None
        };
        Ok(Linear { weight, bias })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let bias = self.bias.as_ref().map(Param::tensor);
        x.linear(&self.weight.tensor(), bias.as_ref())
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[0]
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: Param,
    pub beta: Param,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(pb: &mut ParamBuilder, dim: usize) -> Result<LayerNorm> {
        Ok(LayerNorm {
            gamma: pb.constant("gamma", &[dim], 1.0)?,
            beta: pb.constant("beta", &[dim], 0.0)?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.layer_norm(Some(&self.gamma.tensor()), Some(&self.beta.tensor()), self.eps)
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Option<Param>,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    pub fn new(
        pb: &mut ParamBuilder,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Result<Conv2d> {
        let fan_in = in_ch * kernel * kernel;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = pb.uniform("weight", &[out_ch, in_ch, kernel, kernel], bound)?;
        let bias = if bias {
            Some(pb.uniform("bias", &[out_ch], bound)?)
        } else {
            None
        };
        Ok(Conv2d {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let bias = self.bias.as_ref().map(Param::tensor);
        x.conv2d(&self.weight.tensor(), bias.as_ref(), self.stride, self.padding)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    /// Spatial output extent for an input extent.
    pub fn output_size(&self, input: usize) -> Option<usize> {
        let k = self.weight.shape()[2];
        (input + 2 * self.padding)
            .checked_sub(k)
            .map(|v| v / self.stride + 1)
    }
}

#[derive(Clone, Debug)]
pub struct GroupNorm {
    pub groups: usize,
    pub gamma: Param,
    pub beta: Param,
    pub eps: f64,
}

impl GroupNorm {
    pub fn new(pb: &mut ParamBuilder, groups: usize, channels: usize) -> Result<GroupNorm> {
        if groups == 0 || !channels.is_multiple_of(groups) {
            return Err(TensorError::Contract(format!(
                "{channels} channels not divisible into {groups} groups"
            )));
        }
        Ok(GroupNorm {
            groups,
            gamma: pb.constant("gamma", &[channels], 1.0)?,
            beta: pb.constant("beta", &[channels], 0.0)?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.group_norm(self.groups, &self.gamma.tensor(), &self.beta.tensor(), self.eps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn builder_names_and_freezes() {
        let mut set = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pb = ParamBuilder::new(&mut set, &mut rng);
        {
            let mut head = pb.scope("head");
            Linear::new(&mut head, 4, 2, true).unwrap();
        }
        {
            let mut frozen = pb.frozen("lmk");
            Conv2d::new(&mut frozen, 3, 4, 3, 1, 1, false).unwrap();
        }
        let names: Vec<_> = set.iter().map(|p| p.name().to_string()).collect();
        assert_eq!(names, ["head.weight", "head.bias", "lmk.weight"]);
        assert_eq!(set.trainable().len(), 2);
        assert!(!set.get("lmk.weight").unwrap().tensor().requires_grad());
        assert!(set.push(set.get("head.bias").unwrap().clone()).is_err());
    }

    #[test]
    fn set_data_replaces_value_and_clears_grad() {
        let p = Param::new("w", Tensor::ones(&[2]), true);
        p.tensor().mul(&p.tensor()).unwrap().sum().backward().unwrap();
        assert_eq!(p.grad().unwrap(), vec![2.0, 2.0]);
        p.set_data(vec![3.0, 4.0]).unwrap();
        assert!(p.grad().is_none());
        assert_eq!(p.to_vec(), vec![3.0, 4.0]);
        assert!(p.set_data(vec![1.0]).is_err());
    }
}
