//! Named parameter sets and their initialization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{invalid, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    FanIn(usize),
    Zeros,
    Const(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Ordered list of parameter declarations; layers keep the returned index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Registry {
    specs: Vec<ParamSpec>,
}

impl Registry {
    pub fn add(&mut self, name: impl Into<String>, shape: Vec<usize>, init: Init) -> usize {
        self.specs.push(ParamSpec {
            name: name.into(),
            shape,
            init,
        });
        self.specs.len() - 1
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn count(&self) -> usize {
        self.specs.iter().map(ParamSpec::numel).sum()
    }

    /// Draws every tensor from one seeded stream, in declaration order.
    pub fn initialize(&self, seed: u64) -> ParamSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = self
            .specs
            .iter()
            .map(|s| {
                let mut t = Tensor::zeros(&s.shape);
                match s.init {
                    Init::Zeros => {}
                    Init::Const(v) => t.data_mut().iter_mut().for_each(|x| *x = v),
                    Init::FanIn(fan_in) => {
                        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                        for x in t.data_mut() {
                            *x = rng.random_range(-bound..bound);
                        }
                    }
                }
                t
            })
            .collect();
        ParamSet {
            names: self.specs.iter().map(|s| s.name.clone()).collect(),
            tensors,
        }
    }
}

/// Values of a [`Registry`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new(names: Vec<String>, tensors: Vec<Tensor>) -> Result<Self> {
        if names.len() != tensors.len() {
            return invalid("parameter names and tensors differ in length");
        }
        Ok(Self { names, tensors })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&mut self.tensors[i])
    }

    /// Checks names and shapes against a registry.
    pub fn check(&self, reg: &Registry) -> Result<()> {
        if self.len() != reg.specs().len() {
            return invalid(format!(
                "expected {} parameter tensors, got {}",
                reg.specs().len(),
                self.len()
            ));
        }
        for ((name, t), spec) in self.names.iter().zip(&self.tensors).zip(reg.specs()) {
            if name != &spec.name || t.shape() != spec.shape.as_slice() {
                return invalid(format!(
                    "parameter {name} {:?} does not match {} {:?}",
                    t.shape(),
                    spec.name,
                    spec.shape
                ));
            }
        }
        Ok(())
    }

    /// Registers every tensor as a leaf of `g`.
    pub fn bind<'g>(&self, g: &'g Graph) -> Vec<Var<'g>> {
        self.tensors.iter().map(|t| g.leaf(t.clone())).collect()
    }

    /// All values in declaration order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }
}
