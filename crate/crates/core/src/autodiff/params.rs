use rand::Rng;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Index of a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Named trainable tensors, kept in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    /// `Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))` weights.
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut impl Rng,
    ) -> ParamId {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        self.add(name, Tensor::from_parts(shape.to_vec(), data))
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Replaces every tensor with the same-named tensor from `other`.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::Config(format!(
                "parameter count mismatch: expected {}, found {}",
                self.len(),
                other.len()
            )));
        }
        for (i, name) in self.names.iter().enumerate() {
            let j = other
                .find(name)
                .ok_or_else(|| Error::Config(format!("missing parameter {name}")))?;
            let src = &other.tensors[j.0];
            if src.shape() != self.tensors[i].shape() {
                return Err(Error::shape(
                    "load_params",
                    self.tensors[i].shape(),
                    src.shape(),
                ));
            }
            self.tensors[i] = src.clone();
        }
        Ok(())
    }

    /// Places every tensor on `tape`, trainable or constant.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> BoundParams<'t> {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        BoundParams { vars }
    }
}

/// Parameters as variables on one tape.
pub struct BoundParams<'t> {
    vars: Vec<Var<'t>>,
}

impl<'t> BoundParams<'t> {
    pub fn var(&self, id: ParamId) -> Var<'t> {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }
}
