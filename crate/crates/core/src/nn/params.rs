use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major array.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor { shape: shape.to_vec(), values: vec![0.0; shape.iter().product()] }
    }

    pub fn from_vec(shape: &[usize], values: Vec<f64>) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::Shape { expected: shape.to_vec(), actual: vec![values.len()] });
        }
        Ok(Tensor { shape: shape.to_vec(), values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[1..].iter().product()
        } else {
            self.values.len()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A trainable tensor with its gradient accumulator and Adam moments.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Vec<f64>,
    pub(crate) first_moment: Vec<f64>,
    pub(crate) second_moment: Vec<f64>,
    pub(crate) steps: u64,
    pub frozen: bool,
}

impl Parameter {
    fn new(name: String, value: Tensor) -> Parameter {
        let n = value.len();
        Parameter {
            name,
            value,
            grad: vec![0.0; n],
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
            steps: 0,
            frozen: false,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.by_name.contains_key(&name), "duplicate parameter {name}");
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter::new(name, value));
        id
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    /// Uniform Glorot initialization with the given fan sizes.
    pub fn glorot<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> ParamId {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n: usize = shape.iter().product();
        let values = (0..n).map(|_| rng.gen_range(-limit..limit)).collect();
        self.add(name, Tensor { shape: shape.to_vec(), values })
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].value.values
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.params[id.0].value.values
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.params[id.0].value.shape
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.params[id.0].frozen = frozen;
    }

    pub fn set_frozen_where(&mut self, frozen: bool, pred: impl Fn(&str) -> bool) {
        for p in &mut self.params {
            if pred(&p.name) {
                p.frozen = frozen;
            }
        }
    }

    pub fn freeze_all(&mut self) {
        self.set_frozen_where(true, |_| true);
    }

    /// Adds a gradient buffer into the per-parameter accumulators.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (i, g) in grads.grads.iter().enumerate() {
            if g.is_empty() {
                continue;
            }
            for (acc, x) in self.params[i].grad.iter_mut().zip(g) {
                *acc += x;
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            params: self
                .params
                .iter()
                .map(|p| NamedTensor { name: p.name.clone(), tensor: p.value.clone() })
                .collect(),
        }
    }

    /// Overwrites values of every named parameter; all names and shapes must match.
    pub fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<()> {
        if ckpt.params.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameters, model has {}",
                ckpt.params.len(),
                self.params.len()
            )));
        }
        for nt in &ckpt.params {
            let id = self
                .id(&nt.name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {}", nt.name)))?;
            let p = &mut self.params[id.0];
            if p.value.shape != nt.tensor.shape || nt.tensor.values.len() != p.value.len() {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for {}: {:?} vs {:?}",
                    nt.name, p.value.shape, nt.tensor.shape
                )));
            }
            p.value.values.copy_from_slice(&nt.tensor.values);
        }
        Ok(())
    }
}

/// Per-parameter gradient buffer produced by a backward pass.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub(crate) grads: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn new(num_params: usize) -> Self {
        Gradients { grads: vec![Vec::new(); num_params] }
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        let g = &self.grads[id.0];
        (!g.is_empty()).then_some(g.as_slice())
    }

    pub(crate) fn slot(&mut self, id: ParamId, len: usize) -> &mut Vec<f64> {
        let g = &mut self.grads[id.0];
        if g.is_empty() {
            g.resize(len, 0.0);
        }
        g
    }

    pub fn add(&mut self, other: &Gradients) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            if b.is_empty() {
                continue;
            }
            if a.is_empty() {
                a.clone_from(b);
            } else {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    #[serde(flatten)]
    pub tensor: Tensor,
}

/// JSON manifest of parameter names, shapes and row-major values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub params: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
