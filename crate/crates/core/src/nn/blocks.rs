use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.01;

/// `W1 · LeakyReLU(W2 · x + b2) + b1`.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl Mlp {
    /// Hidden width equal to the output width.
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut R) -> Mlp {
        Self::with_hidden(store, name, input, output, output, rng)
    }

    pub fn with_hidden<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        output: usize,
        rng: &mut R,
    ) -> Mlp {
        let w2 = store.glorot(format!("{name}.w2"), &[hidden, input], input, hidden, rng);
        let b2 = store.zeros(format!("{name}.b2"), &[hidden]);
        let w1 = store.glorot(format!("{name}.w1"), &[output, hidden], hidden, output, rng);
        let b1 = store.zeros(format!("{name}.b1"), &[output]);
        Mlp { w1, b1, w2, b2, input, hidden, output }
    }

    /// A scoring head; `wide` gives it a hidden layer as wide as its input
    /// instead of its (narrow) output.
    pub fn head<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        wide: bool,
        rng: &mut R,
    ) -> Mlp {
        let hidden = if wide { input.max(output) } else { output };
        Self::with_hidden(store, name, input, hidden, output, rng)
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        if g.dim(x) != self.input {
            return Err(Error::Shape { expected: vec![self.input], actual: vec![g.dim(x)] });
        }
        let h = g.affine(self.w2, Some(self.b2), x)?;
        let h = g.leaky_relu(h, LEAKY_SLOPE);
        g.affine(self.w1, Some(self.b1), h)
    }

    pub fn params(&self) -> [ParamId; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }
}

/// Additive attention: `softmax(vᵀ tanh(X W))` over the rows of `X`.
#[derive(Clone, Debug)]
pub struct Attention {
    /// Stored as (attention dim, input dim) and applied row by row.
    pub w: ParamId,
    pub v: ParamId,
    pub input: usize,
    pub dim: usize,
}

impl Attention {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, input: usize, dim: usize, rng: &mut R) -> Attention {
        let w = store.glorot(format!("{name}.w"), &[dim, input], input, dim, rng);
        let v = store.glorot(format!("{name}.v"), &[dim], dim, 1, rng);
        Attention { w, v, input, dim }
    }

    pub fn scores(&self, g: &mut Graph, rows: &[Var]) -> Result<Var> {
        if rows.is_empty() {
            return Err(Error::EmptyCandidates);
        }
        let v = g.param(self.v);
        let mut scores = Vec::with_capacity(rows.len());
        for &row in rows {
            if g.dim(row) != self.input {
                return Err(Error::Shape { expected: vec![self.input], actual: vec![g.dim(row)] });
            }
            let u = g.affine(self.w, None, row)?;
            let u = g.tanh(u);
            scores.push(g.dot(v, u)?);
        }
        Ok(g.concat(&scores))
    }

    /// Attention weights over `rows`; non-negative and summing to one.
    pub fn attend(&self, g: &mut Graph, rows: &[Var]) -> Result<Var> {
        let s = self.scores(g, rows)?;
        Ok(g.softmax(s))
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.w, self.v]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl Adam {
    pub fn with_lr(lr: f64) -> Adam {
        Adam { lr, ..Adam::default() }
    }

    /// Bias-corrected Adam update of every unfrozen parameter, then clears
    /// all gradient accumulators.
    pub fn step(&self, store: &mut ParamStore) {
        let ids: Vec<ParamId> = store.ids().collect();
        for id in ids {
            let p = store.get_mut(id);
            if p.frozen {
                continue;
            }
            p.steps += 1;
            let t = p.steps as i32;
            let c1 = 1.0 - self.beta1.powi(t);
            let c2 = 1.0 - self.beta2.powi(t);
            for k in 0..p.grad.len() {
                let g = p.grad[k];
                let m = self.beta1 * p.first_moment[k] + (1.0 - self.beta1) * g;
                let v = self.beta2 * p.second_moment[k] + (1.0 - self.beta2) * g * g;
                p.first_moment[k] = m;
                p.second_moment[k] = v;
                let mhat = m / c1;
                let vhat = v / c2;
                p.value.values[k] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        store.zero_grad();
    }
}
