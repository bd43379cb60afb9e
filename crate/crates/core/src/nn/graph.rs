//! Tape-based reverse-mode differentiation over dense vectors.
//!
//! A [`Graph`] records every operation of a forward pass as a node holding its
//! output vector. Parameters are read in place from a borrowed [`ParamStore`];
//! [`Graph::backward`] walks the tape in reverse and returns a [`Gradients`]
//! buffer that can be accumulated into the store afterwards.
//!
//! Nodes whose inputs are all constants or frozen parameters are marked as not
//! needing gradients and are skipped by the backward sweep.

use super::params::{Gradients, ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param(ParamId),
    Row(ParamId, usize),
    Affine { w: ParamId, b: Option<ParamId>, x: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Index(Var, usize),
    Dot(Var, Var),
    Sum(Var),
    Softmax(Var),
    LogSoftmax(Var),
    WeightedSum { weights: Var, items: Vec<Var> },
    NodeLogProbs { logit: Option<Var>, prims: Var },
    TreeCrossEntropy { p: Vec<Var>, q: Vec<Var> },
}

#[derive(Debug)]
struct Node {
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

fn log_sigmoid(x: f64) -> f64 {
    // log σ(x) = −softplus(−x)
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_into(x: &[f64], out: &mut Vec<f64>) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    out.clear();
    out.extend(x.iter().map(|v| (v - max).exp()));
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= z);
}

pub(crate) fn log_softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    x.iter().map(|v| v - lse).collect()
}

fn add_into(acc: &mut [f64], g: &[f64]) {
    acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph { params, nodes: Vec::with_capacity(256) }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        match self.nodes[v.0].op {
            Op::Param(id) => self.params.value(id),
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    pub fn dim(&self, v: Var) -> usize {
        self.value(v).len()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn trainable(&self, id: ParamId) -> bool {
        !self.params.get(id).frozen
    }

    fn push(&mut self, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Input, false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let needs = self.trainable(id);
        self.push(Vec::new(), Op::Param(id), needs)
    }

    /// Row `row` of a matrix parameter.
    pub fn row(&mut self, id: ParamId, row: usize) -> Var {
        let shape = self.params.shape(id);
        let cols: usize = shape[1..].iter().product();
        let value = self.params.value(id)[row * cols..(row + 1) * cols].to_vec();
        let needs = self.trainable(id);
        self.push(value, Op::Row(id, row), needs)
    }

    /// `W x (+ b)` with `W` of shape (out, in).
    pub fn affine(&mut self, w: ParamId, b: Option<ParamId>, x: Var) -> Result<Var> {
        let shape = self.params.shape(w);
        let (rows, cols) = (shape[0], shape[1]);
        let xv = self.value(x);
        if xv.len() != cols {
            return Err(Error::Shape { expected: vec![cols], actual: vec![xv.len()] });
        }
        let wv = self.params.value(w);
        let mut out = match b {
            Some(b) => self.params.value(b).to_vec(),
            None => vec![0.0; rows],
        };
        for (r, o) in out.iter_mut().enumerate() {
            let row = &wv[r * cols..(r + 1) * cols];
            let mut acc = 0.0;
            for (a, c) in row.iter().zip(xv) {
                acc += a * c;
            }
            *o += acc;
        }
        let needs = self.needs(x) || self.trainable(w) || b.is_some_and(|b| self.trainable(b));
        Ok(self.push(out, Op::Affine { w, b, x }, needs))
    }

    fn check_same(&self, a: Var, b: Var) -> Result<()> {
        let (la, lb) = (self.dim(a), self.dim(b));
        if la != lb {
            return Err(Error::Shape { expected: vec![la], actual: vec![lb] });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b)?;
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Add(a, b), needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b)?;
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x - y).collect();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Sub(a, b), needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b)?;
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Mul(a, b), needs))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).iter().map(|x| x * c).collect();
        let needs = self.needs(a);
        self.push(v, Op::Scale(a, c), needs)
    }

    /// Vector `a` times the scalar node `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.dim(s) != 1 {
            return Err(Error::Shape { expected: vec![1], actual: vec![self.dim(s)] });
        }
        let c = self.scalar(s);
        let v = self.value(a).iter().map(|x| x * c).collect();
        let needs = self.needs(a) || self.needs(s);
        Ok(self.push(v, Op::ScaleBy(a, s), needs))
    }

    /// Which side of the kink every LeakyReLU input lies on, in tape order.
    /// Two evaluations with equal patterns lie in the same linear region.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let mut bits = Vec::new();
        for node in &self.nodes {
            if let Op::LeakyRelu(a, _) = node.op {
                bits.extend(self.value(a).iter().map(|&x| x > 0.0));
            }
        }
        bits
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let v = self.value(a).iter().map(|&x| if x > 0.0 { x } else { slope * x }).collect();
        let needs = self.needs(a);
        self.push(v, Op::LeakyRelu(a, slope), needs)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().map(|x| x.tanh()).collect();
        let needs = self.needs(a);
        self.push(v, Op::Tanh(a), needs)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().map(|&x| sigmoid(x)).collect();
        let needs = self.needs(a);
        self.push(v, Op::Sigmoid(a), needs)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().map(|x| x.exp()).collect();
        let needs = self.needs(a);
        self.push(v, Op::Exp(a), needs)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().map(|x| x.ln()).collect();
        let needs = self.needs(a);
        self.push(v, Op::Log(a), needs)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let total = parts.iter().map(|&p| self.dim(p)).sum();
        let mut v = Vec::with_capacity(total);
        for &p in parts {
            v.extend_from_slice(self.value(p));
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push(v, Op::Concat(parts.to_vec()), needs)
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let n = self.dim(a);
        if start + len > n {
            return Err(Error::Shape { expected: vec![start + len], actual: vec![n] });
        }
        let v = self.value(a)[start..start + len].to_vec();
        let needs = self.needs(a);
        Ok(self.push(v, Op::Slice(a, start), needs))
    }

    pub fn index(&mut self, a: Var, i: usize) -> Var {
        let v = vec![self.value(a)[i]];
        let needs = self.needs(a);
        self.push(v, Op::Index(a, i), needs)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b)?;
        let s = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).sum();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(vec![s], Op::Dot(a, b), needs))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        let needs = self.needs(a);
        self.push(vec![s], Op::Sum(a), needs)
    }

    /// Sum of scalar nodes, left to right.
    pub fn sum_scalars(&mut self, items: &[Var]) -> Var {
        if items.len() == 1 {
            return items[0];
        }
        let c = self.concat(items);
        self.sum(c)
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let mut v = Vec::new();
        softmax_into(self.value(a), &mut v);
        let needs = self.needs(a);
        self.push(v, Op::Softmax(a), needs)
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let v = log_softmax(self.value(a));
        let needs = self.needs(a);
        self.push(v, Op::LogSoftmax(a), needs)
    }

    /// `Σ_k weights[k] · items[k]`.
    pub fn weighted_sum(&mut self, weights: Var, items: &[Var]) -> Result<Var> {
        if self.dim(weights) != items.len() || items.is_empty() {
            return Err(Error::Shape { expected: vec![items.len()], actual: vec![self.dim(weights)] });
        }
        let d = self.dim(items[0]);
        let mut v = vec![0.0; d];
        for (k, &it) in items.iter().enumerate() {
            if self.dim(it) != d {
                return Err(Error::Shape { expected: vec![d], actual: vec![self.dim(it)] });
            }
            let w = self.value(weights)[k];
            for (o, x) in v.iter_mut().zip(self.value(it)) {
                *o += w * x;
            }
        }
        let needs = self.needs(weights) || items.iter().any(|&i| self.needs(i));
        Ok(self.push(v, Op::WeightedSum { weights, items: items.to_vec() }, needs))
    }

    /// Log-probabilities of one decoder node's local outcomes.
    ///
    /// With a structure logit the node yields `|P|+1` entries:
    /// `log((1−θc)·θp_k)` for each primitive followed by `log θc`, where
    /// `θc = σ(logit)` and `θp = softmax(prims)`. Without one (terminal depth)
    /// `θc` is forced to zero and only the `|P|` primitive entries remain.
    pub fn node_log_probs(&mut self, logit: Option<Var>, prims: Var) -> Var {
        let ls = log_softmax(self.value(prims));
        let v = match logit {
            None => ls,
            Some(logit) => {
                let z = self.scalar(logit);
                let stop = log_sigmoid(-z);
                let mut v: Vec<f64> = ls.iter().map(|l| stop + l).collect();
                v.push(log_sigmoid(z));
                v
            }
        };
        let needs = self.needs(prims) || logit.is_some_and(|z| self.needs(z));
        self.push(v, Op::NodeLogProbs { logit, prims }, needs)
    }

    /// Exact cross-entropy `−Σ_t P(t) log Q(t)` between two depth-truncated
    /// node-factored type distributions laid out as complete binary trees in
    /// heap order (node `n` has children `2n+1`, `2n+2`). Each entry is a
    /// [`Graph::node_log_probs`] output; the last outcome of a non-terminal
    /// node is "complex".
    pub fn tree_cross_entropy(&mut self, p: &[Var], q: &[Var]) -> Result<Var> {
        if p.len() != q.len() || p.is_empty() {
            return Err(Error::Shape { expected: vec![p.len()], actual: vec![q.len()] });
        }
        for (&a, &b) in p.iter().zip(q) {
            self.check_same(a, b)?;
        }
        let (reach, local) = self.tree_terms(p, q);
        let h = reach.iter().zip(&local).map(|(r, l)| r * l).sum();
        let needs = p.iter().chain(q).any(|&v| self.needs(v));
        Ok(self.push(vec![h], Op::TreeCrossEntropy { p: p.to_vec(), q: q.to_vec() }, needs))
    }

    /// Reach probabilities under P and local cross-entropy terms per node.
    fn tree_terms(&self, p: &[Var], q: &[Var]) -> (Vec<f64>, Vec<f64>) {
        let n = p.len();
        let mut reach = vec![0.0; n];
        let mut local = vec![0.0; n];
        reach[0] = 1.0;
        for i in 0..n {
            let pv = self.value(p[i]);
            let qv = self.value(q[i]);
            local[i] = -pv.iter().zip(qv).map(|(a, b)| a.exp() * b).sum::<f64>();
            let (l, r) = (2 * i + 1, 2 * i + 2);
            if r < n {
                let complex = pv[pv.len() - 1].exp();
                reach[l] = reach[i] * complex;
                reach[r] = reach[i] * complex;
            }
        }
        (reach, local)
    }

    /// Reverse sweep from a scalar loss. Gradients for frozen parameters are
    /// not computed.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let mut grads = Gradients::new(self.params.len());
        self.backward_into(loss, &mut grads)?;
        Ok(grads)
    }

    /// Like [`Graph::backward`] but adds into an existing buffer.
    pub fn backward_into(&self, loss: Var, out: &mut Gradients) -> Result<()> {
        if self.dim(loss) != 1 {
            return Err(Error::NonScalarLoss(self.dim(loss)));
        }
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); loss.0 + 1];
        grads[loss.0] = vec![1.0];
        for i in (0..=loss.0).rev() {
            if grads[i].is_empty() || !self.nodes[i].needs_grad {
                continue;
            }
            let g = std::mem::take(&mut grads[i]);
            self.backward_node(i, &g, &mut grads, out);
        }
        Ok(())
    }

    fn grad_slot<'a>(&self, grads: &'a mut [Vec<f64>], v: Var) -> Option<&'a mut Vec<f64>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let slot = &mut grads[v.0];
        if slot.is_empty() {
            slot.resize(self.dim(v), 0.0);
        }
        Some(slot)
    }

    fn backward_node(&self, i: usize, g: &[f64], grads: &mut [Vec<f64>], out: &mut Gradients) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Input => {}
            Op::Param(id) => {
                add_into(out.slot(*id, g.len()), g);
            }
            Op::Row(id, row) => {
                let total = self.params.value(*id).len();
                let slot = out.slot(*id, total);
                let cols = g.len();
                add_into(&mut slot[row * cols..(row + 1) * cols], g);
            }
            Op::Affine { w, b, x } => {
                let shape = self.params.shape(*w);
                let (rows, cols) = (shape[0], shape[1]);
                let wv = self.params.value(*w);
                if self.trainable(*w) {
                    let xv = self.value(*x);
                    let slot = out.slot(*w, rows * cols);
                    for r in 0..rows {
                        let gr = g[r];
                        if gr != 0.0 {
                            let dst = &mut slot[r * cols..(r + 1) * cols];
                            for (d, xv) in dst.iter_mut().zip(xv) {
                                *d += gr * xv;
                            }
                        }
                    }
                }
                if let Some(b) = b {
                    if self.trainable(*b) {
                        add_into(out.slot(*b, rows), g);
                    }
                }
                if let Some(dx) = self.grad_slot(grads, *x) {
                    for r in 0..rows {
                        let gr = g[r];
                        if gr != 0.0 {
                            let row = &wv[r * cols..(r + 1) * cols];
                            for (d, w) in dx.iter_mut().zip(row) {
                                *d += gr * w;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(s) = self.grad_slot(grads, *a) {
                    add_into(s, g);
                }
                if let Some(s) = self.grad_slot(grads, *b) {
                    add_into(s, g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(s) = self.grad_slot(grads, *a) {
                    add_into(s, g);
                }
                if let Some(s) = self.grad_slot(grads, *b) {
                    s.iter_mut().zip(g).for_each(|(d, x)| *d -= x);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).to_vec(), self.value(*b).to_vec());
                if let Some(s) = self.grad_slot(grads, *a) {
                    for k in 0..g.len() {
                        s[k] += g[k] * bv[k];
                    }
                }
                if let Some(s) = self.grad_slot(grads, *b) {
                    for k in 0..g.len() {
                        s[k] += g[k] * av[k];
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(s) = self.grad_slot(grads, *a) {
                    s.iter_mut().zip(g).for_each(|(d, x)| *d += c * x);
                }
            }
            Op::ScaleBy(a, sc) => {
                let c = self.scalar(*sc);
                if self.needs(*sc) {
                    let dot: f64 = self.value(*a).iter().zip(g).map(|(x, y)| x * y).sum();
                    if let Some(s) = self.grad_slot(grads, *sc) {
                        s[0] += dot;
                    }
                }
                if let Some(s) = self.grad_slot(grads, *a) {
                    s.iter_mut().zip(g).for_each(|(d, x)| *d += c * x);
                }
            }
            Op::LeakyRelu(a, slope) => {
                let slope = *slope;
                let av = self.value(*a).to_vec();
                if let Some(s) = self.grad_slot(grads, *a) {
                    for k in 0..g.len() {
                        s[k] += if av[k] > 0.0 { g[k] } else { slope * g[k] };
                    }
                }
            }
            Op::Tanh(a) => {
                let y = &node.value;
                if let Some(s) = self.grad_slot(grads, *a) {
                    for k in 0..g.len() {
                        s[k] += g[k] * (1.0 - y[k] * y[k]);
                    }
                }
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                if let Some(s) = self.grad_slot(grads, *a) {
                    for k in 0..g.len() {
                        s[k] += g[k] * y[k] * (1.0 - y[k]);
                    }
                }
            }
            Op::Exp(a) => {
                let y = &node.value;
                if let Some(s) = self.grad_slot(grads, *a) {
                    for k in 0..g.len() {
                        s[k] += g[k] * y[k];
                    }
                }
            }
            Op::Log(a) => {
                let av = self.value(*a).to_vec();
                if let Some(s) = self.grad_slot(grads, *a) {
                    for k in 0..g.len() {
                        s[k] += g[k] / av[k];
                    }
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let d = self.dim(p);
                    if let Some(s) = self.grad_slot(grads, p) {
                        add_into(s, &g[off..off + d]);
                    }
                    off += d;
                }
            }
            Op::Slice(a, start) => {
                let start = *start;
                if let Some(s) = self.grad_slot(grads, *a) {
                    add_into(&mut s[start..start + g.len()], g);
                }
            }
            Op::Index(a, k) => {
                if let Some(s) = self.grad_slot(grads, *a) {
                    s[*k] += g[0];
                }
            }
            Op::Dot(a, b) => {
                let (av, bv) = (self.value(*a).to_vec(), self.value(*b).to_vec());
                if let Some(s) = self.grad_slot(grads, *a) {
                    s.iter_mut().zip(&bv).for_each(|(d, x)| *d += g[0] * x);
                }
                if let Some(s) = self.grad_slot(grads, *b) {
                    s.iter_mut().zip(&av).for_each(|(d, x)| *d += g[0] * x);
                }
            }
            Op::Sum(a) => {
                if let Some(s) = self.grad_slot(grads, *a) {
                    s.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let gy: f64 = g.iter().zip(y).map(|(x, z)| x * z).sum();
                if let Some(s) = self.grad_slot(grads, *a) {
                    for k in 0..g.len() {
                        s[k] += y[k] * (g[k] - gy);
                    }
                }
            }
            Op::LogSoftmax(a) => {
                let gs: f64 = g.iter().sum();
                let y = &node.value;
                if let Some(s) = self.grad_slot(grads, *a) {
                    for k in 0..g.len() {
                        s[k] += g[k] - y[k].exp() * gs;
                    }
                }
            }
            Op::WeightedSum { weights, items } => {
                let wv = self.value(*weights).to_vec();
                if self.needs(*weights) {
                    let dw: Vec<f64> = items
                        .iter()
                        .map(|&it| self.value(it).iter().zip(g).map(|(x, y)| x * y).sum())
                        .collect();
                    if let Some(s) = self.grad_slot(grads, *weights) {
                        add_into(s, &dw);
                    }
                }
                for (k, &it) in items.iter().enumerate() {
                    if let Some(s) = self.grad_slot(grads, it) {
                        s.iter_mut().zip(g).for_each(|(d, x)| *d += wv[k] * x);
                    }
                }
            }
            Op::NodeLogProbs { logit, prims } => {
                let mut sm = Vec::new();
                softmax_into(self.value(*prims), &mut sm);
                let np = sm.len();
                let gs: f64 = g[..np].iter().sum();
                if let Some(s) = self.grad_slot(grads, *prims) {
                    for k in 0..np {
                        s[k] += g[k] - sm[k] * gs;
                    }
                }
                if let Some(logit) = logit {
                    let z = self.scalar(*logit);
                    let dz = -sigmoid(z) * gs + sigmoid(-z) * g[np];
                    if let Some(s) = self.grad_slot(grads, *logit) {
                        s[0] += dz;
                    }
                }
            }
            Op::TreeCrossEntropy { p, q } => {
                let (reach, local) = self.tree_terms(p, q);
                let n = p.len();
                // below[i]: Σ over strict descendants m of reach[m]·local[m]
                let mut below = vec![0.0; n];
                for i in (0..n).rev() {
                    let (l, r) = (2 * i + 1, 2 * i + 2);
                    if r < n {
                        below[i] = reach[l] * local[l] + below[l] + reach[r] * local[r] + below[r];
                    }
                }
                let g0 = g[0];
                for i in 0..n {
                    let pv = self.value(p[i]).to_vec();
                    let qv = self.value(q[i]).to_vec();
                    let has_children = 2 * i + 2 < n;
                    if let Some(s) = self.grad_slot(grads, q[i]) {
                        for o in 0..pv.len() {
                            s[o] -= g0 * reach[i] * pv[o].exp();
                        }
                    }
                    if let Some(s) = self.grad_slot(grads, p[i]) {
                        for o in 0..pv.len() {
                            s[o] -= g0 * reach[i] * pv[o].exp() * qv[o];
                        }
                        if has_children {
                            let c = pv.len() - 1;
                            s[c] += g0 * below[i];
                        }
                    }
                }
            }
        }
    }
}
