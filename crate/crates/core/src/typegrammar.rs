//! The vector-space type grammar.
//!
//! Types are embedded bottom-up with `WRAP`/`CONSTRUCT`; each combinator
//! (identity, apply, compose) owns a tree decoder that unrolls a start state
//! into a depth-truncated distribution over types. A controller scores the
//! six combinatory actions and the primitive used for raising.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Graph, Mlp, ParamId, ParamStore, Var};
use crate::types::{Combinator, ConstructorId, PrimitiveType, SemType, TypeSignature, ACTIONS};

pub const DEFAULT_DEPTH: usize = 4;

/// Number of nodes in a complete binary tree of the given depth.
pub fn node_count(depth: usize) -> usize {
    (1 << (depth + 1)) - 1
}

fn node_depth(n: usize) -> usize {
    (usize::BITS - 1 - (n + 1).leading_zeros()) as usize
}

/// One tree decoder: `STRUCTURE`, `PRIMITIVE` and `FACTOR` over a state of
/// fixed width.
#[derive(Clone, Debug)]
pub struct Decoder {
    pub structure: Mlp,
    pub primitive: Mlp,
    pub factor: Mlp,
    pub state: usize,
}

impl Decoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        state: usize,
        num_primitives: usize,
        wide: bool,
        rng: &mut R,
    ) -> Decoder {
        let structure = Mlp::head(store, &format!("{name}.structure"), state, 1, wide, rng);
        let primitive = Mlp::head(store, &format!("{name}.primitive"), state, num_primitives, wide, rng);
        let factor = Mlp::new(store, &format!("{name}.factor"), state, 2 * state, rng);
        Decoder { structure, primitive, factor, state }
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut v = self.structure.params().to_vec();
        v.extend(self.primitive.params());
        v.extend(self.factor.params());
        v
    }

    fn node(&self, g: &mut Graph, state: Var, terminal: bool) -> Result<Var> {
        let prims = self.primitive.forward(g, state)?;
        let logit = if terminal { None } else { Some(self.structure.forward(g, state)?) };
        Ok(g.node_log_probs(logit, prims))
    }

    fn children(&self, g: &mut Graph, state: Var) -> Result<(Var, Var)> {
        let f = self.factor.forward(g, state)?;
        Ok((g.slice(f, 0, self.state)?, g.slice(f, self.state, self.state)?))
    }

    /// Node log-probability vectors of the full tree, in heap order.
    pub fn unroll(&self, g: &mut Graph, start: Var, depth: usize) -> Result<Vec<Var>> {
        if g.dim(start) != self.state {
            return Err(Error::Shape { expected: vec![self.state], actual: vec![g.dim(start)] });
        }
        let n = node_count(depth);
        let mut states = Vec::with_capacity(n);
        let mut nodes = Vec::with_capacity(n);
        states.push(start);
        for i in 0..n {
            let terminal = node_depth(i) == depth;
            nodes.push(self.node(g, states[i], terminal)?);
            if !terminal {
                let (l, r) = self.children(g, states[i])?;
                states.push(l);
                states.push(r);
            }
        }
        Ok(nodes)
    }

    /// `log P(t)` evaluating only the nodes that `t` occupies.
    pub fn log_prob(&self, g: &mut Graph, start: Var, t: &SemType, depth: usize) -> Result<Var> {
        if t.depth() > depth {
            return Err(Error::UnsupportedDepth { depth: t.depth(), max: depth });
        }
        if g.dim(start) != self.state {
            return Err(Error::Shape { expected: vec![self.state], actual: vec![g.dim(start)] });
        }
        self.log_prob_at(g, start, t, 0, depth)
    }

    fn log_prob_at(&self, g: &mut Graph, state: Var, t: &SemType, d: usize, depth: usize) -> Result<Var> {
        let lp = self.node(g, state, d == depth)?;
        match t {
            SemType::Primitive(p) => Ok(g.index(lp, p.index())),
            SemType::Constructed { left, right, .. } => {
                let c = g.index(lp, g.dim(lp) - 1);
                let (ls, rs) = self.children(g, state)?;
                let l = self.log_prob_at(g, ls, left, d + 1, depth)?;
                let r = self.log_prob_at(g, rs, right, d + 1, depth)?;
                let cl = g.add(c, l)?;
                g.add(cl, r)
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct TypeGrammarWeights {
    pub signature: TypeSignature,
    pub dim: usize,
    pub depth: usize,
    pub prim_emb: ParamId,
    pub ctor_emb: ParamId,
    pub wrap: Mlp,
    pub construct: Mlp,
    pub identity: Decoder,
    pub apply: Decoder,
    pub compose: Decoder,
    pub action: Mlp,
    /// Scores raising primitives from the side being raised and its partner.
    pub raise: Mlp,
}

impl TypeGrammarWeights {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        signature: TypeSignature,
        dim: usize,
        depth: usize,
        wide_heads: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if signature.num_constructors() != 1 {
            return Err(Error::Config("the type grammar supports exactly one type constructor".into()));
        }
        let np = signature.num_primitives();
        let prim_emb = store.glorot("types.prim_emb", &[np, dim], dim, dim, rng);
        let ctor_emb = store.glorot("types.ctor_emb", &[1, dim], dim, dim, rng);
        let wrap = Mlp::new(store, "types.wrap", dim, dim, rng);
        let construct = Mlp::new(store, "types.construct", 3 * dim, dim, rng);
        let identity = Decoder::new(store, "types.identity", dim, np, wide_heads, rng);
        let apply = Decoder::new(store, "types.apply", 2 * dim, np, wide_heads, rng);
        let compose = Decoder::new(store, "types.compose", 2 * dim, np, wide_heads, rng);
        let action = Mlp::head(store, "types.action", 2 * dim, ACTIONS.len(), wide_heads, rng);
        let raise = Mlp::head(store, "types.raise", 2 * dim, np, wide_heads, rng);
        Ok(TypeGrammarWeights {
            signature,
            dim,
            depth,
            prim_emb,
            ctor_emb,
            wrap,
            construct,
            identity,
            apply,
            compose,
            action,
            raise,
        })
    }

    pub fn num_primitives(&self) -> usize {
        self.signature.num_primitives()
    }

    pub fn decoder(&self, c: Combinator) -> &Decoder {
        match c {
            Combinator::Identity => &self.identity,
            Combinator::Apply => &self.apply,
            Combinator::Compose => &self.compose,
        }
    }

    pub fn encoder_params(&self) -> Vec<ParamId> {
        let mut v = vec![self.prim_emb, self.ctor_emb];
        v.extend(self.wrap.params());
        v.extend(self.construct.params());
        v
    }

    pub fn controller_params(&self) -> Vec<ParamId> {
        let mut v = self.action.params().to_vec();
        v.extend(self.raise.params());
        v
    }

    pub fn all_params(&self) -> Vec<ParamId> {
        let mut v = self.encoder_params();
        v.extend(self.identity.params());
        v.extend(self.apply.params());
        v.extend(self.compose.params());
        v.extend(self.controller_params());
        v
    }

    pub fn wrap_primitive(&self, g: &mut Graph, p: PrimitiveType) -> Result<Var> {
        let x = g.row(self.prim_emb, p.index());
        self.wrap.forward(g, x)
    }

    fn construct_from(&self, g: &mut Graph, ctor: ConstructorId, left: Var, right: Var) -> Result<Var> {
        let x = g.row(self.ctor_emb, ctor.0 as usize);
        let cat = g.concat(&[x, left, right]);
        self.construct.forward(g, cat)
    }

    pub fn encode_type(&self, g: &mut Graph, t: &SemType) -> Result<Var> {
        match t {
            SemType::Primitive(p) => self.wrap_primitive(g, *p),
            SemType::Constructed { ctor, left, right } => {
                let l = self.encode_type(g, left)?;
                let r = self.encode_type(g, right)?;
                self.construct_from(g, *ctor, l, r)
            }
        }
    }

    /// Encodes the tree `[[τ τ_r] τ_r]`: the embedding-level counterpart of
    /// raising `τ` over the primitive `r`.
    pub fn vector_raise(&self, g: &mut Graph, tau: Var, r: PrimitiveType) -> Result<Var> {
        let inner_r = self.wrap_primitive(g, r)?;
        let inner = self.construct_from(g, ConstructorId::ARROW, tau, inner_r)?;
        let outer_r = self.wrap_primitive(g, r)?;
        self.construct_from(g, ConstructorId::ARROW, inner, outer_r)
    }

    /// Start state of a decoder: one vector for identity, a concatenation otherwise.
    pub fn start_state(&self, g: &mut Graph, c: Combinator, inputs: &[Var]) -> Result<Var> {
        if inputs.len() != c.arity() {
            return Err(Error::Shape { expected: vec![c.arity()], actual: vec![inputs.len()] });
        }
        for &v in inputs {
            if g.dim(v) != self.dim {
                return Err(Error::Shape { expected: vec![self.dim], actual: vec![g.dim(v)] });
            }
        }
        Ok(if inputs.len() == 1 { inputs[0] } else { g.concat(inputs) })
    }

    pub fn unroll(&self, g: &mut Graph, c: Combinator, inputs: &[Var]) -> Result<Vec<Var>> {
        let s = self.start_state(g, c, inputs)?;
        self.decoder(c).unroll(g, s, self.depth)
    }

    pub fn type_log_prob(&self, g: &mut Graph, c: Combinator, inputs: &[Var], t: &SemType) -> Result<Var> {
        let s = self.start_state(g, c, inputs)?;
        self.decoder(c).log_prob(g, s, t, self.depth)
    }

    /// Plain distribution produced by decoder `c` on `inputs`.
    pub fn distribution(&self, g: &mut Graph, c: Combinator, inputs: &[Var]) -> Result<TypeDistribution> {
        let nodes = self.unroll(g, c, inputs)?;
        Ok(TypeDistribution::from_graph(g, &nodes, self.depth))
    }

    fn check_pair(&self, g: &Graph, a: Var, b: Var) -> Result<()> {
        for v in [a, b] {
            if g.dim(v) != self.dim {
                return Err(Error::Shape { expected: vec![self.dim], actual: vec![g.dim(v)] });
            }
        }
        Ok(())
    }

    /// Distribution over the six combinatory actions.
    pub fn action_probs(&self, g: &mut Graph, left: Var, right: Var) -> Result<Var> {
        self.check_pair(g, left, right)?;
        let x = g.concat(&[left, right]);
        let z = self.action.forward(g, x)?;
        Ok(g.softmax(z))
    }

    /// Distribution over raising primitives for `raised`, given the vector it
    /// is combined with.
    pub fn raise_probs(&self, g: &mut Graph, raised: Var, partner: Var) -> Result<Var> {
        self.check_pair(g, raised, partner)?;
        let x = g.concat(&[raised, partner]);
        let z = self.raise.forward(g, x)?;
        Ok(g.softmax(z))
    }
}

/// A depth-truncated, node-factored distribution over types, stored as one
/// log-probability vector per node of a complete binary tree (heap order).
/// Non-terminal nodes hold `|P|+1` entries (primitives, then "complex");
/// terminal nodes hold `|P|`.
#[derive(Clone, Debug, PartialEq)]
pub struct TypeDistribution {
    pub depth: usize,
    pub nodes: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
struct Ranked {
    score: f64,
    ty: SemType,
}

impl Eq for Ranked {}

impl Ord for Ranked {
    /// Higher score first, then earlier enumeration order.
    fn cmp(&self, other: &Self) -> Ordering {
        self.score.total_cmp(&other.score).then_with(|| other.ty.cmp(&self.ty))
    }
}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(PartialEq, Eq)]
struct Frontier {
    item: Ranked,
    i: usize,
    j: usize,
}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        self.item.cmp(&other.item)
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl TypeDistribution {
    pub fn from_graph(g: &Graph, nodes: &[Var], depth: usize) -> TypeDistribution {
        TypeDistribution { depth, nodes: nodes.iter().map(|&v| g.value(v).to_vec()).collect() }
    }

    /// Builds a distribution from per-node `θ_complex` and primitive
    /// probabilities; `θ_complex` at terminal nodes is ignored.
    pub fn from_probs(depth: usize, complex: &[f64], prims: &[Vec<f64>]) -> Result<TypeDistribution> {
        let n = node_count(depth);
        if complex.len() != n || prims.len() != n {
            return Err(Error::Shape { expected: vec![n], actual: vec![complex.len(), prims.len()] });
        }
        let nodes = (0..n)
            .map(|i| {
                if node_depth(i) == depth {
                    prims[i].iter().map(|p| p.ln()).collect()
                } else {
                    let stop = (1.0 - complex[i]).ln();
                    let mut v: Vec<f64> = prims[i].iter().map(|p| stop + p.ln()).collect();
                    v.push(complex[i].ln());
                    v
                }
            })
            .collect();
        Ok(TypeDistribution { depth, nodes })
    }

    /// A random distribution with θ_complex uniform in (0.05, 0.95) and
    /// Dirichlet(1)-like primitive probabilities.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, depth: usize, num_primitives: usize) -> TypeDistribution {
        let n = node_count(depth);
        let complex: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..0.95)).collect();
        let prims: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let raw: Vec<f64> = (0..num_primitives).map(|_| -rng.gen_range(1e-9f64..1.0).ln()).collect();
                let z: f64 = raw.iter().sum();
                raw.into_iter().map(|x| x / z).collect()
            })
            .collect();
        Self::from_probs(depth, &complex, &prims).expect("consistent sizes")
    }

    pub fn num_primitives(&self) -> usize {
        self.nodes[self.nodes.len() - 1].len()
    }

    fn is_terminal(&self, n: usize) -> bool {
        node_depth(n) == self.depth
    }

    pub fn theta_complex(&self, n: usize) -> f64 {
        if self.is_terminal(n) {
            0.0
        } else {
            self.nodes[n][self.num_primitives()].exp()
        }
    }

    /// Normalized primitive probabilities at node `n`.
    pub fn theta_primitive(&self, n: usize) -> Vec<f64> {
        let stop = 1.0 - self.theta_complex(n);
        self.nodes[n][..self.num_primitives()].iter().map(|l| l.exp() / stop).collect()
    }

    /// `(1−θc)·Σθp + θc·total(L)·total(R)` evaluated at the root.
    pub fn total_mass(&self) -> f64 {
        self.mass_at(0)
    }

    fn mass_at(&self, n: usize) -> f64 {
        let np = self.num_primitives();
        let prim: f64 = self.nodes[n][..np].iter().map(|l| l.exp()).sum();
        if self.is_terminal(n) {
            prim
        } else {
            prim + self.nodes[n][np].exp() * self.mass_at(2 * n + 1) * self.mass_at(2 * n + 2)
        }
    }

    pub fn log_prob(&self, t: &SemType) -> Result<f64> {
        if t.depth() > self.depth {
            return Err(Error::UnsupportedDepth { depth: t.depth(), max: self.depth });
        }
        if let Some(p) = first_primitive_out_of_range(t, self.num_primitives()) {
            return Err(Error::Shape { expected: vec![self.num_primitives()], actual: vec![p] });
        }
        Ok(self.log_prob_at(0, t))
    }

    fn log_prob_at(&self, n: usize, t: &SemType) -> f64 {
        match t {
            SemType::Primitive(p) => self.nodes[n][p.index()],
            SemType::Constructed { left, right, .. } => {
                self.nodes[n][self.num_primitives()] + self.log_prob_at(2 * n + 1, left) + self.log_prob_at(2 * n + 2, right)
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SemType {
        self.sample_at(0, rng)
    }

    fn sample_at<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> SemType {
        let np = self.num_primitives();
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for k in 0..np {
            acc += self.nodes[n][k].exp();
            if u < acc {
                return SemType::prim(k as u8);
            }
        }
        if self.is_terminal(n) {
            // rounding slack: fall back to the last primitive
            return SemType::prim((np - 1) as u8);
        }
        let l = self.sample_at(2 * n + 1, rng);
        let r = self.sample_at(2 * n + 2, rng);
        SemType::func(l, r)
    }

    /// Exact top-`k` types by probability (ties in enumeration order).
    pub fn k_best(&self, k: usize) -> Vec<(SemType, f64)> {
        if k == 0 {
            return Vec::new();
        }
        self.k_best_at(0, k).into_iter().map(|r| (r.ty, r.score)).collect()
    }

    fn k_best_at(&self, n: usize, k: usize) -> Vec<Ranked> {
        let np = self.num_primitives();
        let mut prims: Vec<Ranked> =
            (0..np).map(|p| Ranked { score: self.nodes[n][p], ty: SemType::prim(p as u8) }).collect();
        prims.sort_by(|a, b| b.cmp(a));
        if self.is_terminal(n) {
            prims.truncate(k);
            return prims;
        }
        let lc = self.nodes[n][np];
        let left = self.k_best_at(2 * n + 1, k);
        let right = self.k_best_at(2 * n + 2, k);
        let make = |i: usize, j: usize| Frontier {
            item: Ranked {
                score: lc + left[i].score + right[j].score,
                ty: SemType::func(left[i].ty.clone(), right[j].ty.clone()),
            },
            i,
            j,
        };
        let mut heap = BinaryHeap::new();
        let mut seen = HashSet::new();
        heap.push(make(0, 0));
        seen.insert((0, 0));
        let mut out = Vec::with_capacity(k);
        let mut pi = 0;
        while out.len() < k {
            let take_prim = match (prims.get(pi), heap.peek()) {
                (Some(p), Some(c)) => *p > c.item,
                (Some(_), None) => true,
                (None, Some(_)) => false,
                (None, None) => break,
            };
            if take_prim {
                out.push(prims[pi].clone());
                pi += 1;
                continue;
            }
            let top = heap.pop().expect("peeked");
            for (i, j) in [(top.i + 1, top.j), (top.i, top.j + 1)] {
                if i < left.len() && j < right.len() && seen.insert((i, j)) {
                    heap.push(make(i, j));
                }
            }
            out.push(top.item);
        }
        out
    }

    /// Exact `−Σ_t P(t) log Q(t)` over all trees of depth ≤ D by the paired
    /// node recursion.
    pub fn cross_entropy(&self, q: &TypeDistribution) -> Result<f64> {
        if self.depth != q.depth || self.num_primitives() != q.num_primitives() {
            return Err(Error::DepthMismatch(self.depth, q.depth));
        }
        Ok(self.cross_entropy_at(q, 0))
    }

    fn cross_entropy_at(&self, q: &TypeDistribution, n: usize) -> f64 {
        let local: f64 = -self.nodes[n].iter().zip(&q.nodes[n]).map(|(p, q)| p.exp() * q).sum::<f64>();
        if self.is_terminal(n) {
            return local;
        }
        let c = self.theta_complex(n);
        local + c * (self.cross_entropy_at(q, 2 * n + 1) + self.cross_entropy_at(q, 2 * n + 2))
    }

    pub fn entropy(&self) -> f64 {
        self.cross_entropy_at(self, 0)
    }
}

fn first_primitive_out_of_range(t: &SemType, np: usize) -> Option<usize> {
    match t {
        SemType::Primitive(p) if p.index() >= np => Some(p.index()),
        SemType::Primitive(_) => None,
        SemType::Constructed { left, right, .. } => {
            first_primitive_out_of_range(left, np).or_else(|| first_primitive_out_of_range(right, np))
        }
    }
}
