//! Interpretation of span representations and the losses that train it.
//!
//! The type coherence loss asks that the identity-decoded type of a span
//! agree, in cross-entropy, with the type produced by combining its children
//! under the controller's weighted combinatory actions. The type constraint
//! loss anchors known spans (and whole sentences) to fixed types.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::chart::{span_representation, Chart};
use crate::error::{Error, Result};
use crate::nn::{Graph, Mlp, ParamId, ParamStore, Var};
use crate::typegrammar::{TypeDistribution, TypeGrammarWeights};
use crate::types::{Combinator, CombinatoryAction, PrimitiveType, RaiseSide, SemType, TypeSignature, ACTIONS};

#[derive(Clone, Debug)]
pub struct InterpreterWeights {
    pub interpret: Mlp,
}

impl InterpreterWeights {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, m_node: usize, m_interp: usize, rng: &mut R) -> Self {
        InterpreterWeights { interpret: Mlp::new(store, "interp.interpret", 2 * m_node, m_interp, rng) }
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.interpret.params().to_vec()
    }
}

/// `λ = INTERPRET(ĥ)`.
pub fn interpret_span(g: &mut Graph, w: &InterpreterWeights, rep: Var) -> Result<Var> {
    w.interpret.forward(g, rep)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AnchorPattern {
    Sentence,
    Tokens(Vec<String>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Anchor {
    pub pattern: AnchorPattern,
    pub ty: SemType,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum PatternRepr {
    Keyword(String),
    Tokens(Vec<String>),
}

#[derive(Serialize, Deserialize)]
struct AnchorRepr {
    pattern: PatternRepr,
    #[serde(rename = "type")]
    ty: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnchorTable {
    pub anchors: Vec<Anchor>,
}

impl AnchorTable {
    /// Sentences are propositions, indefinites are generalized quantifiers and
    /// the listed verb phrases are properties.
    pub fn default_table() -> AnchorTable {
        let p = "<s,t>";
        let vp = "<e,<s,t>>";
        let gq = "<<e,<s,t>>,<s,t>>";
        let mut anchors = vec![Anchor { pattern: AnchorPattern::Sentence, ty: parse(p) }];
        for w in ["someone", "something"] {
            anchors.push(Anchor { pattern: AnchorPattern::Tokens(vec![w.into()]), ty: parse(gq) });
        }
        for phrase in ["do something", "have something", "happen", "happened"] {
            let toks = phrase.split(' ').map(String::from).collect();
            anchors.push(Anchor { pattern: AnchorPattern::Tokens(toks), ty: parse(vp) });
        }
        AnchorTable { anchors }
    }

    pub fn from_json(text: &str, sig: &TypeSignature) -> Result<AnchorTable> {
        let raw: Vec<AnchorRepr> = serde_json::from_str(text)?;
        let mut anchors = Vec::with_capacity(raw.len());
        for a in raw {
            let pattern = match a.pattern {
                PatternRepr::Keyword(k) if k == "SENTENCE" => AnchorPattern::Sentence,
                PatternRepr::Keyword(k) => return Err(Error::Config(format!("unknown anchor pattern {k:?}"))),
                PatternRepr::Tokens(t) if t.is_empty() => return Err(Error::Config("empty anchor pattern".into())),
                PatternRepr::Tokens(t) => AnchorPattern::Tokens(t),
            };
            anchors.push(Anchor { pattern, ty: sig.parse(&a.ty)? });
        }
        Ok(AnchorTable { anchors })
    }

    pub fn to_json(&self, sig: &TypeSignature) -> Result<String> {
        let raw: Vec<AnchorRepr> = self
            .anchors
            .iter()
            .map(|a| AnchorRepr {
                pattern: match &a.pattern {
                    AnchorPattern::Sentence => PatternRepr::Keyword("SENTENCE".into()),
                    AnchorPattern::Tokens(t) => PatternRepr::Tokens(t.clone()),
                },
                ty: sig.format(&a.ty),
            })
            .collect();
        Ok(serde_json::to_string_pretty(&raw)?)
    }

    pub fn load(path: &Path, sig: &TypeSignature) -> Result<AnchorTable> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, sig)
    }

    pub fn max_depth(&self) -> usize {
        self.anchors.iter().map(|a| a.ty.depth()).max().unwrap_or(0)
    }

    /// Every `(start, end, type)` whose span matches an anchor exactly.
    pub fn matches(&self, tokens: &[String]) -> Vec<(usize, usize, SemType)> {
        let n = tokens.len();
        let mut out = Vec::new();
        for a in &self.anchors {
            match &a.pattern {
                AnchorPattern::Sentence => out.push((0, n, a.ty.clone())),
                AnchorPattern::Tokens(p) => {
                    if p.len() > n {
                        continue;
                    }
                    for i in 0..=n - p.len() {
                        if tokens[i..i + p.len()] == p[..] {
                            out.push((i, i + p.len(), a.ty.clone()));
                        }
                    }
                }
            }
        }
        out
    }
}

fn parse(s: &str) -> SemType {
    crate::types::parse_type(s).expect("built-in anchor type")
}

/// Exact truncated cross-entropy between two plain distributions.
pub fn truncated_cross_entropy(p: &TypeDistribution, q: &TypeDistribution) -> Result<f64> {
    p.cross_entropy(q)
}

/// Differentiable counterpart over unrolled decoder nodes.
pub fn truncated_cross_entropy_graph(g: &mut Graph, p: &[Var], q: &[Var]) -> Result<Var> {
    if p.len() != q.len() {
        return Err(Error::DepthMismatch(p.len(), q.len()));
    }
    g.tree_cross_entropy(p, q)
}

/// Interpretation vectors and identity-decoded parent distributions of one
/// sentence, built lazily per span.
pub struct Interpretation<'c> {
    pub chart: &'c Chart,
    lambdas: HashMap<(usize, usize), Var>,
    parents: HashMap<(usize, usize), Vec<Var>>,
}

impl<'c> Interpretation<'c> {
    pub fn new(chart: &'c Chart) -> Self {
        Interpretation { chart, lambdas: HashMap::new(), parents: HashMap::new() }
    }

    pub fn lambda(&mut self, g: &mut Graph, w: &InterpreterWeights, i: usize, j: usize) -> Result<Var> {
        if let Some(&v) = self.lambdas.get(&(i, j)) {
            return Ok(v);
        }
        let rep = span_representation(g, self.chart, i, j)?;
        let v = interpret_span(g, w, rep)?;
        self.lambdas.insert((i, j), v);
        Ok(v)
    }

    /// Node log-probabilities of the identity decoder on `λ_ij`.
    pub fn parent(
        &mut self,
        g: &mut Graph,
        w: &InterpreterWeights,
        tw: &TypeGrammarWeights,
        i: usize,
        j: usize,
    ) -> Result<Vec<Var>> {
        if let Some(v) = self.parents.get(&(i, j)) {
            return Ok(v.clone());
        }
        let l = self.lambda(g, w, i, j)?;
        let nodes = tw.unroll(g, Combinator::Identity, &[l])?;
        self.parents.insert((i, j), nodes.clone());
        Ok(nodes)
    }
}

/// Type distribution(s) produced by one combinatory action: a single
/// decoder unroll, or a mixture over raising primitives.
pub struct ChildrenDistribution {
    pub action: CombinatoryAction,
    /// Raising probabilities when the action raises a side.
    pub mixture: Option<Var>,
    pub components: Vec<Vec<Var>>,
}

impl ChildrenDistribution {
    pub fn plain(&self, g: &Graph, depth: usize) -> Vec<TypeDistribution> {
        self.components.iter().map(|c| TypeDistribution::from_graph(g, c, depth)).collect()
    }
}

pub fn children_distribution(
    g: &mut Graph,
    tw: &TypeGrammarWeights,
    action: CombinatoryAction,
    left: Var,
    right: Var,
) -> Result<ChildrenDistribution> {
    let c = action.combinator;
    if c == Combinator::Identity {
        return Err(Error::Config("the identity combinator is not a binary action".into()));
    }
    match action.raise {
        RaiseSide::None => {
            let nodes = tw.unroll(g, c, &[left, right])?;
            Ok(ChildrenDistribution { action, mixture: None, components: vec![nodes] })
        }
        side => {
            let (raised, partner) = if side == RaiseSide::Left { (left, right) } else { (right, left) };
            let mixture = tw.raise_probs(g, raised, partner)?;
            let mut components = Vec::with_capacity(tw.num_primitives());
            for r in 0..tw.num_primitives() {
                let rv = tw.vector_raise(g, raised, PrimitiveType(r as u8))?;
                let inputs = if side == RaiseSide::Left { [rv, right] } else { [left, rv] };
                components.push(tw.unroll(g, c, &inputs)?);
            }
            Ok(ChildrenDistribution { action, mixture: Some(mixture), components })
        }
    }
}

/// `H(parent, children_a)`, taking the raise-weighted expectation over
/// components for raising actions.
fn action_cross_entropy(g: &mut Graph, parent: &[Var], children: &ChildrenDistribution) -> Result<Var> {
    let hs = children
        .components
        .iter()
        .map(|c| truncated_cross_entropy_graph(g, parent, c))
        .collect::<Result<Vec<_>>>()?;
    match children.mixture {
        None => Ok(hs[0]),
        Some(m) => {
            let h = g.concat(&hs);
            g.dot(m, h)
        }
    }
}

/// `Σ_a φ_a · H(P_parent(·|λ_ij), P_children_a(·|λ_ik, λ_kj))`.
pub fn pair_loss(
    g: &mut Graph,
    w: &InterpreterWeights,
    tw: &TypeGrammarWeights,
    interp: &mut Interpretation,
    i: usize,
    j: usize,
    k: usize,
) -> Result<Var> {
    if !(i < k && k < j) {
        return Err(Error::SpanOutOfRange { start: i, end: j, len: interp.chart.n });
    }
    let parent = interp.parent(g, w, tw, i, j)?;
    let left = interp.lambda(g, w, i, k)?;
    let right = interp.lambda(g, w, k, j)?;
    let phi = tw.action_probs(g, left, right)?;
    let mut hs = Vec::with_capacity(ACTIONS.len());
    for action in ACTIONS {
        let children = children_distribution(g, tw, action, left, right)?;
        hs.push(action_cross_entropy(g, &parent, &children)?);
    }
    let h = g.concat(&hs);
    g.dot(phi, h)
}

/// `Σ_k α_ijk · pair_loss(i, j, k)`.
pub fn expr_loss(
    g: &mut Graph,
    w: &InterpreterWeights,
    tw: &TypeGrammarWeights,
    interp: &mut Interpretation,
    i: usize,
    j: usize,
) -> Result<Var> {
    let alpha = interp.chart.alpha(i, j)?.ok_or(Error::SpanOutOfRange { start: i, end: j, len: interp.chart.n })?;
    let pairs = (i + 1..j).map(|k| pair_loss(g, w, tw, interp, i, j, k)).collect::<Result<Vec<_>>>()?;
    let p = g.concat(&pairs);
    g.dot(alpha, p)
}

/// Coherence loss summed over every span of width ≥ 2.
pub fn sentence_loss(
    g: &mut Graph,
    w: &InterpreterWeights,
    tw: &TypeGrammarWeights,
    interp: &mut Interpretation,
) -> Result<Var> {
    let spans = interp.chart.spans(2);
    if spans.is_empty() {
        return Ok(g.input(vec![0.0]));
    }
    let terms = spans.iter().map(|&(i, j)| expr_loss(g, w, tw, interp, i, j)).collect::<Result<Vec<_>>>()?;
    Ok(g.sum_scalars(&terms))
}

/// `Σ −log P_identity(anchor type | λ_span)` over anchor-matching spans.
pub fn constraint_loss(
    g: &mut Graph,
    w: &InterpreterWeights,
    tw: &TypeGrammarWeights,
    interp: &mut Interpretation,
    tokens: &[String],
    anchors: &AnchorTable,
) -> Result<Var> {
    let matches = anchors.matches(tokens);
    if matches.is_empty() {
        return Ok(g.input(vec![0.0]));
    }
    let mut terms = Vec::with_capacity(matches.len());
    for (i, j, ty) in matches {
        let l = interp.lambda(g, w, i, j)?;
        let lp = tw.type_log_prob(g, Combinator::Identity, &[l], &ty)?;
        terms.push(g.scale(lp, -1.0));
    }
    Ok(g.sum_scalars(&terms))
}
