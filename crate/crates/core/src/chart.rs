//! Inside-outside charts.
//!
//! The vector chart follows the CKY recursion with learned `UNARY`/`COMBINE`
//! functions and attention over split points; outside vectors are built top
//! down from a learned root vector, reusing the inside attention weights.
//! [`SymbolicChart`] is the set-valued analogue over a CFG or a CCG lexicon.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Attention, Graph, Mlp, ParamId, ParamStore, Var};
use crate::types::{Combinator, SemType};

#[derive(Clone, Debug)]
pub struct ParserWeights {
    pub m_lex: usize,
    pub m_node: usize,
    pub unary: Mlp,
    pub combine: Mlp,
    pub split_r: Mlp,
    pub split_l: Mlp,
    pub attend: Attention,
    pub root_outside: ParamId,
    pub acceptability: Mlp,
}

impl ParserWeights {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, m_lex: usize, m_node: usize, wide_heads: bool, rng: &mut R) -> Self {
        let unary = Mlp::new(store, "parser.unary", m_lex, m_node, rng);
        let combine = Mlp::new(store, "parser.combine", 2 * m_node, m_node, rng);
        let split_r = Mlp::new(store, "parser.split_r", 2 * m_node, m_node, rng);
        let split_l = Mlp::new(store, "parser.split_l", 2 * m_node, m_node, rng);
        let attend = Attention::new(store, "parser.attend", 2 * m_node, 2 * m_node, rng);
        let root_outside = store.glorot("parser.root_outside", &[m_node], m_node, 1, rng);
        let acceptability = Mlp::head(store, "parser.acceptability", 2 * m_node, 1, wide_heads, rng);
        ParserWeights { m_lex, m_node, unary, combine, split_r, split_l, attend, root_outside, acceptability }
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut v = Vec::new();
        for m in [&self.unary, &self.combine, &self.split_r, &self.split_l, &self.acceptability] {
            v.extend(m.params());
        }
        v.extend(self.attend.params());
        v.push(self.root_outside);
        v
    }
}

/// Graph handles for one sentence's chart. Spans are half-open `(i, j)`.
#[derive(Clone, Debug)]
pub struct Chart {
    pub n: usize,
    inside: Vec<Option<Var>>,
    outside: Vec<Option<Var>>,
    alpha: Vec<Option<Var>>,
}

impl Chart {
    fn idx(&self, i: usize, j: usize) -> usize {
        i * (self.n + 1) + j
    }

    fn check(&self, i: usize, j: usize) -> Result<()> {
        if i < j && j <= self.n {
            Ok(())
        } else {
            Err(Error::SpanOutOfRange { start: i, end: j, len: self.n })
        }
    }

    pub fn inside(&self, i: usize, j: usize) -> Result<Var> {
        self.check(i, j)?;
        Ok(self.inside[self.idx(i, j)].expect("inside filled for every span"))
    }

    pub fn outside(&self, i: usize, j: usize) -> Result<Var> {
        self.check(i, j)?;
        self.outside[self.idx(i, j)].ok_or(Error::IncompleteChart("outside pass has not been run"))
    }

    /// Attention over the split points `k = i+1 .. j−1` (spans of width ≥ 2).
    pub fn alpha(&self, i: usize, j: usize) -> Result<Option<Var>> {
        self.check(i, j)?;
        Ok(self.alpha[self.idx(i, j)])
    }

    pub fn has_outside(&self) -> bool {
        self.outside[self.idx(0, self.n)].is_some()
    }

    /// All spans of width ≥ `min_width`, by increasing width then start.
    pub fn spans(&self, min_width: usize) -> Vec<(usize, usize)> {
        spans(self.n, min_width)
    }
}

pub fn spans(n: usize, min_width: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for w in min_width.max(1)..=n {
        for i in 0..=n - w {
            out.push((i, i + w));
        }
    }
    out
}

/// Fills inside vectors bottom-up by width.
pub fn inside_pass(g: &mut Graph, w: &ParserWeights, xs: &[Var]) -> Result<Chart> {
    let n = xs.len();
    if n == 0 {
        return Err(Error::EmptySentence);
    }
    let cells = (n + 1) * (n + 1);
    let mut chart = Chart { n, inside: vec![None; cells], outside: vec![None; cells], alpha: vec![None; cells] };
    for (i, &x) in xs.iter().enumerate() {
        let h = w.unary.forward(g, x)?;
        let ix = chart.idx(i, i + 1);
        chart.inside[ix] = Some(h);
    }
    for width in 2..=n {
        for i in 0..=n - width {
            let j = i + width;
            let mut cats = Vec::with_capacity(width - 1);
            let mut combined = Vec::with_capacity(width - 1);
            for k in i + 1..j {
                let cat = g.concat(&[chart.inside(i, k)?, chart.inside(k, j)?]);
                combined.push(w.combine.forward(g, cat)?);
                cats.push(cat);
            }
            let alpha = w.attend.attend(g, &cats)?;
            let h = g.weighted_sum(alpha, &combined)?;
            let ix = chart.idx(i, j);
            chart.inside[ix] = Some(h);
            chart.alpha[ix] = Some(alpha);
        }
    }
    Ok(chart)
}

/// Fills outside vectors top-down by width, from the root vector at `(0, n)`.
/// Width-one spans are included.
pub fn outside_pass(g: &mut Graph, w: &ParserWeights, chart: &mut Chart) -> Result<()> {
    let n = chart.n;
    let root = g.param(w.root_outside);
    let ix = chart.idx(0, n);
    chart.outside[ix] = Some(root);
    for width in (1..n).rev() {
        for i in 0..=n - width {
            let j = i + width;
            let mut weights = Vec::new();
            let mut items = Vec::new();
            for m in j + 1..=n {
                let alpha = chart.alpha(i, m)?.ok_or(Error::IncompleteChart("missing attention"))?;
                weights.push(g.index(alpha, j - i - 1));
                let cat = g.concat(&[chart.outside(i, m)?, chart.inside(j, m)?]);
                items.push(w.split_r.forward(g, cat)?);
            }
            for m in 0..i {
                let alpha = chart.alpha(m, j)?.ok_or(Error::IncompleteChart("missing attention"))?;
                weights.push(g.index(alpha, i - m - 1));
                let cat = g.concat(&[chart.outside(m, j)?, chart.inside(m, i)?]);
                items.push(w.split_l.forward(g, cat)?);
            }
            let wv = g.concat(&weights);
            let h = g.weighted_sum(wv, &items)?;
            let ix = chart.idx(i, j);
            chart.outside[ix] = Some(h);
        }
    }
    Ok(())
}

/// `ĥ(i,j) = h_in(i,j) ⊕ h_out(i,j)`.
pub fn span_representation(g: &mut Graph, chart: &Chart, i: usize, j: usize) -> Result<Var> {
    let a = chart.inside(i, j)?;
    let b = chart.outside(i, j)?;
    Ok(g.concat(&[a, b]))
}

/// `ACCEPTABILITY(ĥ(0,n))`. Only the inside half of the chart is needed,
/// since the root's outside vector is the learned root parameter.
pub fn predict_acceptability(g: &mut Graph, w: &ParserWeights, chart: &Chart) -> Result<Var> {
    let inside = chart.inside(0, chart.n)?;
    let root = g.param(w.root_outside);
    let rep = g.concat(&[inside, root]);
    let y = w.acceptability.forward(g, rep)?;
    Ok(g.index(y, 0))
}

/// Plain-valued copy of a chart.
#[derive(Clone, Debug, PartialEq)]
pub struct SentenceChart {
    pub tokens: Vec<String>,
    pub n: usize,
    pub inside: BTreeMap<(usize, usize), Vec<f64>>,
    pub outside: BTreeMap<(usize, usize), Vec<f64>>,
    pub alpha: BTreeMap<(usize, usize), Vec<f64>>,
}

impl SentenceChart {
    pub fn from_graph(g: &Graph, chart: &Chart, tokens: &[String]) -> Result<SentenceChart> {
        let mut inside = BTreeMap::new();
        let mut outside = BTreeMap::new();
        let mut alpha = BTreeMap::new();
        for (i, j) in chart.spans(1) {
            inside.insert((i, j), g.value(chart.inside(i, j)?).to_vec());
            if chart.has_outside() {
                outside.insert((i, j), g.value(chart.outside(i, j)?).to_vec());
            }
            if let Some(a) = chart.alpha(i, j)? {
                alpha.insert((i, j), g.value(a).to_vec());
            }
        }
        Ok(SentenceChart { tokens: tokens.to_vec(), n: chart.n, inside, outside, alpha })
    }

    pub fn representation(&self, i: usize, j: usize) -> Result<Vec<f64>> {
        let a = self.inside.get(&(i, j)).ok_or(Error::SpanOutOfRange { start: i, end: j, len: self.n })?;
        let b = self.outside.get(&(i, j)).ok_or(Error::IncompleteChart("outside pass has not been run"))?;
        Ok(a.iter().chain(b).copied().collect())
    }
}

/// A grammar usable by the set-valued chart.
pub trait SymbolicGrammar {
    type Label: Ord + Clone + std::fmt::Debug;

    fn lexical(&self, token: &str) -> BTreeSet<Self::Label>;

    /// Labels of a constituent whose left child is `a` and right child `b`.
    fn combine(&self, a: &Self::Label, b: &Self::Label) -> BTreeSet<Self::Label>;

    /// Labels `x` for a left child such that `combine(x, right)` contains `parent`.
    fn split_right(&self, parent: &Self::Label, right: &Self::Label) -> BTreeSet<Self::Label>;

    /// Labels `y` for a right child such that `combine(left, y)` contains `parent`.
    fn split_left(&self, parent: &Self::Label, left: &Self::Label) -> BTreeSet<Self::Label>;
}

/// Binary rules `A → B C` and lexical rules `A → w`.
#[derive(Clone, Debug, Default)]
pub struct CfgGrammar {
    pub lexicon: BTreeMap<String, BTreeSet<String>>,
    pub rules: BTreeSet<(String, String, String)>,
}

impl CfgGrammar {
    pub fn add_lexical(&mut self, lhs: &str, word: &str) {
        self.lexicon.entry(word.to_string()).or_default().insert(lhs.to_string());
    }

    pub fn add_rule(&mut self, lhs: &str, left: &str, right: &str) {
        self.rules.insert((lhs.to_string(), left.to_string(), right.to_string()));
    }
}

impl SymbolicGrammar for CfgGrammar {
    type Label = String;

    fn lexical(&self, token: &str) -> BTreeSet<String> {
        self.lexicon.get(token).cloned().unwrap_or_default()
    }

    fn combine(&self, a: &String, b: &String) -> BTreeSet<String> {
        self.rules.iter().filter(|(_, l, r)| l == a && r == b).map(|(p, _, _)| p.clone()).collect()
    }

    fn split_right(&self, parent: &String, right: &String) -> BTreeSet<String> {
        self.rules.iter().filter(|(p, _, r)| p == parent && r == right).map(|(_, l, _)| l.clone()).collect()
    }

    fn split_left(&self, parent: &String, left: &String) -> BTreeSet<String> {
        self.rules.iter().filter(|(p, l, _)| p == parent && l == left).map(|(_, _, r)| r.clone()).collect()
    }
}

/// A CCG lexicon with a set of binary combinators.
///
/// Outside sets are drawn from a finite type universe: the closure of the
/// lexical (and root) types under the combinators.
#[derive(Clone, Debug)]
pub struct CcgGrammar {
    pub lexicon: BTreeMap<String, BTreeSet<SemType>>,
    pub combinators: Vec<Combinator>,
    universe: BTreeSet<SemType>,
}

impl CcgGrammar {
    pub fn new(lexicon: BTreeMap<String, BTreeSet<SemType>>, combinators: Vec<Combinator>) -> Self {
        let mut g = CcgGrammar { lexicon, combinators, universe: BTreeSet::new() };
        let seed: BTreeSet<SemType> = g.lexicon.values().flatten().cloned().collect();
        g.extend_universe(seed);
        g
    }

    /// Adds types (e.g. a root set) and re-closes the universe.
    pub fn extend_universe(&mut self, types: impl IntoIterator<Item = SemType>) {
        let mut frontier: Vec<SemType> = types.into_iter().filter(|t| !self.universe.contains(t)).collect();
        for t in &frontier {
            self.universe.insert(t.clone());
        }
        while let Some(t) = frontier.pop() {
            let existing: Vec<SemType> = self.universe.iter().cloned().collect();
            for u in existing {
                for r in self.combine_types(&t, &u) {
                    if self.universe.insert(r.clone()) {
                        frontier.push(r);
                    }
                }
            }
        }
    }

    pub fn universe(&self) -> &BTreeSet<SemType> {
        &self.universe
    }

    fn combine_types(&self, a: &SemType, b: &SemType) -> BTreeSet<SemType> {
        self.combinators.iter().flat_map(|c| c.combine(a, b)).collect()
    }
}

impl SymbolicGrammar for CcgGrammar {
    type Label = SemType;

    fn lexical(&self, token: &str) -> BTreeSet<SemType> {
        self.lexicon.get(token).cloned().unwrap_or_default()
    }

    fn combine(&self, a: &SemType, b: &SemType) -> BTreeSet<SemType> {
        self.combine_types(a, b)
    }

    fn split_right(&self, parent: &SemType, right: &SemType) -> BTreeSet<SemType> {
        self.universe.iter().filter(|x| self.combine_types(x, right).contains(parent)).cloned().collect()
    }

    fn split_left(&self, parent: &SemType, left: &SemType) -> BTreeSet<SemType> {
        self.universe.iter().filter(|y| self.combine_types(left, y).contains(parent)).cloned().collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SymbolicChart<L: Ord> {
    pub n: usize,
    inside: Vec<BTreeSet<L>>,
    outside: Vec<BTreeSet<L>>,
}

impl<L: Ord + Clone> SymbolicChart<L> {
    fn idx(&self, i: usize, j: usize) -> usize {
        i * (self.n + 1) + j
    }

    pub fn inside(&self, i: usize, j: usize) -> &BTreeSet<L> {
        &self.inside[self.idx(i, j)]
    }

    pub fn outside(&self, i: usize, j: usize) -> &BTreeSet<L> {
        &self.outside[self.idx(i, j)]
    }

    pub fn derivable(&self) -> bool {
        !self.inside(0, self.n).is_empty()
    }
}

/// CKY-style inside sets `N_ij`.
pub fn symbolic_inside<G: SymbolicGrammar>(grammar: &G, tokens: &[&str]) -> SymbolicChart<G::Label> {
    let n = tokens.len();
    let cells = (n + 1) * (n + 1);
    let mut chart = SymbolicChart { n, inside: vec![BTreeSet::new(); cells], outside: vec![BTreeSet::new(); cells] };
    for (i, tok) in tokens.iter().enumerate() {
        let ix = chart.idx(i, i + 1);
        chart.inside[ix] = grammar.lexical(tok);
    }
    for width in 2..=n {
        for i in 0..=n - width {
            let j = i + width;
            let mut set = BTreeSet::new();
            for k in i + 1..j {
                for a in chart.inside(i, k) {
                    for b in chart.inside(k, j) {
                        set.extend(grammar.combine(a, b));
                    }
                }
            }
            let ix = chart.idx(i, j);
            chart.inside[ix] = set;
        }
    }
    chart
}

/// Outside sets `O_ij`, from `O_0n = roots` downwards.
pub fn symbolic_outside<G: SymbolicGrammar>(
    grammar: &G,
    chart: &mut SymbolicChart<G::Label>,
    roots: &BTreeSet<G::Label>,
) {
    let n = chart.n;
    if n == 0 {
        return;
    }
    let ix = chart.idx(0, n);
    chart.outside[ix] = roots.clone();
    for width in (1..n).rev() {
        for i in 0..=n - width {
            let j = i + width;
            let mut set = BTreeSet::new();
            for m in j + 1..=n {
                for p in chart.outside(i, m) {
                    for r in chart.inside(j, m) {
                        set.extend(grammar.split_right(p, r));
                    }
                }
            }
            for m in 0..i {
                for p in chart.outside(m, j) {
                    for l in chart.inside(m, i) {
                        set.extend(grammar.split_left(p, l));
                    }
                }
            }
            let ix = chart.idx(i, j);
            chart.outside[ix] = set;
        }
    }
}
