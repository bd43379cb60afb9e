//! Reference implementations used as test oracles. They are written for
//! clarity, not speed, and share no code with the library algorithms.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use ccg_induce::nn::{Attention, Mlp, ParamId, ParamStore, LEAKY_SLOPE};
use ccg_induce::typegrammar::TypeDistribution;
use ccg_induce::types::SemType;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

/// Overwrites every parameter with uniform noise in `[-scale, scale)`.
pub fn randomize(store: &mut ParamStore, rng: &mut ChaCha8Rng, scale: f64) {
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        for v in store.value_mut(id) {
            *v = rng.gen_range(-scale..scale);
        }
    }
}

fn matvec(w: &[f64], rows: usize, x: &[f64]) -> Vec<f64> {
    let cols = x.len();
    assert_eq!(w.len(), rows * cols);
    (0..rows).map(|r| (0..cols).map(|c| w[r * cols + c] * x[c]).sum()).collect()
}

pub fn mlp(store: &ParamStore, m: &Mlp, x: &[f64]) -> Vec<f64> {
    let [w1, b1, w2, b2] = m.params();
    let h: Vec<f64> = matvec(store.value(w2), m.hidden, x)
        .iter()
        .zip(store.value(b2))
        .map(|(a, b)| if a + b > 0.0 { a + b } else { LEAKY_SLOPE * (a + b) })
        .collect();
    matvec(store.value(w1), m.output, &h).iter().zip(store.value(b1)).map(|(a, b)| a + b).collect()
}

pub fn attention(store: &ParamStore, a: &Attention, rows: &[Vec<f64>]) -> Vec<f64> {
    let v = store.value(a.v);
    let scores: Vec<f64> = rows
        .iter()
        .map(|r| matvec(store.value(a.w), a.dim, r).iter().zip(v).map(|(u, v)| u.tanh() * v).sum())
        .collect();
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
    scores.iter().map(|s| (s - m).exp() / z).collect()
}

pub fn cat(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().chain(b).copied().collect()
}

// ---- types -----------------------------------------------------------------

pub fn arrow(t: &SemType) -> Option<(SemType, SemType)> {
    match t {
        SemType::Constructed { left, right, .. } => Some(((**left).clone(), (**right).clone())),
        SemType::Primitive(_) => None,
    }
}

/// Undirected application and first-order composition, straight from their
/// definitions.
pub fn combine(a: &SemType, b: &SemType, apply: bool, compose: bool) -> BTreeSet<SemType> {
    let mut out = BTreeSet::new();
    for (f, x) in [(a, b), (b, a)] {
        if let Some((dom, ran)) = arrow(f) {
            if apply && dom == *x {
                out.insert(ran.clone());
            }
            if compose {
                if let Some((dom2, ran2)) = arrow(x) {
                    // x = <dom2, ran2>, f = <dom, ran>: x then f when ran2 == dom
                    if ran2 == dom {
                        out.insert(SemType::func(dom2, ran));
                    }
                }
            }
        }
    }
    out
}

/// All types of depth ≤ `depth` over `np` primitives (single constructor).
pub fn all_types(np: u8, depth: usize) -> Vec<SemType> {
    let mut out: Vec<SemType> = (0..np).map(SemType::prim).collect();
    if depth > 0 {
        let sub = all_types(np, depth - 1);
        for l in &sub {
            for r in &sub {
                out.push(SemType::func(l.clone(), r.clone()));
            }
        }
    }
    out
}

/// Probability of `t` under node-factored log-probabilities, walking the
/// heap-ordered tree from the root.
pub fn prob(d: &TypeDistribution, t: &SemType) -> f64 {
    fn go(d: &TypeDistribution, node: usize, t: &SemType) -> f64 {
        let np = d.nodes[d.nodes.len() - 1].len();
        match t {
            SemType::Primitive(p) => d.nodes[node][p.0 as usize].exp(),
            SemType::Constructed { left, right, .. } => {
                d.nodes[node][np].exp() * go(d, 2 * node + 1, left) * go(d, 2 * node + 2, right)
            }
        }
    }
    go(d, 0, t)
}

pub fn brute_cross_entropy(p: &TypeDistribution, q: &TypeDistribution) -> f64 {
    let np = p.nodes[p.nodes.len() - 1].len() as u8;
    all_types(np, p.depth).iter().map(|t| -prob(p, t) * prob(q, t).ln()).sum()
}

// ---- symbolic parsing --------------------------------------------------------

/// Labels derivable over `leaves` by any bracketing, via explicit recursion
/// over every binary tree.
pub fn brute_force<L: Ord + Clone>(leaves: &[BTreeSet<L>], rule: &dyn Fn(&L, &L) -> BTreeSet<L>) -> BTreeSet<L> {
    if leaves.len() == 1 {
        return leaves[0].clone();
    }
    let mut out = BTreeSet::new();
    for k in 1..leaves.len() {
        let left = brute_force(&leaves[..k], rule);
        let right = brute_force(&leaves[k..], rule);
        for a in &left {
            for b in &right {
                out.extend(rule(a, b));
            }
        }
    }
    out
}

/// Labels `x` such that replacing span `(i, j)` by a single leaf `{x}`
/// still derives one of `roots`.
pub fn brute_outside<L: Ord + Clone>(
    leaves: &[BTreeSet<L>],
    i: usize,
    j: usize,
    candidates: &BTreeSet<L>,
    roots: &BTreeSet<L>,
    rule: &dyn Fn(&L, &L) -> BTreeSet<L>,
) -> BTreeSet<L> {
    candidates
        .iter()
        .filter(|x| {
            let mut l = leaves[..i].to_vec();
            l.push(BTreeSet::from([(*x).clone()]));
            l.extend_from_slice(&leaves[j..]);
            !brute_force(&l, rule).is_disjoint(roots)
        })
        .cloned()
        .collect()
}

/// Closure of `seed` under `rule`.
pub fn closure<L: Ord + Clone>(seed: impl IntoIterator<Item = L>, rule: &dyn Fn(&L, &L) -> BTreeSet<L>) -> BTreeSet<L> {
    let mut set: BTreeSet<L> = seed.into_iter().collect();
    loop {
        let items: Vec<L> = set.iter().cloned().collect();
        let mut grew = false;
        for a in &items {
            for b in &items {
                for r in rule(a, b) {
                    grew |= set.insert(r);
                }
            }
        }
        if !grew {
            return set;
        }
    }
}

pub fn lexicon_leaves(lexicon: &BTreeMap<String, BTreeSet<SemType>>, tokens: &[String]) -> Vec<BTreeSet<SemType>> {
    tokens.iter().map(|t| lexicon.get(t).cloned().unwrap_or_default()).collect()
}
