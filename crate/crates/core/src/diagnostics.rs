//! Self-checks run by the command line: finite-difference gradient checks,
//! enumeration cross-checks of the type-distribution algorithms and the
//! symbolic chart, and normalization of every probability head.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chart::{symbolic_inside, symbolic_outside, CcgGrammar, SymbolicGrammar};
use crate::coherence::{sentence_loss, truncated_cross_entropy, Interpretation};
use crate::config::TrainConfig;
use crate::data::{toy_fragment, ToyFragment};
use crate::error::Result;
use crate::model::Model;
use crate::nn::{gradient_check, Attention, Graph, Mlp, ParamStore};
use crate::typegrammar::TypeDistribution;
use crate::types::{Combinator, SemType, TypeSignature};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    /// The measured error (or failure count).
    pub value: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckOutcome {
    fn error(name: &str, value: f64, tolerance: f64, detail: String) -> CheckOutcome {
        CheckOutcome { name: name.into(), passed: value <= tolerance, value, tolerance, detail }
    }
}

const STEP: f64 = 1e-5;

fn grad_outcome(name: &str, tolerance: f64, report: crate::nn::GradCheckReport) -> CheckOutcome {
    let detail = format!("{} entries, {} skipped at kinks; worst {}", report.checked, report.skipped, report.worst);
    CheckOutcome { name: name.into(), passed: report.passes(tolerance), value: report.max_rel_error, tolerance, detail }
}

fn random_input(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Adds uniform noise to every parameter. Fresh models have zero biases and
/// contracting decoder states, which leaves many pre-activations close to
/// the LeakyReLU kink where finite differences are meaningless.
pub fn jitter(store: &mut ParamStore, rng: &mut ChaCha8Rng, scale: f64) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.value_mut(id) {
            *v += rng.gen_range(-scale..scale);
        }
    }
}

/// Small model for checks that need the whole pipeline.
pub fn small_model(seed: u64) -> Result<Model> {
    let mut cfg = TrainConfig { seed, depth: 3, ..TrainConfig::default() };
    cfg.dims.m_lex = 4;
    cfg.dims.m_node = 5;
    cfg.dims.m_interp = 4;
    cfg.dims.m_type = 4;
    cfg.types.sampler_depth = 2;
    Model::new(&cfg, toy_fragment().vocab())
}

/// Finite-difference checks of the building blocks (tolerance 1e-4) and of
/// the full sentence coherence loss on three tokens (1e-3).
pub fn gradcheck_suite(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let mut store = ParamStore::new();
    let mlp = Mlp::new(&mut store, "mlp", 6, 5, &mut rng);
    let x = random_input(&mut rng, 6);
    let r = gradient_check(&mut store, &mlp.params(), STEP, 64, |g| {
        let xv = g.input(x.clone());
        let y = mlp.forward(g, xv)?;
        let t = g.tanh(y);
        Ok(g.sum(t))
    })?;
    out.push(grad_outcome("mlp", 1e-4, r));

    let mut store = ParamStore::new();
    let att = Attention::new(&mut store, "att", 4, 3, &mut rng);
    let rows: Vec<Vec<f64>> = (0..4).map(|_| random_input(&mut rng, 4)).collect();
    let weights = random_input(&mut rng, 4);
    let r = gradient_check(&mut store, &att.params(), STEP, 64, |g| {
        let rs: Vec<_> = rows.iter().map(|r| g.input(r.clone())).collect();
        let a = att.attend(g, &rs)?;
        let w = g.input(weights.clone());
        g.dot(a, w)
    })?;
    out.push(grad_outcome("attention", 1e-4, r));

    let mut model = small_model(seed)?;
    let sig = model.types.signature.clone();
    let t = sig.parse("<<e,t>,<s,t>>")?;
    let probe = random_input(&mut rng, model.types.dim);
    let ids = model.types.encoder_params();
    let types = model.types.clone();
    let r = gradient_check(&mut model.store, &ids, STEP, 16, |g| {
        let v = types.encode_type(g, &t)?;
        let p = g.input(probe.clone());
        g.dot(v, p)
    })?;
    out.push(grad_outcome("type encoder", 1e-4, r));

    let mut ids = types.apply.params();
    ids.extend(types.controller_params());
    let (a, b) = (sig.parse("<e,t>")?, sig.parse("e")?);
    let target = sig.parse("t")?;
    let r = gradient_check(&mut model.store, &ids, STEP, 16, |g| {
        let av = types.encode_type(g, &a)?;
        let bv = types.encode_type(g, &b)?;
        let lp = types.type_log_prob(g, Combinator::Apply, &[av, bv], &target)?;
        let phi = types.action_probs(g, av, bv)?;
        let rp = types.raise_probs(g, av, bv)?;
        let p1 = g.index(phi, 1);
        let r2 = g.index(rp, 2);
        Ok(g.sum_scalars(&[lp, p1, r2]))
    })?;
    out.push(grad_outcome("type decoder and controller", 1e-4, r));

    let tokens: Vec<String> = ["someone", "knew", "something"].iter().map(|s| s.to_string()).collect();
    let ids: Vec<_> = model.store.ids().collect();
    jitter(&mut model.store, &mut rng, 0.1);
    let m = &model;
    let (parser, interp, types, embedding) = (m.parser.clone(), m.interp.clone(), m.types.clone(), m.embedding);
    let vocab = m.vocab.clone();
    let r = gradient_check(&mut model.store, &ids, STEP, 6, |g| {
        let xs: Vec<_> = tokens.iter().map(|t| g.row(embedding, vocab.index(t))).collect();
        let mut chart = crate::chart::inside_pass(g, &parser, &xs)?;
        crate::chart::outside_pass(g, &parser, &mut chart)?;
        let mut it = Interpretation::new(&chart);
        sentence_loss(g, &interp, &types, &mut it)
    })?;
    out.push(grad_outcome("sentence coherence loss", 1e-3, r));
    Ok(out)
}

/// Truncated cross-entropy recursion versus explicit enumeration.
pub fn check_cross_entropy(seed: u64, depth: usize, pairs: usize, tolerance: f64) -> Result<CheckOutcome> {
    let sig = TypeSignature::default();
    let types = sig.enumerate_types(depth)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let p = TypeDistribution::random(&mut rng, depth, sig.num_primitives());
        let q = TypeDistribution::random(&mut rng, depth, sig.num_primitives());
        let mut brute = 0.0;
        for t in &types {
            brute -= p.log_prob(t)?.exp() * q.log_prob(t)?;
        }
        worst = worst.max((truncated_cross_entropy(&p, &q)? - brute).abs());
    }
    Ok(CheckOutcome::error(&format!("cross-entropy depth {depth}"), worst, tolerance, format!("{pairs} pairs, {} types", types.len())))
}

/// k-best decoding versus sorting the enumerated support, for every k.
pub fn check_k_best(seed: u64, depth: usize, dists: usize) -> Result<CheckOutcome> {
    let sig = TypeSignature::default();
    let types = sig.enumerate_types(depth)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    for _ in 0..dists {
        let d = TypeDistribution::random(&mut rng, depth, sig.num_primitives());
        let mut scored: Vec<(usize, f64)> =
            types.iter().enumerate().map(|(i, t)| Ok((i, d.log_prob(t)?))).collect::<Result<_>>()?;
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let all = d.k_best(types.len());
        let ok = all.len() == types.len()
            && all.iter().zip(&scored).all(|((t, s), (i, b))| *t == types[*i] && (s - b).abs() < 1e-9);
        failures += usize::from(!ok);
    }
    Ok(CheckOutcome::error("k-best", failures as f64, 0.0, format!("{dists} distributions, k up to {}", types.len())))
}

fn trees<L: Ord + Clone, G: SymbolicGrammar<Label = L>>(g: &G, leaves: &[BTreeSet<L>]) -> BTreeSet<L> {
    // every bracketing, evaluated independently
    fn eval<L: Ord + Clone, G: SymbolicGrammar<Label = L>>(g: &G, leaves: &[BTreeSet<L>]) -> Vec<BTreeSet<L>> {
        if leaves.len() == 1 {
            return vec![leaves[0].clone()];
        }
        let mut out = Vec::new();
        for k in 1..leaves.len() {
            for l in eval(g, &leaves[..k]) {
                for r in eval(g, &leaves[k..]) {
                    let mut s = BTreeSet::new();
                    for a in &l {
                        for b in &r {
                            s.extend(g.combine(a, b));
                        }
                    }
                    out.push(s);
                }
            }
        }
        out
    }
    eval(g, leaves).into_iter().flatten().collect()
}

/// Compares the symbolic chart with bracketing enumeration on `sentences`.
pub fn check_symbolic_chart(grammar: &CcgGrammar, sentences: &[Vec<String>], roots: &BTreeSet<SemType>) -> CheckOutcome {
    let mut grammar = grammar.clone();
    grammar.extend_universe(roots.iter().cloned());
    let universe: Vec<SemType> = grammar.universe().iter().cloned().collect();
    let mut failures = 0;
    for s in sentences {
        let toks: Vec<&str> = s.iter().map(String::as_str).collect();
        let n = toks.len();
        let mut chart = symbolic_inside(&grammar, &toks);
        symbolic_outside(&grammar, &mut chart, roots);
        let leaves: Vec<BTreeSet<SemType>> = toks.iter().map(|t| grammar.lexical(t)).collect();
        let mut ok = true;
        for i in 0..n {
            for j in i + 1..=n {
                ok &= *chart.inside(i, j) == trees(&grammar, &leaves[i..j]);
                if (i, j) == (0, n) {
                    ok &= chart.outside(i, j) == roots;
                    continue;
                }
                let outside: BTreeSet<SemType> = universe
                    .iter()
                    .filter(|x| {
                        let mut l = leaves[..i].to_vec();
                        l.push(BTreeSet::from([(*x).clone()]));
                        l.extend_from_slice(&leaves[j..]);
                        !trees(&grammar, &l).is_disjoint(roots)
                    })
                    .cloned()
                    .collect();
                ok &= *chart.outside(i, j) == outside;
            }
        }
        failures += usize::from(!ok);
    }
    CheckOutcome::error("symbolic chart", failures as f64, 0.0, format!("{} sentences", sentences.len()))
}

/// Random token sequences over the toy vocabulary, half drawn from its language.
pub fn toy_sentences(seed: u64, count: usize, max_len: usize) -> Vec<Vec<String>> {
    let frag = toy_fragment();
    let words: Vec<String> = frag.grammar.lexicon.keys().cloned().collect();
    let short: Vec<&Vec<String>> = frag.sentences.iter().map(|s| &s.tokens).filter(|t| t.len() <= max_len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            if i % 2 == 0 && !short.is_empty() {
                short.choose(&mut rng).map(|t| (*t).clone()).unwrap_or_default()
            } else {
                let n = rng.gen_range(1..=max_len);
                (0..n).map(|_| words.choose(&mut rng).cloned().unwrap_or_default()).collect()
            }
        })
        .collect()
}

/// Largest deviation from 1 over every normalized quantity computed for
/// `tokens`: attention rows, decoder node distributions, action and raise
/// probabilities, and type-distribution mass.
pub fn normalization_residual(model: &Model, tokens: &[String]) -> Result<f64> {
    let mut g = Graph::new(&model.store);
    let chart = model.chart(&mut g, tokens, true)?;
    let mut worst: f64 = 0.0;
    let mut dev = |x: f64| worst = worst.max((x - 1.0).abs());
    let mut it = Interpretation::new(&chart);
    let tw = &model.types;
    for (i, j) in chart.spans(1) {
        if let Some(a) = chart.alpha(i, j)? {
            dev(g.value(a).iter().sum());
        }
        for node in it.parent(&mut g, &model.interp, tw, i, j)? {
            dev(g.value(node).iter().map(|v| v.exp()).sum());
        }
        let l = it.lambda(&mut g, &model.interp, i, j)?;
        dev(tw.distribution(&mut g, Combinator::Identity, &[l])?.total_mass());
        for k in i + 1..j {
            let (a, b) = (it.lambda(&mut g, &model.interp, i, k)?, it.lambda(&mut g, &model.interp, k, j)?);
            let phi = tw.action_probs(&mut g, a, b)?;
            dev(g.value(phi).iter().sum());
            let rp = tw.raise_probs(&mut g, a, b)?;
            dev(g.value(rp).iter().sum());
            for c in [Combinator::Apply, Combinator::Compose] {
                dev(tw.distribution(&mut g, c, &[a, b])?.total_mass());
            }
        }
    }
    Ok(worst)
}

/// Everything `selftest` runs: fast versions of the acceptance checks.
pub fn selftest(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut out = gradcheck_suite(seed)?;
    out.push(check_cross_entropy(seed, 2, 20, 1e-6)?);
    out.push(check_k_best(seed, 2, 10)?);
    let frag = toy_fragment();
    let roots = BTreeSet::from([ToyFragment::root_type()]);
    out.push(check_symbolic_chart(&frag.grammar, &toy_sentences(seed, 30, 5), &roots));
    let model = small_model(seed)?;
    let mut worst: f64 = 0.0;
    for s in toy_sentences(seed, 4, 4) {
        worst = worst.max(normalization_residual(&model, &s)?);
    }
    out.push(CheckOutcome::error("normalization", worst, 1e-6, "fresh model, 4 sentences".into()));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selftest_passes() {
        for c in selftest(3).unwrap() {
            assert!(c.passed, "{c:?}");
        }
    }
}
