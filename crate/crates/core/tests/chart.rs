mod common;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use ccg_induce::chart::{
    inside_pass, outside_pass, predict_acceptability, spans, symbolic_inside, symbolic_outside, CcgGrammar, CfgGrammar,
    ParserWeights, SentenceChart,
};
use ccg_induce::data::{toy_fragment, ToyFragment};
use ccg_induce::nn::{Graph, ParamStore};
use ccg_induce::types::{parse_type, Combinator, SemType};
use common::*;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

/// Top-down, memoized restatement of the chart recursions on plain vectors.
struct Oracle<'a> {
    store: &'a ParamStore,
    w: &'a ParserWeights,
    xs: Vec<Vec<f64>>,
    inside: HashMap<(usize, usize), Vec<f64>>,
    alpha: HashMap<(usize, usize), Vec<f64>>,
    outside: HashMap<(usize, usize), Vec<f64>>,
}

impl<'a> Oracle<'a> {
    fn new(store: &'a ParamStore, w: &'a ParserWeights, xs: Vec<Vec<f64>>) -> Self {
        Oracle { store, w, xs, inside: HashMap::new(), alpha: HashMap::new(), outside: HashMap::new() }
    }

    fn n(&self) -> usize {
        self.xs.len()
    }

    fn inside(&mut self, i: usize, j: usize) -> Vec<f64> {
        if let Some(v) = self.inside.get(&(i, j)) {
            return v.clone();
        }
        let v = if j == i + 1 {
            mlp(self.store, &self.w.unary, &self.xs[i])
        } else {
            let cats: Vec<Vec<f64>> = (i + 1..j).map(|k| cat(&self.inside(i, k), &self.inside(k, j))).collect();
            let a = attention(self.store, &self.w.attend, &cats);
            let mut h = vec![0.0; self.w.m_node];
            for (c, wk) in cats.iter().zip(&a) {
                for (hv, cv) in h.iter_mut().zip(mlp(self.store, &self.w.combine, c)) {
                    *hv += wk * cv;
                }
            }
            self.alpha.insert((i, j), a);
            h
        };
        self.inside.insert((i, j), v.clone());
        v
    }

    fn alpha(&mut self, i: usize, j: usize, k: usize) -> f64 {
        self.inside(i, j);
        self.alpha[&(i, j)][k - i - 1]
    }

    fn outside(&mut self, i: usize, j: usize) -> Vec<f64> {
        if let Some(v) = self.outside.get(&(i, j)) {
            return v.clone();
        }
        let n = self.n();
        let v = if (i, j) == (0, n) {
            self.store.value(self.w.root_outside).to_vec()
        } else {
            let mut h = vec![0.0; self.w.m_node];
            // (i, j) as the left child of (i, m)
            for m in j + 1..=n {
                let wgt = self.alpha(i, m, j);
                let item = mlp(self.store, &self.w.split_r, &cat(&self.outside(i, m), &self.inside(j, m)));
                h.iter_mut().zip(item).for_each(|(a, b)| *a += wgt * b);
            }
            // (i, j) as the right child of (m, j)
            for m in 0..i {
                let wgt = self.alpha(m, j, i);
                let item = mlp(self.store, &self.w.split_l, &cat(&self.outside(m, j), &self.inside(m, i)));
                h.iter_mut().zip(item).for_each(|(a, b)| *a += wgt * b);
            }
            h
        };
        self.outside.insert((i, j), v.clone());
        v
    }
}

fn setup(seed: u64, m_lex: usize, m_node: usize) -> (ParamStore, ParserWeights) {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let w = ParserWeights::new(&mut store, m_lex, m_node, true, &mut r);
    randomize(&mut store, &mut r, 0.8);
    (store, w)
}

fn library_chart(store: &ParamStore, w: &ParserWeights, xs: &[Vec<f64>]) -> (SentenceChart, f64) {
    let mut g = Graph::new(store);
    let vs: Vec<_> = xs.iter().map(|x| g.input(x.clone())).collect();
    let mut chart = inside_pass(&mut g, w, &vs).unwrap();
    outside_pass(&mut g, w, &mut chart).unwrap();
    let y = predict_acceptability(&mut g, w, &chart).unwrap();
    let toks: Vec<String> = (0..xs.len()).map(|i| format!("w{i}")).collect();
    (SentenceChart::from_graph(&g, &chart, &toks).unwrap(), g.scalar(y))
}

fn assert_close(a: &[f64], b: &[f64], tol: f64, what: &str) {
    assert_eq!(a.len(), b.len(), "{what}");
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol, "{what}: {x} vs {y}");
    }
}

#[test]
fn vector_chart_matches_oracle_at_length_four() {
    for seed in 0..5 {
        let (store, w) = setup(seed, 3, 4);
        let mut r = rng(100 + seed);
        let xs: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|_| r.gen_range(-1.0..1.0)).collect()).collect();
        let (chart, y) = library_chart(&store, &w, &xs);
        let mut o = Oracle::new(&store, &w, xs);
        for (i, j) in spans(4, 1) {
            assert_close(&chart.inside[&(i, j)], &o.inside(i, j), 1e-10, "inside");
            assert_close(&chart.outside[&(i, j)], &o.outside(i, j), 1e-10, "outside");
            if j - i >= 2 {
                assert_close(&chart.alpha[&(i, j)], &o.alpha[&(i, j)], 1e-10, "alpha");
            }
        }
        let root = cat(&o.inside(0, 4), &o.outside(0, 4));
        let expected = mlp(&store, &w.acceptability, &root)[0];
        assert!((y - expected).abs() < 1e-10);
    }
}

#[test]
fn attention_rows_sum_to_one_and_single_token_has_none() {
    let (store, w) = setup(7, 3, 4);
    let xs: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 * 0.1, 0.2, -0.3]).collect();
    let (chart, _) = library_chart(&store, &w, &xs);
    for ((i, j), a) in &chart.alpha {
        assert_eq!(a.len(), j - i - 1);
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    let (one, _) = library_chart(&store, &w, &xs[..1]);
    assert!(one.alpha.is_empty());
    assert_eq!(one.outside[&(0, 1)], store.value(w.root_outside).to_vec());
}

#[test]
fn empty_sentence_is_rejected() {
    let (store, w) = setup(0, 2, 2);
    let mut g = Graph::new(&store);
    assert!(inside_pass(&mut g, &w, &[]).is_err());
}

#[test]
fn span_enumeration() {
    assert_eq!(spans(3, 1), vec![(0, 1), (1, 2), (2, 3), (0, 2), (1, 3), (0, 3)]);
    assert_eq!(spans(3, 2), vec![(0, 2), (1, 3), (0, 3)]);
    for n in 1..8 {
        assert_eq!(spans(n, 1).len(), n * (n + 1) / 2);
    }
}

// ---- symbolic charts -----------------------------------------------------

fn random_cfg(seed: u64) -> (CfgGrammar, Vec<String>, Vec<String>) {
    let mut r = rng(seed);
    let nts: Vec<String> = ["S", "A", "B", "C"].iter().map(|s| s.to_string()).collect();
    let words: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
    let mut g = CfgGrammar::default();
    for w in &words {
        for nt in &nts {
            if r.gen_bool(0.4) {
                g.add_lexical(nt, w);
            }
        }
    }
    for p in &nts {
        for l in &nts {
            for rr in &nts {
                if r.gen_bool(0.15) {
                    g.add_rule(p, l, rr);
                }
            }
        }
    }
    (g, nts, words)
}

fn cfg_rule(g: &CfgGrammar) -> impl Fn(&String, &String) -> BTreeSet<String> + '_ {
    move |a, b| g.rules.iter().filter(|(_, l, r)| l == a && r == b).map(|(p, _, _)| p.clone()).collect()
}

#[test]
fn cfg_chart_matches_brute_force() {
    for seed in 0..40 {
        let (g, nts, words) = random_cfg(seed);
        let rule = cfg_rule(&g);
        let mut r = rng(seed + 1000);
        let universe: BTreeSet<String> = nts.iter().cloned().collect();
        let roots = BTreeSet::from(["S".to_string()]);
        for _ in 0..5 {
            let n = r.gen_range(1..=5);
            let sent: Vec<&str> = (0..n).map(|_| words.choose(&mut r).unwrap().as_str()).collect();
            let leaves: Vec<BTreeSet<String>> = sent.iter().map(|w| g.lexicon.get(*w).cloned().unwrap_or_default()).collect();
            let mut chart = symbolic_inside(&g, &sent);
            symbolic_outside(&g, &mut chart, &roots);
            for (i, j) in spans(n, 1) {
                assert_eq!(chart.inside(i, j), &brute_force(&leaves[i..j], &rule), "{sent:?} ({i},{j})");
                if (i, j) != (0, n) {
                    let expected = brute_outside(&leaves, i, j, &universe, &roots, &rule);
                    assert_eq!(chart.outside(i, j), &expected, "{sent:?} outside ({i},{j})");
                }
            }
        }
    }
}

#[test]
fn textbook_cfg() {
    let mut g = CfgGrammar::default();
    g.add_rule("S", "NP", "VP");
    g.add_rule("VP", "V", "NP");
    g.add_rule("NP", "D", "N");
    g.add_lexical("D", "the");
    g.add_lexical("N", "dog");
    g.add_lexical("N", "cat");
    g.add_lexical("V", "saw");
    let c = symbolic_inside(&g, &["the", "dog", "saw", "the", "cat"]);
    assert_eq!(c.inside(0, 5), &BTreeSet::from(["S".to_string()]));
    assert_eq!(c.inside(2, 5), &BTreeSet::from(["VP".to_string()]));
    assert!(c.inside(1, 3).is_empty());
    assert!(!symbolic_inside(&g, &["dog", "the", "saw"]).derivable());
}

fn toy_rule(a: &SemType, b: &SemType) -> BTreeSet<SemType> {
    combine(a, b, true, true)
}

#[test]
fn toy_language_is_derivable_and_corruptions_mostly_not() {
    let frag = toy_fragment();
    let root = ToyFragment::root_type();
    for s in &frag.sentences {
        let t: Vec<&str> = s.tokens.iter().map(String::as_str).collect();
        let c = symbolic_inside(&frag.grammar, &t);
        assert!(c.inside(0, t.len()).contains(&root), "{:?}", s.tokens);
    }
    let c = symbolic_inside(&frag.grammar, &["happened", "someone", "knew"]);
    assert!(!c.inside(0, 3).contains(&root));
}

#[test]
fn ccg_chart_matches_brute_force_on_toy_fragment() {
    let frag = toy_fragment();
    let roots = BTreeSet::from([ToyFragment::root_type()]);
    let mut grammar = frag.grammar.clone();
    grammar.extend_universe(roots.iter().cloned());
    let lexical: BTreeSet<SemType> = frag.grammar.lexicon.values().flatten().cloned().chain(roots.clone()).collect();
    let universe = closure(lexical, &toy_rule);
    assert_eq!(&universe, grammar.universe());
    let words: Vec<String> = frag.grammar.lexicon.keys().cloned().collect();
    let mut r = rng(11);
    for trial in 0..60 {
        let sent: Vec<String> = if trial % 2 == 0 {
            frag.sentences.choose(&mut r).unwrap().tokens.iter().take(5).cloned().collect()
        } else {
            (0..r.gen_range(1..=5)).map(|_| words.choose(&mut r).unwrap().clone()).collect()
        };
        let t: Vec<&str> = sent.iter().map(String::as_str).collect();
        let leaves = lexicon_leaves(&frag.grammar.lexicon, &sent);
        let mut chart = symbolic_inside(&grammar, &t);
        symbolic_outside(&grammar, &mut chart, &roots);
        for (i, j) in spans(t.len(), 1) {
            assert_eq!(chart.inside(i, j), &brute_force(&leaves[i..j], &toy_rule), "{sent:?} ({i},{j})");
            if (i, j) != (0, t.len()) {
                assert_eq!(chart.outside(i, j), &brute_outside(&leaves, i, j, &universe, &roots, &toy_rule));
            }
        }
    }
}

#[test]
fn outside_sets_ignore_the_span_itself() {
    // "someone someone" has no parse, but each position still has a context
    let frag = toy_fragment();
    let roots = BTreeSet::from([ToyFragment::root_type()]);
    let mut c = symbolic_inside(&frag.grammar, &["someone", "someone"]);
    symbolic_outside(&frag.grammar, &mut c, &roots);
    assert!(!c.derivable());
    let expected = BTreeSet::from([
        parse_type("<e,<s,t>>").unwrap(),
        parse_type("<<<e,<s,t>>,<s,t>>,<s,t>>").unwrap(),
    ]);
    assert_eq!(c.outside(0, 1), &expected);
    assert_eq!(c.outside(1, 2), &expected);
}

#[test]
fn apply_only_grammar() {
    let mut lex = BTreeMap::new();
    lex.insert("a".to_string(), BTreeSet::from([parse_type("e").unwrap()]));
    lex.insert("f".to_string(), BTreeSet::from([parse_type("<e,<e,t>>").unwrap()]));
    let g = CcgGrammar::new(lex, vec![Combinator::Apply]);
    let c = symbolic_inside(&g, &["a", "f", "a"]);
    assert_eq!(c.inside(0, 3), &BTreeSet::from([parse_type("t").unwrap()]));
    assert!(g.universe().contains(&parse_type("<e,t>").unwrap()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn symbolic_inside_is_independent_of_everything_outside_the_span(seed in 0u64..10_000, n in 2usize..6) {
        let frag = toy_fragment();
        let words: Vec<String> = frag.grammar.lexicon.keys().cloned().collect();
        let mut r = rng(seed);
        let sent: Vec<&str> = (0..n).map(|_| words.choose(&mut r).unwrap().as_str()).collect();
        let full = symbolic_inside(&frag.grammar, &sent);
        let i = r.gen_range(0..n);
        let j = r.gen_range(i + 1..=n);
        let part = symbolic_inside(&frag.grammar, &sent[i..j]);
        prop_assert_eq!(full.inside(i, j), part.inside(0, j - i));
    }
}
