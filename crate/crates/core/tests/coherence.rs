mod common;

use ccg_induce::chart::{inside_pass, outside_pass};
use ccg_induce::coherence::{
    children_distribution, constraint_loss, expr_loss, pair_loss, sentence_loss, truncated_cross_entropy_graph,
    Interpretation,
};
use ccg_induce::diagnostics::{jitter, normalization_residual, small_model};
use ccg_induce::model::Model;
use ccg_induce::nn::Graph;
use ccg_induce::typegrammar::TypeDistribution;
use ccg_induce::types::{Combinator, RaiseSide, ACTIONS};
use common::*;

fn jittered(seed: u64) -> Model {
    let mut m = small_model(seed).unwrap();
    jitter(&mut m.store, &mut rng(seed), 0.3);
    m
}

/// `pair_loss` rebuilt from plain distributions and brute-force cross-entropy.
#[test]
fn pair_loss_matches_enumeration() {
    let model = jittered(1);
    let tokens = toks("someone knew something");
    let mut g = Graph::new(&model.store);
    let chart = model.chart(&mut g, &tokens, true).unwrap();
    let mut it = Interpretation::new(&chart);
    let depth = model.types.depth;
    for (i, j, k) in [(0, 2, 1), (1, 3, 2), (0, 3, 1), (0, 3, 2)] {
        let lib = pair_loss(&mut g, &model.interp, &model.types, &mut it, i, j, k).unwrap();
        let lib = g.scalar(lib);
        let parent_nodes = it.parent(&mut g, &model.interp, &model.types, i, j).unwrap();
        let parent = TypeDistribution::from_graph(&g, &parent_nodes, depth);
        let (l, r) = (it.lambda(&mut g, &model.interp, i, k).unwrap(), it.lambda(&mut g, &model.interp, k, j).unwrap());
        let phi = model.types.action_probs(&mut g, l, r).unwrap();
        let phi = g.value(phi).to_vec();
        let mut expected = 0.0;
        for (a, action) in ACTIONS.iter().enumerate() {
            let ch = children_distribution(&mut g, &model.types, *action, l, r).unwrap();
            let comps = ch.plain(&g, depth);
            let h = match ch.mixture {
                None => {
                    assert_eq!(action.raise, RaiseSide::None);
                    brute_cross_entropy(&parent, &comps[0])
                }
                Some(m) => {
                    let w = g.value(m).to_vec();
                    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                    w.iter().zip(&comps).map(|(w, c)| w * brute_cross_entropy(&parent, c)).sum()
                }
            };
            expected += phi[a] * h;
        }
        assert!((lib - expected).abs() < 1e-8 * expected.abs().max(1.0), "({i},{j},{k}): {lib} vs {expected}");
    }
}

#[test]
fn sentence_loss_sums_attention_weighted_pairs() {
    let model = jittered(2);
    let tokens = toks("someone said something happened");
    let mut g = Graph::new(&model.store);
    let chart = model.chart(&mut g, &tokens, true).unwrap();
    let mut it = Interpretation::new(&chart);
    let total = sentence_loss(&mut g, &model.interp, &model.types, &mut it).unwrap();
    let total = g.scalar(total);
    let mut expected = 0.0;
    for (i, j) in chart.spans(2) {
        let alpha = g.value(chart.alpha(i, j).unwrap().unwrap()).to_vec();
        let mut e = 0.0;
        for k in i + 1..j {
            let p = pair_loss(&mut g, &model.interp, &model.types, &mut it, i, j, k).unwrap();
            e += alpha[k - i - 1] * g.scalar(p);
        }
        let lib = expr_loss(&mut g, &model.interp, &model.types, &mut it, i, j).unwrap();
        assert!((g.scalar(lib) - e).abs() < 1e-10);
        expected += e;
    }
    assert!((total - expected).abs() < 1e-9);
    assert!(total > 0.0);

    // a single token has no binary structure to be incoherent about
    let mut g = Graph::new(&model.store);
    let one = model.chart(&mut g, &toks("happened"), true).unwrap();
    let mut it = Interpretation::new(&one);
    let z = sentence_loss(&mut g, &model.interp, &model.types, &mut it).unwrap();
    assert_eq!(g.scalar(z), 0.0);
}

#[test]
fn pair_loss_rejects_bad_splits() {
    let model = jittered(3);
    let mut g = Graph::new(&model.store);
    let chart = model.chart(&mut g, &toks("someone happened"), true).unwrap();
    let mut it = Interpretation::new(&chart);
    assert!(pair_loss(&mut g, &model.interp, &model.types, &mut it, 0, 2, 2).is_err());
    assert!(pair_loss(&mut g, &model.interp, &model.types, &mut it, 0, 2, 0).is_err());
}

#[test]
fn constraint_loss_is_negative_anchor_log_likelihood() {
    let model = jittered(4);
    let tokens = toks("someone wanted to do something");
    let mut g = Graph::new(&model.store);
    let chart = model.chart(&mut g, &tokens, true).unwrap();
    let mut it = Interpretation::new(&chart);
    let c = constraint_loss(&mut g, &model.interp, &model.types, &mut it, &tokens, &model.anchors).unwrap();
    let c = g.scalar(c);
    let sc = model.sentence_chart(&tokens).unwrap();
    let mut expected = 0.0;
    let matches = model.anchors.matches(&tokens);
    assert_eq!(matches.len(), 4);
    for (i, j, ty) in matches {
        let d = model.decode_span(&sc, i, j).unwrap();
        expected -= prob(&d, &ty).ln();
    }
    assert!((c - expected).abs() < 1e-9, "{c} vs {expected}");
}

#[test]
fn graph_cross_entropy_matches_plain() {
    let model = jittered(5);
    let mut r = rng(5);
    use rand::Rng;
    let mut g = Graph::new(&model.store);
    let a = g.input((0..model.types.dim).map(|_| r.gen_range(-1.0..1.0)).collect());
    let b = g.input((0..model.types.dim).map(|_| r.gen_range(-1.0..1.0)).collect());
    let p = model.types.unroll(&mut g, Combinator::Identity, &[a]).unwrap();
    let q = model.types.unroll(&mut g, Combinator::Apply, &[a, b]).unwrap();
    let h = truncated_cross_entropy_graph(&mut g, &p, &q).unwrap();
    let depth = model.types.depth;
    let (pd, qd) = (TypeDistribution::from_graph(&g, &p, depth), TypeDistribution::from_graph(&g, &q, depth));
    assert!((g.scalar(h) - brute_cross_entropy(&pd, &qd)).abs() < 1e-9);
    assert!(truncated_cross_entropy_graph(&mut g, &p, &q[..3]).is_err());
}

#[test]
fn every_head_is_normalized() {
    for seed in 0..3 {
        let model = jittered(seed);
        for s in ["someone", "someone happened", "something would do something", "someone told someone that something happened"] {
            let res = normalization_residual(&model, &toks(s)).unwrap();
            assert!(res < 1e-9, "{s}: {res}");
        }
    }
}

#[test]
fn chart_without_outside_cannot_be_interpreted() {
    let model = jittered(6);
    let mut g = Graph::new(&model.store);
    let xs: Vec<_> = toks("someone happened").iter().map(|t| g.row(model.embedding, model.vocab.index(t))).collect();
    let mut chart = inside_pass(&mut g, &model.parser, &xs).unwrap();
    let mut it = Interpretation::new(&chart);
    assert!(it.lambda(&mut g, &model.interp, 0, 1).is_err());
    outside_pass(&mut g, &model.parser, &mut chart).unwrap();
    let mut it = Interpretation::new(&chart);
    assert!(it.lambda(&mut g, &model.interp, 0, 1).is_ok());
}
