//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line
//! (straight to stderr, so it shows up even when the harness captures
//! output); the test fails if any criterion fails.

mod common;

use std::collections::BTreeSet;
use std::io::Write;

use ccg_induce::chart::{symbolic_inside, symbolic_outside};
use ccg_induce::config::TrainConfig;
use ccg_induce::data::{generate_synthetic, percentile_filter, toy_fragment, ToyFragment, Vocab};
use ccg_induce::diagnostics::{gradcheck_suite, normalization_residual};
use ccg_induce::model::Model;
use ccg_induce::training::{
    anchor_report, evaluate_type_grammar, kfold_evaluate, train_interpreter, train_parser, train_type_grammar, Stage,
};
use ccg_induce::typegrammar::TypeDistribution;
use ccg_induce::types::SemType;
use common::*;
use rand::seq::SliceRandom;
use rand::Rng;

struct Outcome {
    id: usize,
    name: &'static str,
    passed: bool,
    detail: String,
}

fn report(o: &Outcome) {
    let verdict = if o.passed { "PASS" } else { "FAIL" };
    let line = format!("criterion {} [{verdict}] {}: {}\n", o.id, o.name, o.detail);
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn symbolic_chart() -> Outcome {
    let frag = toy_fragment();
    let roots = BTreeSet::from([ToyFragment::root_type()]);
    let rule = |a: &SemType, b: &SemType| combine(a, b, true, true);
    let lexical: BTreeSet<SemType> = frag.grammar.lexicon.values().flatten().cloned().chain(roots.clone()).collect();
    let universe = closure(lexical, &rule);
    let mut grammar = frag.grammar.clone();
    grammar.extend_universe(roots.iter().cloned());

    let words: Vec<String> = frag.grammar.lexicon.keys().cloned().collect();
    let short: Vec<&Vec<String>> = frag.sentences.iter().map(|s| &s.tokens).filter(|t| t.len() <= 6).collect();
    let mut r = rng(2024);
    let mut failures = Vec::new();
    let mut derivable = 0;
    for n in 0..200 {
        let sent: Vec<String> = match n % 3 {
            0 => (*short.choose(&mut r).unwrap()).clone(),
            1 => {
                let mut s = (*short.choose(&mut r).unwrap()).clone();
                let i = r.gen_range(0..s.len() - 1);
                s.swap(i, i + 1);
                s
            }
            _ => (0..r.gen_range(1..=6)).map(|_| words.choose(&mut r).unwrap().clone()).collect(),
        };
        let t: Vec<&str> = sent.iter().map(String::as_str).collect();
        let leaves = lexicon_leaves(&frag.grammar.lexicon, &sent);
        let mut chart = symbolic_inside(&grammar, &t);
        symbolic_outside(&grammar, &mut chart, &roots);
        derivable += usize::from(!chart.inside(0, t.len()).is_disjoint(&roots));
        let mut ok = chart.outside(0, t.len()) == &roots;
        for i in 0..t.len() {
            for j in i + 1..=t.len() {
                ok &= *chart.inside(i, j) == brute_force(&leaves[i..j], &rule);
                if (i, j) != (0, t.len()) {
                    ok &= *chart.outside(i, j) == brute_outside(&leaves, i, j, &universe, &roots, &rule);
                }
            }
        }
        if !ok {
            failures.push(sent.join(" "));
        }
    }
    Outcome {
        id: 1,
        name: "symbolic inside/outside vs brute force",
        passed: failures.is_empty(),
        detail: format!("200 sentences (n <= 6, {derivable} derivable), {} mismatches {:?}", failures.len(), failures.first()),
    }
}

fn cross_entropy() -> Outcome {
    let mut r = rng(77);
    let mut worst = [0.0f64; 2];
    for (slot, depth) in [(0, 2), (1, 3)] {
        for _ in 0..100 {
            let p = TypeDistribution::random(&mut r, depth, 3);
            let q = TypeDistribution::random(&mut r, depth, 3);
            let err = (p.cross_entropy(&q).unwrap() - brute_cross_entropy(&p, &q)).abs();
            worst[slot] = worst[slot].max(err);
        }
    }
    Outcome {
        id: 2,
        name: "truncated cross-entropy vs enumeration",
        passed: worst[0] <= 1e-6 && worst[1] <= 1e-5,
        detail: format!("100 pairs each; max error depth 2 {:.2e} (tol 1e-6), depth 3 {:.2e} (tol 1e-5)", worst[0], worst[1]),
    }
}

fn gradients() -> Outcome {
    let mut failed = Vec::new();
    let mut worst_component: f64 = 0.0;
    let mut worst_sentence: f64 = 0.0;
    for seed in 0..3 {
        for c in gradcheck_suite(seed).unwrap() {
            if c.name.contains("sentence") {
                worst_sentence = worst_sentence.max(c.value);
            } else {
                worst_component = worst_component.max(c.value);
            }
            if !c.passed {
                failed.push(format!("seed {seed} {}: {:.2e} ({})", c.name, c.value, c.detail));
            }
        }
    }
    Outcome {
        id: 3,
        name: "finite-difference gradient checks",
        passed: failed.is_empty(),
        detail: format!(
            "3 seeds; components max rel {worst_component:.2e} (tol 1e-4), 3-token sentence loss {worst_sentence:.2e} (tol 1e-3); failures {failed:?}"
        ),
    }
}

fn type_fidelity() -> Outcome {
    let cfg = TrainConfig::default();
    let mut model = Model::new(&cfg, toy_fragment().vocab()).unwrap();
    train_type_grammar(&mut model, None).unwrap();
    let r = evaluate_type_grammar(&model, cfg.types.eval_samples, 12345).unwrap();
    let passed = r.autoencoder_accuracy >= 0.98
        && r.apply_accuracy >= 0.95
        && r.compose_top1_valid >= 0.95
        && r.controller_viable_mass >= 0.9;
    Outcome {
        id: 4,
        name: "type grammar fidelity (default config)",
        passed,
        detail: format!(
            "autoencoder {:.3} (>= 0.98), apply {:.3} (>= 0.95), compose {:.3} (>= 0.95), controller viable mass {:.3} (>= 0.9); {} held-out samples",
            r.autoencoder_accuracy, r.apply_accuracy, r.compose_top1_valid, r.controller_viable_mass, r.samples
        ),
    }
}

fn k_best() -> Outcome {
    let types = all_types(3, 2);
    let mut r = rng(5150);
    let mut bad = 0;
    for _ in 0..50 {
        let d = TypeDistribution::random(&mut r, 2, 3);
        let mut order: Vec<usize> = (0..types.len()).collect();
        let p: Vec<f64> = types.iter().map(|t| prob(&d, t)).collect();
        order.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
        for k in 1..=types.len() {
            let got = d.k_best(k);
            let ok = got.len() == k
                && got.iter().zip(&order).all(|((t, lp), &i)| *t == types[i] && (lp.exp() - p[i]).abs() < 1e-12);
            bad += usize::from(!ok);
        }
    }
    Outcome {
        id: 5,
        name: "k-best decoding vs sorted enumeration",
        passed: bad == 0,
        detail: format!("depth 2, 50 distributions, every k in 1..=147; {bad} mismatching lists"),
    }
}

/// Criteria 6–8 share one synthetic corpus and training run.
fn pipeline() -> Vec<Outcome> {
    let cfg = TrainConfig { seed: 7, ..TrainConfig::default() }.with_overrides(&["interpreter.gamma=5.0"]).unwrap();
    let data = generate_synthetic(cfg.seed, 500).unwrap();

    let eval = kfold_evaluate(&data, &cfg).unwrap();
    let mean_fold = eval.mean_fold_pearson.unwrap_or(f64::NAN);

    let probes: Vec<Vec<String>> = ["someone happened", "someone would do something", "someone told someone that something happened"]
        .iter()
        .map(|s| toks(s))
        .collect();
    let mut worst: f64 = 0.0;
    let mut checkpoints = 0;
    let mut observer = |m: &Model, _stage: Stage, _epoch: usize| {
        checkpoints += 1;
        for p in &probes {
            worst = worst.max(normalization_residual(m, p).unwrap_or(f64::INFINITY));
        }
        // a freshly decoded distribution must also carry unit mass
        let sc = m.sentence_chart(&probes[0]).unwrap();
        let d = m.decode_span(&sc, 0, 2).unwrap();
        worst = worst.max((d.total_mass() - 1.0).abs());
    };

    let mut model = Model::new(&cfg, Vocab::from_records(&data)).unwrap();
    train_parser(&mut model, &data, Some(&mut observer)).unwrap();
    train_type_grammar(&mut model, Some(&mut observer)).unwrap();
    train_interpreter(&mut model, &data, Some(&mut observer)).unwrap();
    let filtered = percentile_filter(&data, cfg.interpreter.percentile).unwrap();
    let anchors = anchor_report(&model, &filtered).unwrap();
    let (sr, spr) = (anchors.sentence_rate(), anchors.span_rate());

    let again = kfold_evaluate(&data, &cfg).unwrap();
    let same_eval = again.without_runtime() == eval.without_runtime();
    let mut replay = Model::new(&cfg, Vocab::from_records(&data)).unwrap();
    train_parser(&mut replay, &data, None).unwrap();
    let mut same_model = true;
    for r in data.iter().take(50) {
        same_model &= replay.predict(&r.tokens).unwrap() == model.predict(&r.tokens).unwrap();
    }

    vec![
        Outcome {
            id: 6,
            name: "synthetic corpus: correlation and anchor recovery",
            passed: mean_fold >= 0.85 && sr >= 0.9 && spr >= 0.9,
            detail: format!(
                "seed 7, 500 sentences, gamma 5: mean fold Pearson {mean_fold:.4} (>= 0.85; pooled {:.4}, 95% CI [{:.3}, {:.3}]); \
                 anchors on {} filtered sentences: whole sentence {}/{} = {sr:.3} (>= 0.9), sub-sentential {}/{} = {spr:.3} (>= 0.9)",
                eval.pearson.unwrap_or(f64::NAN),
                eval.ci_low.unwrap_or(f64::NAN),
                eval.ci_high.unwrap_or(f64::NAN),
                filtered.len(),
                anchors.sentence_correct,
                anchors.sentences,
                anchors.span_correct,
                anchors.spans
            ),
        },
        Outcome {
            id: 7,
            name: "normalization at every epoch checkpoint",
            passed: checkpoints > 0 && worst <= 1e-6,
            detail: format!("{checkpoints} checkpoints, max deviation from unit mass {worst:.2e} (tol 1e-6)"),
        },
        Outcome {
            id: 8,
            name: "reproducibility",
            passed: same_eval && same_model,
            detail: format!("repeated cross-validation identical: {same_eval}; retrained parser identical: {same_model}"),
        },
    ]
}

#[test]
fn acceptance() {
    let mut outcomes = Vec::new();
    for check in [symbolic_chart, cross_entropy, gradients, type_fidelity, k_best] {
        let o = check();
        report(&o);
        outcomes.push(o);
    }
    for o in pipeline() {
        report(&o);
        outcomes.push(o);
    }
    let failed: Vec<usize> = outcomes.iter().filter(|o| !o.passed).map(|o| o.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
