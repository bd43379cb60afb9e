//! Staged optimization and evaluation.
//!
//! 1. the parser and acceptability head, by mean squared error;
//! 2. the type grammar against symbolic oracles: autoencoder, then the
//!    apply/compose decoders, then the controller;
//! 3. the interpreter, by type coherence plus type constraint loss on the
//!    high-acceptability subset.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chart::predict_acceptability;
use crate::coherence::{constraint_loss, sentence_loss, Interpretation};
use crate::config::TrainConfig;
use crate::data::{percentile, percentile_filter, DatasetRecord, Vocab};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::{Adam, Graph, ParamId, Var};
use crate::types::{
    apply_types, compose_types, raise_type, viable_actions, Combinator, PrimitiveType, RaiseSide, SemType, TypeSignature, ACTIONS,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Parser,
    Autoencoder,
    Decoders,
    Controller,
    Interpreter,
}

/// Called after every epoch with the model, the stage and the epoch index.
pub type Observer<'a> = &'a mut dyn FnMut(&Model, Stage, usize);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub stage: Stage,
    /// Mean per-example loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

fn stage_rng(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Cosine interpolation from `lr` at the first epoch to `lr * final_scale` at the last.
pub fn cosine_lr(lr: f64, final_scale: f64, epoch: usize, epochs: usize) -> f64 {
    if epochs <= 1 {
        return lr;
    }
    let progress = epoch as f64 / (epochs - 1) as f64;
    let w = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
    lr * (final_scale + (1.0 - final_scale) * w)
}

fn set_trainable(model: &mut Model, ids: &[ParamId]) {
    model.store.freeze_all();
    for &id in ids {
        model.store.set_frozen(id, false);
    }
}

fn reborrow<'b>(observer: &'b mut Option<Observer>) -> Option<Observer<'b>> {
    match observer {
        Some(f) => Some(&mut **f),
        None => None,
    }
}

fn notify(observer: &mut Option<Observer>, model: &Model, stage: Stage, epoch: usize) {
    if let Some(f) = observer.as_mut() {
        f(model, stage, epoch);
    }
}

/// Runs `loss` on every item of a batch, accumulating `1/|batch|`-scaled
/// gradients, then takes one Adam step. Returns the summed loss.
fn batch_step<T>(
    model: &mut Model,
    adam: &Adam,
    batch: &[T],
    loss: impl Fn(&Model, &mut Graph, &T) -> Result<Option<Var>>,
) -> Result<f64> {
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for item in batch {
        let grads = {
            let mut g = Graph::new(&model.store);
            let Some(l) = loss(model, &mut g, item)? else { continue };
            total += g.scalar(l);
            let scaled = g.scale(l, scale);
            g.backward(scaled)?
        };
        model.store.accumulate(&grads);
    }
    adam.step(&mut model.store);
    Ok(total)
}

fn parser_loss(model: &Model, g: &mut Graph, r: &DatasetRecord) -> Result<Option<Var>> {
    let chart = model.chart(g, &r.tokens, false)?;
    let y = predict_acceptability(g, &model.parser, &chart)?;
    let t = g.input(vec![r.acceptability]);
    let d = g.sub(y, t)?;
    Ok(Some(g.mul(d, d)?))
}

/// Mean squared error of the acceptability head over `records`.
pub fn parser_mse(model: &Model, records: &[DatasetRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for r in records {
        let d = model.predict(&r.tokens)? - r.acceptability;
        total += d * d;
    }
    Ok(total / records.len() as f64)
}

/// Trains embeddings, parser and acceptability head on squared error.
pub fn train_parser(model: &mut Model, data: &[DatasetRecord], mut observer: Option<Observer>) -> Result<TrainLog> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let cfg = model.config.parser.clone();
    let mut ids = model.parser.params();
    if model.external.is_none() {
        ids.extend(model.embedding_params());
    }
    set_trainable(model, &ids);
    let adam = Adam::with_lr(cfg.lr);
    let mut rng = stage_rng(model.config.seed, 1);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = TrainLog { stage: Stage::Parser, epoch_losses: Vec::new() };
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&DatasetRecord> = chunk.iter().map(|&i| &data[i]).collect();
            total += batch_step(model, &adam, &batch, |m, g, r| parser_loss(m, g, r))?;
        }
        log.epoch_losses.push(total / data.len() as f64);
        notify(&mut observer, model, Stage::Parser, epoch);
    }
    model.stages.parser = true;
    Ok(log)
}

/// Seeded generators of training and evaluation material for the type grammar.
pub struct TypeSampler<'a> {
    pub signature: &'a TypeSignature,
    pub max_depth: usize,
    pub recurse_prob: f64,
}

/// A pair with its symbolically viable actions and unique-raise cases.
#[derive(Clone, Debug)]
pub struct ControllerCase {
    pub left: SemType,
    pub right: SemType,
    pub viable: BTreeSet<usize>,
    /// `(side, primitive)` where exactly one primitive makes raising that side viable.
    pub forced_raise: Vec<(RaiseSide, PrimitiveType)>,
}

impl TypeSampler<'_> {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SemType {
        self.signature.sample_type(rng, self.max_depth, self.recurse_prob)
    }

    fn sample_shallow<R: Rng + ?Sized>(&self, rng: &mut R) -> SemType {
        self.signature.sample_type(rng, self.max_depth.saturating_sub(1), self.recurse_prob)
    }

    fn prim<R: Rng + ?Sized>(&self, rng: &mut R) -> PrimitiveType {
        PrimitiveType(rng.gen_range(0..self.signature.num_primitives()) as u8)
    }

    /// A sampled pair that applies, with its result: independent draws are
    /// kept only when one applies to the other.
    pub fn apply_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> (SemType, SemType, SemType) {
        loop {
            let (l, r) = (self.sample(rng), self.sample(rng));
            if let Some(u) = apply_types(&l, &r).into_iter().next() {
                return (l, r, u);
            }
        }
    }

    /// A sampled pair that composes, with every composition result.
    pub fn compose_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> (SemType, SemType, BTreeSet<SemType>) {
        loop {
            let (l, r) = (self.sample(rng), self.sample(rng));
            let out = compose_types(&l, &r);
            if !out.is_empty() {
                return (l, r, out);
            }
        }
    }

    /// A pair for which a uniformly chosen action is viable.
    pub fn controller_case<R: Rng + ?Sized>(&self, rng: &mut R) -> ControllerCase {
        loop {
            let action = ACTIONS[rng.gen_range(0..ACTIONS.len())];
            let (raised, partner) = match (action.combinator, action.raise) {
                (Combinator::Apply, RaiseSide::None) => {
                    let (l, r, _) = self.apply_pair(rng);
                    (l, r)
                }
                (_, RaiseSide::None) => {
                    let (l, r, _) = self.compose_pair(rng);
                    (l, r)
                }
                (c, _) => {
                    let x = self.sample_shallow(rng);
                    let r = self.prim(rng);
                    let xr = SemType::func(x.clone(), SemType::Primitive(r));
                    let partner = match (c, rng.gen_bool(0.5)) {
                        (Combinator::Apply, true) => xr,
                        (Combinator::Apply, false) => SemType::func(raise_type(&x, r), self.sample_shallow(rng)),
                        (_, true) => SemType::func(SemType::Primitive(r), self.sample_shallow(rng)),
                        (_, false) => SemType::func(self.sample_shallow(rng), xr),
                    };
                    (x, partner)
                }
            };
            let (left, right) = if action.raise == RaiseSide::Right { (partner, raised) } else { (raised, partner) };
            if left.depth() > self.max_depth || right.depth() > self.max_depth {
                continue;
            }
            if let Some(case) = self.case_for(left, right) {
                return case;
            }
        }
    }

    pub fn case_for(&self, left: SemType, right: SemType) -> Option<ControllerCase> {
        let va = viable_actions(self.signature, &left, &right);
        if va.is_empty() {
            return None;
        }
        let viable: BTreeSet<usize> = va.iter().map(|v| v.action.index()).collect();
        let mut forced_raise = Vec::new();
        for side in [RaiseSide::Left, RaiseSide::Right] {
            let prims: BTreeSet<PrimitiveType> =
                va.iter().filter(|v| v.action.raise == side).filter_map(|v| v.raise_with).collect();
            if prims.len() == 1 {
                forced_raise.push((side, *prims.iter().next().expect("one element")));
            }
        }
        Some(ControllerCase { left, right, viable, forced_raise })
    }
}

fn type_sampler(model: &Model) -> TypeSampler<'_> {
    TypeSampler {
        signature: &model.types.signature,
        max_depth: model.config.types.sampler_depth,
        recurse_prob: model.config.types.recurse_prob,
    }
}

fn run_type_epochs<T>(
    model: &mut Model,
    stage: Stage,
    epochs: usize,
    salt: u64,
    make: impl Fn(&TypeSampler, &mut ChaCha8Rng) -> T,
    loss: impl Fn(&Model, &mut Graph, &T) -> Result<Option<Var>>,
    observer: &mut Option<Observer>,
) -> Result<TrainLog> {
    let cfg = model.config.types.clone();
    let mut adam = Adam::with_lr(cfg.lr);
    let mut rng = stage_rng(model.config.seed, salt);
    let mut log = TrainLog { stage, epoch_losses: Vec::new() };
    for epoch in 0..epochs {
        adam.lr = cosine_lr(cfg.lr, cfg.final_lr_scale, epoch, epochs);
        let mut total = 0.0;
        for _ in 0..cfg.steps_per_epoch {
            let batch: Vec<T> = {
                let sampler = type_sampler(model);
                (0..cfg.batch_size).map(|_| make(&sampler, &mut rng)).collect()
            };
            total += batch_step(model, &adam, &batch, &loss)?;
        }
        log.epoch_losses.push(total / (cfg.steps_per_epoch * cfg.batch_size) as f64);
        notify(observer, model, stage, epoch);
    }
    Ok(log)
}

/// Type encoder and identity decoder as an autoencoder on sampled types.
pub fn train_type_autoencoder(model: &mut Model, mut observer: Option<Observer>) -> Result<TrainLog> {
    let mut ids = model.types.encoder_params();
    ids.extend(model.types.identity.params());
    set_trainable(model, &ids);
    let epochs = model.config.types.autoencoder_epochs;
    let log = run_type_epochs(
        model,
        Stage::Autoencoder,
        epochs,
        2,
        |s, rng| s.sample(rng),
        |m, g, t| {
            let tau = m.types.encode_type(g, t)?;
            let lp = m.types.type_log_prob(g, Combinator::Identity, &[tau], t)?;
            Ok(Some(g.scale(lp, -1.0)))
        },
        &mut observer,
    )?;
    model.stages.autoencoder = true;
    Ok(log)
}

enum DecoderExample {
    Apply(SemType, SemType, SemType),
    Compose(SemType, SemType, BTreeSet<SemType>),
}

/// Apply and compose decoders on symbolically combined pairs; ambiguous
/// compositions contribute one term per valid output.
pub fn train_combinator_decoders(model: &mut Model, mut observer: Option<Observer>) -> Result<TrainLog> {
    if !model.stages.autoencoder {
        return Err(Error::StageOrder("combinator decoders need a trained type autoencoder".into()));
    }
    let mut ids = model.types.apply.params();
    ids.extend(model.types.compose.params());
    if !model.config.types.freeze_encoder {
        ids.extend(model.types.encoder_params());
    }
    set_trainable(model, &ids);
    let epochs = model.config.types.decoder_epochs;
    let log = run_type_epochs(
        model,
        Stage::Decoders,
        epochs,
        3,
        |s, rng| {
            if rng.gen_bool(0.5) {
                let (l, r, u) = s.apply_pair(rng);
                DecoderExample::Apply(l, r, u)
            } else {
                let (l, r, u) = s.compose_pair(rng);
                DecoderExample::Compose(l, r, u)
            }
        },
        |m, g, ex| {
            let (c, l, r, outs): (Combinator, &SemType, &SemType, Vec<&SemType>) = match ex {
                DecoderExample::Apply(l, r, u) => (Combinator::Apply, l, r, vec![u]),
                DecoderExample::Compose(l, r, u) => (Combinator::Compose, l, r, u.iter().collect()),
            };
            let lv = m.types.encode_type(g, l)?;
            let rv = m.types.encode_type(g, r)?;
            let mut terms = Vec::new();
            for u in outs {
                let lp = m.types.type_log_prob(g, c, &[lv, rv], u)?;
                terms.push(g.scale(lp, -1.0));
            }
            Ok(Some(g.sum_scalars(&terms)))
        },
        &mut observer,
    )?;
    model.stages.decoders = true;
    Ok(log)
}

/// `ACTION` towards the uniform distribution over viable actions and `RAISE`
/// towards the forced primitive where raising is unambiguous.
pub fn train_controller(model: &mut Model, mut observer: Option<Observer>) -> Result<TrainLog> {
    if !model.stages.decoders {
        return Err(Error::StageOrder("the controller needs trained combinator decoders".into()));
    }
    let ids = model.types.controller_params();
    set_trainable(model, &ids);
    let epochs = model.config.types.controller_epochs;
    let log = run_type_epochs(
        model,
        Stage::Controller,
        epochs,
        4,
        |s, rng| s.controller_case(rng),
        |m, g, case| {
            let lv = m.types.encode_type(g, &case.left)?;
            let rv = m.types.encode_type(g, &case.right)?;
            let x = g.concat(&[lv, rv]);
            let z = m.types.action.forward(g, x)?;
            let logp = g.log_softmax(z);
            let mut target = vec![0.0; ACTIONS.len()];
            for &a in &case.viable {
                target[a] = 1.0 / case.viable.len() as f64;
            }
            let t = g.input(target);
            let ce = g.dot(t, logp)?;
            let mut terms = vec![g.scale(ce, -1.0)];
            for &(side, r) in &case.forced_raise {
                let (raised, partner) = if side == RaiseSide::Left { (lv, rv) } else { (rv, lv) };
                let x = g.concat(&[raised, partner]);
                let z = m.types.raise.forward(g, x)?;
                let lp = g.log_softmax(z);
                let pick = g.index(lp, r.index());
                terms.push(g.scale(pick, -1.0));
            }
            Ok(Some(g.sum_scalars(&terms)))
        },
        &mut observer,
    )?;
    model.stages.controller = true;
    Ok(log)
}

/// All three type-grammar stages in order.
pub fn train_type_grammar(model: &mut Model, mut observer: Option<Observer>) -> Result<Vec<TrainLog>> {
    let a = train_type_autoencoder(model, reborrow(&mut observer))?;
    let b = train_combinator_decoders(model, reborrow(&mut observer))?;
    let c = train_controller(model, reborrow(&mut observer))?;
    Ok(vec![a, b, c])
}

/// Held-out fidelity of the pretrained type grammar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypeGrammarReport {
    pub samples: usize,
    pub autoencoder_accuracy: f64,
    pub depth1_exact: usize,
    pub apply_accuracy: f64,
    pub compose_top1_valid: f64,
    /// Among compositions with two results: top-1 and top-2 are exactly them.
    pub compose_both_ranked: f64,
    pub compose_ambiguous: usize,
    pub controller_viable_mass: f64,
    /// Among pairs where no action needs raising: mass on unraised actions.
    pub unraised_mass: f64,
    pub raise_accuracy: f64,
    pub raise_cases: usize,
}

pub fn evaluate_type_grammar(model: &Model, samples: usize, seed: u64) -> Result<TypeGrammarReport> {
    let sampler = type_sampler(model);
    let tw = &model.types;
    let mut rng = stage_rng(seed, 0xE7A1);
    let top1 = |c: Combinator, inputs: &[&SemType]| -> Result<Vec<SemType>> {
        let mut g = Graph::new(&model.store);
        let vs = inputs.iter().map(|t| tw.encode_type(&mut g, t)).collect::<Result<Vec<_>>>()?;
        let d = tw.distribution(&mut g, c, &vs)?;
        Ok(d.k_best(2).into_iter().map(|(t, _)| t).collect())
    };

    let mut ae = 0;
    for _ in 0..samples {
        let t = sampler.sample(&mut rng);
        ae += usize::from(top1(Combinator::Identity, &[&t])?[0] == t);
    }
    let mut depth1_exact = 0;
    for t in tw.signature.enumerate_types(1)? {
        depth1_exact += usize::from(top1(Combinator::Identity, &[&t])?[0] == t);
    }
    let mut apply = 0;
    for _ in 0..samples {
        let (l, r, u) = sampler.apply_pair(&mut rng);
        apply += usize::from(top1(Combinator::Apply, &[&l, &r])?[0] == u);
    }
    let (mut comp, mut both, mut ambiguous) = (0, 0, 0);
    for _ in 0..samples {
        let (l, r, outs) = sampler.compose_pair(&mut rng);
        let best = top1(Combinator::Compose, &[&l, &r])?;
        comp += usize::from(outs.contains(&best[0]));
        if outs.len() == 2 {
            ambiguous += 1;
            both += usize::from(best.iter().collect::<BTreeSet<_>>() == outs.iter().collect());
        }
    }
    let (mut mass, mut unraised, mut unraised_n, mut raise_ok, mut raise_n) = (0.0, 0.0, 0, 0, 0);
    for _ in 0..samples {
        let case = sampler.controller_case(&mut rng);
        let mut g = Graph::new(&model.store);
        let lv = tw.encode_type(&mut g, &case.left)?;
        let rv = tw.encode_type(&mut g, &case.right)?;
        let phi = tw.action_probs(&mut g, lv, rv)?;
        let p = g.value(phi).to_vec();
        mass += case.viable.iter().map(|&a| p[a]).sum::<f64>();
        if case.viable.iter().all(|&a| ACTIONS[a].raise == RaiseSide::None) {
            unraised_n += 1;
            unraised += ACTIONS.iter().zip(&p).filter(|(a, _)| a.raise == RaiseSide::None).map(|(_, p)| p).sum::<f64>();
        }
        for &(side, r) in &case.forced_raise {
            let (a, b) = if side == RaiseSide::Left { (lv, rv) } else { (rv, lv) };
            let rp = tw.raise_probs(&mut g, a, b)?;
            let v = g.value(rp);
            let arg = (0..v.len()).max_by(|&i, &j| v[i].total_cmp(&v[j]).then(j.cmp(&i))).expect("non-empty");
            raise_n += 1;
            raise_ok += usize::from(arg == r.index());
        }
    }
    let frac = |a: usize, n: usize| if n == 0 { 1.0 } else { a as f64 / n as f64 };
    Ok(TypeGrammarReport {
        samples,
        autoencoder_accuracy: frac(ae, samples),
        depth1_exact,
        apply_accuracy: frac(apply, samples),
        compose_top1_valid: frac(comp, samples),
        compose_both_ranked: frac(both, ambiguous),
        compose_ambiguous: ambiguous,
        controller_viable_mass: mass / samples as f64,
        unraised_mass: if unraised_n == 0 { 1.0 } else { unraised / unraised_n as f64 },
        raise_accuracy: frac(raise_ok, raise_n),
        raise_cases: raise_n,
    })
}

/// Coherence and constraint loss of one sentence, as graph scalars.
pub fn interpreter_objective(model: &Model, g: &mut Graph, tokens: &[String]) -> Result<(Var, Var)> {
    let chart = model.chart(g, tokens, true)?;
    let mut interp = Interpretation::new(&chart);
    let coh = sentence_loss(g, &model.interp, &model.types, &mut interp)?;
    let con = constraint_loss(g, &model.interp, &model.types, &mut interp, tokens, &model.anchors)?;
    Ok((coh, con))
}

/// Trains `INTERPRET` on the records at or above the configured percentile.
pub fn train_interpreter(model: &mut Model, data: &[DatasetRecord], mut observer: Option<Observer>) -> Result<TrainLog> {
    if !model.stages.parser {
        return Err(Error::StageOrder("interpreter training needs a trained parser".into()));
    }
    if !model.stages.types() {
        return Err(Error::StageOrder("interpreter training needs trained type-grammar weights".into()));
    }
    let cfg = model.config.interpreter.clone();
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let subset = percentile_filter(data, cfg.percentile)?;
    if subset.is_empty() {
        return Err(Error::EmptyFilter { threshold: cfg.percentile });
    }
    let mut ids = model.interp.params();
    if !cfg.freeze_upstream {
        ids.extend(model.parser.params());
        ids.extend(model.types.all_params());
    }
    set_trainable(model, &ids);
    let adam = Adam::with_lr(cfg.lr);
    let mut rng = stage_rng(model.config.seed, 5);
    let mut order: Vec<usize> = (0..subset.len()).collect();
    let mut log = TrainLog { stage: Stage::Interpreter, epoch_losses: Vec::new() };
    let gamma = cfg.gamma;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&DatasetRecord> = chunk.iter().map(|&i| &subset[i]).collect();
            total += batch_step(model, &adam, &batch, |m, g, r| {
                let (coh, con) = interpreter_objective(m, g, &r.tokens)?;
                let con = g.scale(con, gamma);
                Ok(Some(g.add(coh, con)?))
            })?;
        }
        log.epoch_losses.push(total / subset.len() as f64);
        notify(&mut observer, model, Stage::Interpreter, epoch);
    }
    model.stages.interpreter = true;
    Ok(log)
}

/// Mean combined interpreter objective over `records`.
pub fn interpreter_loss(model: &Model, records: &[DatasetRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for r in records {
        let mut g = Graph::new(&model.store);
        let (coh, con) = interpreter_objective(model, &mut g, &r.tokens)?;
        total += g.scalar(coh) + model.config.interpreter.gamma * g.scalar(con);
    }
    Ok(total / records.len() as f64)
}

/// How often anchored spans decode to their anchor type (top-1).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorReport {
    pub sentences: usize,
    pub sentence_correct: usize,
    pub spans: usize,
    pub span_correct: usize,
}

impl AnchorReport {
    pub fn sentence_rate(&self) -> f64 {
        self.sentence_correct as f64 / self.sentences.max(1) as f64
    }

    pub fn span_rate(&self) -> f64 {
        self.span_correct as f64 / self.spans.max(1) as f64
    }
}

/// Whole-sentence anchors are counted separately from sub-sentential ones.
pub fn anchor_report(model: &Model, records: &[DatasetRecord]) -> Result<AnchorReport> {
    let mut rep = AnchorReport { sentences: 0, sentence_correct: 0, spans: 0, span_correct: 0 };
    for r in records {
        let chart = model.sentence_chart(&r.tokens)?;
        let n = r.tokens.len();
        for (i, j, ty) in model.anchors.matches(&r.tokens) {
            let best = model.decode_span(&chart, i, j)?.k_best(1);
            let ok = best.first().is_some_and(|(t, _)| *t == ty);
            let whole = (i, j) == (0, n)
                && model.anchors.anchors.iter().any(|a| a.pattern == crate::coherence::AnchorPattern::Sentence && a.ty == ty);
            if whole {
                rep.sentences += 1;
                rep.sentence_correct += usize::from(ok);
            } else {
                rep.spans += 1;
                rep.span_correct += usize::from(ok);
            }
        }
    }
    Ok(rep)
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    if n != y.len() || n < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Ranks with ties averaged, 1-based.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    pearson(&ranks(x), &ranks(y))
}

/// Percentile bootstrap interval of the Pearson correlation.
pub fn bootstrap_pearson_ci(x: &[f64], y: &[f64], resamples: usize, level: f64, seed: u64) -> Option<(f64, f64)> {
    let n = x.len();
    if n < 2 || resamples == 0 {
        return None;
    }
    let mut rng = stage_rng(seed, 0xB007);
    let mut stats = Vec::with_capacity(resamples);
    let (mut bx, mut by) = (vec![0.0; n], vec![0.0; n]);
    for _ in 0..resamples {
        for k in 0..n {
            let i = rng.gen_range(0..n);
            bx[k] = x[i];
            by[k] = y[i];
        }
        if let Some(r) = pearson(&bx, &by) {
            stats.push(r);
        }
    }
    let tail = (1.0 - level) / 2.0 * 100.0;
    Some((percentile(&stats, tail)?, percentile(&stats, 100.0 - tail)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub records: usize,
    pub folds: usize,
    /// Pearson correlation of pooled held-out predictions.
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub mean_fold_pearson: Option<f64>,
    pub mean_fold_spearman: Option<f64>,
    pub fold_pearson: Vec<Option<f64>>,
    pub fold_spearman: Vec<Option<f64>>,
    /// Set when a correlation was undefined (constant predictions or targets).
    pub undefined_correlation: bool,
    pub predictions: Vec<f64>,
    pub runtime_secs: f64,
}

impl EvalReport {
    /// The report with its wall-clock runtime cleared, for reproducibility checks.
    pub fn without_runtime(&self) -> EvalReport {
        EvalReport { runtime_secs: 0.0, ..self.clone() }
    }

    /// Builds the correlation summary from fold-wise held-out predictions.
    pub fn from_folds(
        targets: &[f64],
        predictions: &[f64],
        fold_of: &[usize],
        folds: usize,
        bootstrap: usize,
        seed: u64,
    ) -> EvalReport {
        let mut fold_pearson = Vec::with_capacity(folds);
        let mut fold_spearman = Vec::with_capacity(folds);
        for f in 0..folds {
            let (mut t, mut p) = (Vec::new(), Vec::new());
            for i in (0..targets.len()).filter(|&i| fold_of[i] == f) {
                t.push(targets[i]);
                p.push(predictions[i]);
            }
            fold_pearson.push(pearson(&p, &t));
            fold_spearman.push(spearman(&p, &t));
        }
        let mean = |v: &[Option<f64>]| -> Option<f64> {
            let vals: Option<Vec<f64>> = v.iter().copied().collect();
            vals.map(|v| v.iter().sum::<f64>() / v.len() as f64)
        };
        let pooled = pearson(predictions, targets);
        let ci = bootstrap_pearson_ci(predictions, targets, bootstrap, 0.95, seed);
        let undefined = pooled.is_none() || fold_pearson.iter().chain(&fold_spearman).any(Option::is_none);
        EvalReport {
            records: targets.len(),
            folds,
            pearson: pooled,
            spearman: spearman(predictions, targets),
            ci_low: ci.map(|c| c.0),
            ci_high: ci.map(|c| c.1),
            mean_fold_pearson: mean(&fold_pearson),
            mean_fold_spearman: mean(&fold_spearman),
            fold_pearson,
            fold_spearman,
            undefined_correlation: undefined,
            predictions: predictions.to_vec(),
            runtime_secs: 0.0,
        }
    }
}

/// Seeded random fold assignment: a shuffled index order dealt round-robin.
pub fn assign_folds(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stage_rng(seed, 0xF01D));
    let mut fold_of = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % k;
    }
    fold_of
}

/// k-fold cross-validated acceptability prediction with a fresh parser per fold.
pub fn kfold_evaluate(data: &[DatasetRecord], config: &TrainConfig) -> Result<EvalReport> {
    let start = Instant::now();
    let k = config.eval.folds;
    if k > data.len() {
        return Err(Error::TooFewRecords { k, n: data.len() });
    }
    let vocab = Vocab::from_records(data);
    let fold_of = assign_folds(data.len(), k, config.seed);
    let mut predictions = vec![0.0; data.len()];
    for f in 0..k {
        let train: Vec<DatasetRecord> = (0..data.len()).filter(|&i| fold_of[i] != f).map(|i| data[i].clone()).collect();
        let mut cfg = config.clone();
        cfg.seed = config.seed.wrapping_add(f as u64);
        let mut model = Model::new(&cfg, vocab.clone())?;
        train_parser(&mut model, &train, None)?;
        for i in (0..data.len()).filter(|&i| fold_of[i] == f) {
            predictions[i] = model.predict(&data[i].tokens)?;
        }
    }
    let targets: Vec<f64> = data.iter().map(|r| r.acceptability).collect();
    let mut report = EvalReport::from_folds(&targets, &predictions, &fold_of, k, config.eval.bootstrap, config.seed);
    report.runtime_secs = start.elapsed().as_secs_f64();
    Ok(report)
}
