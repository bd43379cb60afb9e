//! Dataset ingestion, filtering, embeddings, the synthetic toy corpus and
//! analysis exports.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chart::CcgGrammar;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::types::{parse_type, Combinator, SemType};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub verb: String,
    pub frame: String,
    pub tokens: Vec<String>,
    pub acceptability: f64,
}

impl DatasetRecord {
    pub fn sentence(&self) -> String {
        self.tokens.join(" ")
    }
}

/// Lowercases, splits on whitespace and strips terminal punctuation.
pub fn tokenize(sentence: &str) -> Vec<String> {
    let lower = sentence.trim().to_lowercase();
    let trimmed = lower.trim_end_matches(['.', '?', '!']).trim_end();
    trimmed.split_whitespace().map(String::from).collect()
}

const COLUMNS: [&str; 4] = ["verb", "frame", "sentence", "acceptability_norm"];

/// Reads a tab-separated file with columns `verb`, `frame`, `sentence` and
/// `acceptability_norm` (any order, extra columns ignored). Row numbers in
/// errors count data rows from 1.
pub fn load_dataset(path: &Path) -> Result<Vec<DatasetRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(file, &path.display().to_string())
}

pub fn read_dataset<R: std::io::Read>(reader: R, name: &str) -> Result<Vec<DatasetRecord>> {
    let data_err = |row: usize, message: String| Error::Data { path: name.to_string(), row, message };
    let mut rdr = csv::ReaderBuilder::new().delimiter(b'\t').quoting(false).flexible(true).from_reader(reader);
    let headers = rdr.headers().map_err(|e| data_err(0, e.to_string()))?.clone();
    let mut idx = [0usize; 4];
    for (slot, col) in idx.iter_mut().zip(COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == col)
            .ok_or_else(|| data_err(0, format!("missing column {col:?}")))?;
    }
    let mut out = Vec::new();
    for (n, row) in rdr.records().enumerate() {
        let row_no = n + 1;
        let row = row.map_err(|e| data_err(row_no, e.to_string()))?;
        let field = |k: usize| row.get(idx[k]).map(str::trim).ok_or_else(|| data_err(row_no, format!("missing field {:?}", COLUMNS[k])));
        let tokens = tokenize(field(2)?);
        if tokens.is_empty() {
            return Err(data_err(row_no, "empty sentence".into()));
        }
        let raw = field(3)?;
        let acceptability: f64 =
            raw.parse().map_err(|_| data_err(row_no, format!("acceptability {raw:?} is not a number")))?;
        if !acceptability.is_finite() {
            return Err(data_err(row_no, format!("acceptability {raw:?} is not finite")));
        }
        out.push(DatasetRecord { verb: field(0)?.to_string(), frame: field(1)?.to_string(), tokens, acceptability });
    }
    Ok(out)
}

pub fn write_dataset(path: &Path, records: &[DatasetRecord]) -> Result<()> {
    let mut text = String::from("verb\tframe\tsentence\tacceptability_norm\n");
    for r in records {
        text.push_str(&format!("{}\t{}\t{}\t{}\n", r.verb, r.frame, r.sentence(), r.acceptability));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = (q / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

/// Records scoring at or above the `threshold`-th percentile, in input order.
pub fn percentile_filter(records: &[DatasetRecord], threshold: f64) -> Result<Vec<DatasetRecord>> {
    let scores: Vec<f64> = records.iter().map(|r| r.acceptability).collect();
    let cut = percentile(&scores, threshold).ok_or(Error::EmptyDataset)?;
    Ok(records.iter().filter(|r| r.acceptability >= cut).cloned().collect())
}

pub const UNK: &str = "<unk>";

/// Token vocabulary; index 0 is the shared unknown-token row.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub tokens: Vec<String>,
}

impl Vocab {
    pub fn build<'a>(words: impl IntoIterator<Item = &'a str>) -> Vocab {
        let set: BTreeSet<&str> = words.into_iter().filter(|w| *w != UNK).collect();
        let mut tokens = vec![UNK.to_string()];
        tokens.extend(set.into_iter().map(String::from));
        Vocab { tokens }
    }

    pub fn from_records(records: &[DatasetRecord]) -> Vocab {
        Self::build(records.iter().flat_map(|r| r.tokens.iter().map(String::as_str)))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index(&self, token: &str) -> usize {
        self.tokens[1..].binary_search_by(|t| t.as_str().cmp(token)).map_or(0, |i| i + 1)
    }
}

#[derive(Deserialize)]
struct ExternalLine {
    #[allow(dead_code)]
    id: serde_json::Value,
    tokens: Vec<String>,
    vectors: Vec<Vec<f64>>,
}

/// Precomputed per-sentence token vectors, keyed by the token sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct ExternalEmbeddings {
    pub dim: usize,
    pub sentences: HashMap<Vec<String>, Vec<Vec<f64>>>,
}

impl ExternalEmbeddings {
    /// Reads JSON lines `{"id": .., "tokens": [..], "vectors": [[..], ..]}`.
    pub fn load(path: &Path) -> Result<ExternalEmbeddings> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let name = path.display().to_string();
        let mut dim = None;
        let mut sentences = HashMap::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| Error::Data { path: name.clone(), row: n + 1, message };
            let rec: ExternalLine = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
            let tokens: Vec<String> = rec.tokens.iter().map(|t| t.to_lowercase()).collect();
            if rec.vectors.len() != tokens.len() || tokens.is_empty() {
                return Err(err("one vector per token is required".into()));
            }
            for v in &rec.vectors {
                if *dim.get_or_insert(v.len()) != v.len() || v.iter().any(|x| !x.is_finite()) {
                    return Err(err("vectors must be finite and share one width".into()));
                }
            }
            sentences.insert(tokens, rec.vectors);
        }
        Ok(ExternalEmbeddings { dim: dim.unwrap_or(0), sentences })
    }

    pub fn get(&self, tokens: &[String]) -> Option<&Vec<Vec<f64>>> {
        self.sentences.get(tokens)
    }
}

/// Optimal string alignment distance over tokens (insert, delete,
/// substitute, adjacent transposition; each unit cost).
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (n, m) = (a.len(), b.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, x) in d[0].iter_mut().enumerate() {
        *x = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let cost = usize::from(a[i - 1] != b[j - 1]);
            let mut v = (d[i - 1][j] + 1).min(d[i][j - 1] + 1).min(d[i - 1][j - 1] + cost);
            if i > 1 && j > 1 && a[i - 1] == b[j - 2] && a[i - 2] == b[j - 1] {
                v = v.min(d[i - 2][j - 2] + 1);
            }
            d[i][j] = v;
        }
    }
    d[n][m]
}

/// A grammatical sentence of the toy fragment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ToySentence {
    pub verb: String,
    pub frame: String,
    pub tokens: Vec<String>,
}

/// The toy CCG fragment over bleached vocabulary and its finite language.
#[derive(Clone, Debug)]
pub struct ToyFragment {
    pub grammar: CcgGrammar,
    pub sentences: Vec<ToySentence>,
}

const P: &str = "<s,t>";
const VP: &str = "<e,<s,t>>";
const GQ: &str = "<<e,<s,t>>,<s,t>>";

fn toy_lexicon() -> BTreeMap<String, BTreeSet<SemType>> {
    let q = format!("<{P},t>");
    let entries: Vec<(&[&str], String)> = vec![
        (&["someone", "something"], GQ.to_string()),
        (&["happened", "happen"], VP.to_string()),
        (&["would", "to", "wanted", "tried"], format!("<{VP},{VP}>")),
        (&["do", "have"], format!("<{GQ},{VP}>")),
        (&["that"], format!("<{P},{P}>")),
        (&["whether"], format!("<{P},{q}>")),
        (&["believed", "knew", "said", "thought", "forced"], format!("<{P},{VP}>")),
        (&["asked", "wondered"], format!("<{q},{VP}>")),
        (&["told"], format!("<{GQ},<{P},{VP}>>")),
    ];
    let mut lex = BTreeMap::new();
    for (words, ty) in entries {
        let t = parse_type(&ty).expect("toy lexicon type");
        for w in words {
            lex.entry(w.to_string()).or_insert_with(BTreeSet::new).insert(t.clone());
        }
    }
    lex
}

fn words(s: &str) -> Vec<String> {
    s.split(' ').map(String::from).collect()
}

/// The shipped fragment; the sentence list is its complete language.
pub fn toy_fragment() -> ToyFragment {
    let grammar = CcgGrammar::new(toy_lexicon(), vec![Combinator::Apply, Combinator::Compose]);
    let subjects = ["someone", "something"];
    let clauses = ["something happened", "someone happened", "something would happen"];
    let vps = ["do something", "have something", "happen"];
    let mut sentences = Vec::new();
    let mut push = |verb: &str, frame: &str, text: String| {
        sentences.push(ToySentence { verb: verb.into(), frame: frame.into(), tokens: words(&text) });
    };
    for subj in subjects {
        push("happen", "NP __", format!("{subj} happened"));
        for vp in vps {
            push("would", "NP __ VP", format!("{subj} would {vp}"));
        }
        for verb in ["believed", "knew", "said", "thought"] {
            for s in clauses {
                push(verb, "NP __ that S", format!("{subj} {verb} that {s}"));
                push(verb, "NP __ S", format!("{subj} {verb} {s}"));
            }
        }
        for verb in ["asked", "wondered"] {
            for s in clauses {
                push(verb, "NP __ whether S", format!("{subj} {verb} whether {s}"));
            }
        }
        for verb in ["wanted", "tried"] {
            for vp in vps {
                push(verb, "NP __ to VP", format!("{subj} {verb} to {vp}"));
            }
        }
        for obj in subjects {
            for vp in vps {
                push("forced", "NP __ NP to VP", format!("{subj} forced {obj} to {vp}"));
            }
            for s in clauses {
                push("told", "NP __ NP that S", format!("{subj} told {obj} that {s}"));
            }
        }
    }
    ToyFragment { grammar, sentences }
}

impl ToyFragment {
    pub fn root_type() -> SemType {
        parse_type(P).expect("proposition type")
    }

    pub fn vocab(&self) -> Vocab {
        Vocab::build(self.grammar.lexicon.keys().map(String::as_str))
    }
}

/// Share of uncorrupted sentences in a synthetic corpus.
pub const GRAMMATICAL_FRACTION: f64 = 0.4;

/// A seeded synthetic corpus over the toy fragment: grammatical sentences
/// scored 1.0, and corruptions (1–3 adjacent swaps or deletions) scored
/// `1 − 0.4·d` (floored at −1), `d` being the token edit distance to the
/// source sentence.
pub fn generate_synthetic(seed: u64, size: usize) -> Result<Vec<DatasetRecord>> {
    if size < 10 {
        return Err(Error::Config("synthetic corpus size must be at least 10".into()));
    }
    let frag = toy_fragment();
    let language: BTreeSet<&Vec<String>> = frag.sentences.iter().map(|s| &s.tokens).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(size);
    while out.len() < size {
        let src = frag.sentences.choose(&mut rng).expect("non-empty language");
        if rng.gen_bool(GRAMMATICAL_FRACTION) {
            out.push(DatasetRecord {
                verb: src.verb.clone(),
                frame: src.frame.clone(),
                tokens: src.tokens.clone(),
                acceptability: 1.0,
            });
            continue;
        }
        let mut toks = src.tokens.clone();
        for _ in 0..rng.gen_range(1..=3) {
            if toks.len() > 2 && rng.gen_bool(0.5) {
                let i = rng.gen_range(0..toks.len());
                toks.remove(i);
            } else {
                let i = rng.gen_range(0..toks.len() - 1);
                toks.swap(i, i + 1);
            }
        }
        let d = edit_distance(&src.tokens, &toks);
        if d == 0 || language.contains(&toks) {
            continue;
        }
        out.push(DatasetRecord {
            verb: src.verb.clone(),
            frame: src.frame.clone(),
            tokens: toks,
            acceptability: (1.0 - 0.4 * d as f64).max(-1.0),
        });
    }
    Ok(out)
}

/// Which spans to export or decode: listed token sequences, and optionally
/// whole sentences.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SpanSpec {
    pub expressions: Vec<Vec<String>>,
    pub sentence: bool,
}

impl SpanSpec {
    /// Parses `"someone;do something;SENTENCE"`.
    pub fn parse(text: &str) -> SpanSpec {
        let mut spec = SpanSpec::default();
        for part in text.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            if part == "SENTENCE" {
                spec.sentence = true;
            } else {
                spec.expressions.push(tokenize(part));
            }
        }
        spec
    }

    pub fn matches(&self, tokens: &[String]) -> Vec<(usize, usize)> {
        let n = tokens.len();
        let mut out = Vec::new();
        for e in &self.expressions {
            if e.is_empty() || e.len() > n {
                continue;
            }
            for i in 0..=n - e.len() {
                if tokens[i..i + e.len()] == e[..] {
                    out.push((i, i + e.len()));
                }
            }
        }
        if self.sentence && !out.contains(&(0, n)) {
            out.push((0, n));
        }
        out
    }
}

/// Writes one row per (record, matching span) with the span representation
/// as tab-separated floats. Returns the number of rows written.
pub fn export_spans(model: &Model, records: &[DatasetRecord], spec: &SpanSpec, path: &Path) -> Result<usize> {
    let dim = 2 * model.config.dims.m_node;
    let mut text = String::from("sentence_id\tstart\tend\texpression\tframe");
    for k in 0..dim {
        text.push_str(&format!("\th{k}"));
    }
    text.push('\n');
    let mut rows = 0;
    for (id, r) in records.iter().enumerate() {
        let spans = spec.matches(&r.tokens);
        if spans.is_empty() {
            continue;
        }
        let chart = model.sentence_chart(&r.tokens)?;
        for (i, j) in spans {
            let v = chart.representation(i, j)?;
            text.push_str(&format!("{id}\t{i}\t{j}\t{}\t{}", r.tokens[i..j].join(" "), r.frame));
            for x in v {
                text.push_str(&format!("\t{x}"));
            }
            text.push('\n');
            rows += 1;
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodedSpan {
    pub sentence_id: usize,
    pub start: usize,
    pub end: usize,
    pub expression: String,
    pub context: String,
    /// `(type, log probability)`, most probable first.
    pub top: Vec<(String, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeSummary {
    pub expression: String,
    pub context: String,
    pub count: usize,
    /// Share of tokenings whose top-1 type is each type.
    pub proportions: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeReport {
    pub k: usize,
    pub spans: Vec<DecodedSpan>,
    pub summary: Vec<DecodeSummary>,
}

impl DecodeReport {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("sentence_id\tstart\tend\trank\ttype\tlog_prob\n");
        for d in &self.spans {
            for (rank, (t, lp)) in d.top.iter().enumerate() {
                s.push_str(&format!("{}\t{}\t{}\t{}\t{t}\t{lp}\n", d.sentence_id, d.start, d.end, rank + 1));
            }
        }
        s
    }

    /// Most frequent top-1 type for an expression across contexts.
    pub fn majority(&self, expression: &str) -> Option<String> {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for d in self.spans.iter().filter(|d| d.expression == expression) {
            if let Some((t, _)) = d.top.first() {
                *counts.entry(t).or_default() += 1;
            }
        }
        counts.into_iter().max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(a.0))).map(|(t, _)| t.to_string())
    }
}

/// Identity-decodes the interpretation of each matching span and reports
/// top-`k` types plus top-1 proportions per (expression, context).
pub fn decode_types_report(model: &Model, records: &[DatasetRecord], spec: &SpanSpec, k: usize) -> Result<DecodeReport> {
    model.require_trained()?;
    let k = k.max(1);
    let mut spans = Vec::new();
    for (id, r) in records.iter().enumerate() {
        let matches = spec.matches(&r.tokens);
        if matches.is_empty() {
            continue;
        }
        let chart = model.sentence_chart(&r.tokens)?;
        for (i, j) in matches {
            let dist = model.decode_span(&chart, i, j)?;
            let sig = &model.types.signature;
            let top = dist.k_best(k).into_iter().map(|(t, lp)| (sig.format(&t), lp)).collect();
            spans.push(DecodedSpan {
                sentence_id: id,
                start: i,
                end: j,
                expression: r.tokens[i..j].join(" "),
                context: r.frame.clone(),
                top,
            });
        }
    }
    let mut groups: BTreeMap<(String, String), BTreeMap<String, usize>> = BTreeMap::new();
    for d in &spans {
        let g = groups.entry((d.expression.clone(), d.context.clone())).or_default();
        *g.entry(d.top[0].0.clone()).or_default() += 1;
    }
    let summary = groups
        .into_iter()
        .map(|((expression, context), counts)| {
            let count: usize = counts.values().sum();
            let proportions = counts.into_iter().map(|(t, c)| (t, c as f64 / count as f64)).collect();
            DecodeSummary { expression, context, count, proportions }
        })
        .collect();
    Ok(DecodeReport { k, spans, summary })
}
