//! `ccg-induce`: the training and analysis pipeline from the command line.
//!
//! Every subcommand works inside one output directory (`--out`), writes the
//! resolved configuration to `config.toml` there, a JSON summary to
//! `logs/<subcommand>.json`, and prints the same summary on stdout.
//!
//! Exit status: 0 success, 1 usage / configuration / stage-order errors,
//! 2 data errors, 3 failed checks (`gradcheck`, `selftest`).

use std::collections::BTreeSet;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use ccg_induce::coherence::AnchorTable;
use ccg_induce::config::TrainConfig;
use ccg_induce::data::{
    decode_types_report, export_spans, generate_synthetic, load_dataset, percentile_filter, write_dataset,
    DatasetRecord, SpanSpec, Vocab,
};
use ccg_induce::diagnostics::{gradcheck_suite, selftest, CheckOutcome};
use ccg_induce::model::Model;
use ccg_induce::training::{
    anchor_report, evaluate_type_grammar, kfold_evaluate, parser_mse, train_interpreter, train_parser,
    train_type_grammar,
};
use clap::{Parser, Subcommand};
use serde_json::{json, Value};

const CONFIG_SNAPSHOT: &str = "config.toml";
const DATASET: &str = "dataset.tsv";
const MODEL_DIR: &str = "model";
const LOCK: &str = ".lock";

#[derive(Parser, Debug)]
#[command(name = "ccg-induce", version, about = "Grammar induction from graded acceptability data")]
struct Cli {
    /// TOML configuration; defaults to the output directory's snapshot, if any.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory shared by all stages of one run.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    /// Configuration override `section.key=value`; repeatable. Applied after
    /// `CCG_INDUCE_SECTION__KEY=value` environment variables.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate a tab-separated acceptability dataset and copy it into the run.
    Ingest {
        input: PathBuf,
    },
    /// Generate a synthetic dataset over the toy fragment.
    Synth {
        #[arg(long, default_value_t = 500)]
        size: usize,
    },
    /// Train embeddings, parser and acceptability head (starts a fresh model).
    TrainParser {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Pretrain the type grammar: autoencoder, combinator decoders, controller.
    TrainTypes,
    /// Train the interpreter on the high-acceptability subset.
    TrainInterpreter {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// k-fold cross-validated acceptability prediction.
    Eval {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Decode the types of selected spans with a fully trained model.
    DecodeTypes {
        #[arg(long)]
        data: Option<PathBuf>,
        /// `;`-separated expressions; `SENTENCE` selects whole sentences.
        #[arg(long, default_value = "someone;something;SENTENCE")]
        spans: String,
        #[arg(long, default_value_t = 3)]
        k: usize,
    },
    /// Write span representations of selected expressions as TSV.
    ExportSpans {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "someone;something")]
        spans: String,
    },
    /// Finite-difference gradient checks of every differentiable component.
    Gradcheck,
    /// Fast internal consistency checks.
    Selftest,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest { .. } => "ingest",
            Command::Synth { .. } => "synth",
            Command::TrainParser { .. } => "train-parser",
            Command::TrainTypes => "train-types",
            Command::TrainInterpreter { .. } => "train-interpreter",
            Command::Eval { .. } => "eval",
            Command::DecodeTypes { .. } => "decode-types",
            Command::ExportSpans { .. } => "export-spans",
            Command::Gradcheck => "gradcheck",
            Command::Selftest => "selftest",
        }
    }
}

#[derive(Debug)]
struct ChecksFailed(Vec<String>);

impl std::fmt::Display for ChecksFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "failed checks: {}", self.0.join(", "))
    }
}

impl std::error::Error for ChecksFailed {}

#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn exit_code(err: &anyhow::Error) -> u8 {
    use ccg_induce::Error as E;
    if err.downcast_ref::<ChecksFailed>().is_some() {
        return 3;
    }
    if err.downcast_ref::<Usage>().is_some() {
        return 1;
    }
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Data { .. }
                | E::Io { .. }
                | E::Json(_)
                | E::EmptyDataset
                | E::EmptyFilter { .. }
                | E::TooFewRecords { .. }
                | E::EmptySentence
                | E::Checkpoint(_) => 2,
                _ => 1,
            };
        }
    }
    1
}

/// Removes the lock file when the invocation ends.
struct DirLock(PathBuf);

impl DirLock {
    fn acquire(out: &Path) -> Result<DirLock> {
        let path = out.join(LOCK);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(DirLock(path)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Usage(format!(
                "{} is in use by another invocation (remove {} if it is stale)",
                out.display(),
                path.display()
            ))
            .into()),
            Err(e) => Err(ccg_induce::Error::io(&path, e).into()),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

fn resolve_config(cli: &Cli) -> Result<TrainConfig> {
    let snapshot = cli.out.join(CONFIG_SNAPSHOT);
    let base = match &cli.config {
        Some(path) => TrainConfig::load(path)?,
        None if snapshot.is_file() => TrainConfig::load(&snapshot)?,
        None => TrainConfig::default(),
    };
    let mut overrides = TrainConfig::env_overrides(std::env::vars());
    overrides.extend(cli.overrides.iter().cloned());
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    Ok(base.with_overrides(&overrides)?)
}

fn data_path(out: &Path, data: &Option<PathBuf>) -> PathBuf {
    data.clone().unwrap_or_else(|| out.join(DATASET))
}

fn load_model(out: &Path, cfg: &TrainConfig) -> Result<Model> {
    let dir = out.join(MODEL_DIR);
    if !Model::exists(&dir) {
        return Err(ccg_induce::Error::StageOrder(format!("no model in {}; run train-parser first", dir.display())).into());
    }
    let mut model = Model::load(&dir)?;
    adopt_config(&mut model, cfg)?;
    Ok(model)
}

/// Training settings may change between stages; architecture may not.
fn adopt_config(model: &mut Model, cfg: &TrainConfig) -> Result<()> {
    let m = &model.config;
    if m.dims != cfg.dims || m.depth != cfg.depth || m.primitives != cfg.primitives || m.embeddings != cfg.embeddings {
        return Err(ccg_induce::Error::Config(
            "dims, depth, primitives and embeddings must match the saved model".into(),
        )
        .into());
    }
    if m.anchors != cfg.anchors {
        model.anchors = match &cfg.anchors {
            Some(path) => AnchorTable::load(path, &model.types.signature)?,
            None => AnchorTable::default_table(),
        };
    }
    model.config = cfg.clone();
    Ok(())
}

fn checks_summary(checks: Vec<CheckOutcome>) -> Result<Value> {
    let failed: Vec<String> = checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect();
    let summary = json!({ "passed": failed.is_empty(), "checks": checks });
    if failed.is_empty() {
        Ok(summary)
    } else {
        emit(&summary);
        Err(ChecksFailed(failed).into())
    }
}

fn dataset_summary(records: &[DatasetRecord]) -> Value {
    let verbs: BTreeSet<&str> = records.iter().map(|r| r.verb.as_str()).collect();
    let frames: BTreeSet<&str> = records.iter().map(|r| r.frame.as_str()).collect();
    let scores = records.iter().map(|r| r.acceptability);
    json!({
        "records": records.len(),
        "verbs": verbs.len(),
        "frames": frames.len(),
        "min_acceptability": scores.clone().fold(f64::INFINITY, f64::min),
        "max_acceptability": scores.fold(f64::NEG_INFINITY, f64::max),
    })
}

fn run(cli: &Cli) -> Result<Value> {
    fs::create_dir_all(&cli.out).map_err(|e| ccg_induce::Error::io(&cli.out, e))?;
    let _lock = DirLock::acquire(&cli.out)?;
    let cfg = resolve_config(cli)?;
    let snapshot = cli.out.join(CONFIG_SNAPSHOT);
    fs::write(&snapshot, cfg.to_toml()?).map_err(|e| ccg_induce::Error::io(&snapshot, e))?;
    let out = cli.out.as_path();
    let model_dir = out.join(MODEL_DIR);

    let summary = match &cli.command {
        Command::Ingest { input } => {
            let records = load_dataset(input)?;
            write_dataset(&out.join(DATASET), &records)?;
            dataset_summary(&records)
        }
        Command::Synth { size } => {
            let records = generate_synthetic(cfg.seed, *size)?;
            write_dataset(&out.join(DATASET), &records)?;
            let mut s = dataset_summary(&records);
            s["grammatical"] = json!(records.iter().filter(|r| r.acceptability == 1.0).count());
            s
        }
        Command::TrainParser { data } => {
            let records = load_dataset(&data_path(out, data))?;
            let mut model = Model::new(&cfg, Vocab::from_records(&records))?;
            let log = train_parser(&mut model, &records, None)?;
            let mse = parser_mse(&model, &records)?;
            model.save(&model_dir)?;
            json!({ "log": log, "train_mse": mse })
        }
        Command::TrainTypes => {
            let mut model = load_model(out, &cfg)?;
            let logs = train_type_grammar(&mut model, None)?;
            let report = evaluate_type_grammar(&model, cfg.types.eval_samples, cfg.seed.wrapping_add(1))?;
            model.save(&model_dir)?;
            json!({ "logs": logs, "fidelity": report })
        }
        Command::TrainInterpreter { data } => {
            let mut model = load_model(out, &cfg)?;
            let records = load_dataset(&data_path(out, data))?;
            let log = train_interpreter(&mut model, &records, None)?;
            let subset = percentile_filter(&records, cfg.interpreter.percentile)?;
            let anchors = anchor_report(&model, &subset)?;
            model.save(&model_dir)?;
            json!({
                "log": log,
                "filtered": subset.len(),
                "anchors": anchors,
                "sentence_rate": anchors.sentence_rate(),
                "span_rate": anchors.span_rate(),
            })
        }
        Command::Eval { data } => {
            let records = load_dataset(&data_path(out, data))?;
            let report = kfold_evaluate(&records, &cfg)?;
            let path = out.join("eval.json");
            fs::write(&path, serde_json::to_string_pretty(&report.without_runtime())?)
                .map_err(|e| ccg_induce::Error::io(&path, e))?;
            serde_json::to_value(&report)?
        }
        Command::DecodeTypes { data, spans, k } => {
            let model = load_model(out, &cfg)?;
            let records = load_dataset(&data_path(out, data))?;
            let report = decode_types_report(&model, &records, &SpanSpec::parse(spans), *k)?;
            let path = out.join("decoded_types.tsv");
            fs::write(&path, report.to_tsv()).map_err(|e| ccg_induce::Error::io(&path, e))?;
            json!({ "spans": report.spans.len(), "summary": report.summary })
        }
        Command::ExportSpans { data, spans } => {
            let model = load_model(out, &cfg)?;
            model.stages.parser.then_some(()).ok_or_else(|| {
                ccg_induce::Error::StageOrder("span export needs a trained parser".into())
            })?;
            let records = load_dataset(&data_path(out, data))?;
            let rows = export_spans(&model, &records, &SpanSpec::parse(spans), &out.join("spans.tsv"))?;
            json!({ "rows": rows })
        }
        Command::Gradcheck => checks_summary(gradcheck_suite(cfg.seed)?)?,
        Command::Selftest => checks_summary(selftest(cfg.seed)?)?,
    };

    let logs = out.join("logs");
    fs::create_dir_all(&logs).map_err(|e| ccg_induce::Error::io(&logs, e))?;
    let log_path = logs.join(format!("{}.json", cli.command.name()));
    let mut stored = summary.clone();
    if let Some(obj) = stored.as_object_mut() {
        obj.remove("runtime_secs");
    }
    fs::write(&log_path, serde_json::to_string_pretty(&stored)?).map_err(|e| ccg_induce::Error::io(&log_path, e))?;
    Ok(summary)
}

/// Prints the summary; a closed stdout (e.g. piped into `head`) is not an error.
fn emit(summary: &Value) {
    use std::io::Write;
    let text = serde_json::to_string_pretty(summary).unwrap_or_default();
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(summary) => {
            emit(&summary);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
