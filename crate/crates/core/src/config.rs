//! Training configuration: TOML file, `key.path=value` overrides and
//! environment overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Environment variables `CCG_INDUCE_<SECTION>__<KEY>=value` override config
/// keys; `__` separates path components.
pub const ENV_PREFIX: &str = "CCG_INDUCE_";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Dims {
    pub m_lex: usize,
    pub m_node: usize,
    pub m_interp: usize,
    pub m_type: usize,
    /// Scoring heads get a hidden layer as wide as their input rather than
    /// their output.
    pub wide_heads: bool,
}

impl Default for Dims {
    fn default() -> Self {
        Dims { m_lex: 16, m_node: 24, m_interp: 16, m_type: 16, wide_heads: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParserStage {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for ParserStage {
    fn default() -> Self {
        ParserStage { lr: 3e-3, epochs: 20, batch_size: 32 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TypeStage {
    pub lr: f64,
    pub batch_size: usize,
    pub autoencoder_epochs: usize,
    pub decoder_epochs: usize,
    pub controller_epochs: usize,
    /// Optimizer steps per epoch.
    pub steps_per_epoch: usize,
    pub sampler_depth: usize,
    pub recurse_prob: f64,
    /// Cosine learning-rate decay reaches `lr * final_lr_scale` at the last epoch.
    pub final_lr_scale: f64,
    pub freeze_encoder: bool,
    /// Held-out samples for the fidelity report.
    pub eval_samples: usize,
}

impl Default for TypeStage {
    fn default() -> Self {
        TypeStage {
            lr: 5e-3,
            batch_size: 32,
            autoencoder_epochs: 40,
            decoder_epochs: 40,
            controller_epochs: 20,
            steps_per_epoch: 400,
            sampler_depth: 3,
            recurse_prob: 0.4,
            final_lr_scale: 0.05,
            freeze_encoder: true,
            eval_samples: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterpreterStage {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Weight of the type constraint loss.
    pub gamma: f64,
    /// Percentile threshold selecting training sentences.
    pub percentile: f64,
    pub freeze_upstream: bool,
}

impl Default for InterpreterStage {
    fn default() -> Self {
        InterpreterStage { lr: 1e-2, epochs: 20, batch_size: 32, gamma: 1.0, percentile: 90.0, freeze_upstream: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub folds: usize,
    pub bootstrap: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { folds: 5, bootstrap: 1000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    /// Decoder truncation depth.
    pub depth: usize,
    pub primitives: Vec<String>,
    pub dims: Dims,
    pub parser: ParserStage,
    pub types: TypeStage,
    pub interpreter: InterpreterStage,
    pub eval: EvalConfig,
    /// JSON-lines file of per-sentence token vectors; empty for a trainable lookup.
    pub embeddings: Option<PathBuf>,
    /// Anchor table JSON; empty for the built-in table.
    pub anchors: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            depth: 4,
            primitives: vec!["e".into(), "s".into(), "t".into()],
            dims: Dims::default(),
            parser: ParserStage::default(),
            types: TypeStage::default(),
            interpreter: InterpreterStage::default(),
            eval: EvalConfig::default(),
            embeddings: None,
            anchors: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let d = &self.dims;
        if [d.m_lex, d.m_node, d.m_interp, d.m_type].contains(&0) {
            return Err(Error::Config("dimensions must be positive".into()));
        }
        if d.m_type != d.m_interp {
            return Err(Error::Config("dims.m_type must equal dims.m_interp".into()));
        }
        if self.depth == 0 || self.depth > 6 {
            return Err(Error::Config("depth must be in 1..=6".into()));
        }
        if self.primitives.is_empty() {
            return Err(Error::Config("at least one primitive type is required".into()));
        }
        for lr in [self.parser.lr, self.types.lr, self.interpreter.lr] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config("learning rates must be positive".into()));
            }
        }
        for b in [self.parser.batch_size, self.types.batch_size, self.interpreter.batch_size, self.types.steps_per_epoch] {
            if b == 0 {
                return Err(Error::Config("batch sizes and steps must be positive".into()));
            }
        }
        if !(0.0..=100.0).contains(&self.interpreter.percentile) {
            return Err(Error::Config("interpreter.percentile must be in [0, 100]".into()));
        }
        if self.eval.folds < 2 {
            return Err(Error::Config("eval.folds must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.types.recurse_prob) {
            return Err(Error::Config("types.recurse_prob must be in [0, 1)".into()));
        }
        if self.types.sampler_depth + 1 > self.depth {
            return Err(Error::Config("types.sampler_depth must be below depth".into()));
        }
        if !(self.types.final_lr_scale > 0.0 && self.types.final_lr_scale <= 1.0) {
            return Err(Error::Config("types.final_lr_scale must be in (0, 1]".into()));
        }
        if self.interpreter.gamma < 0.0 {
            return Err(Error::Config("interpreter.gamma must be non-negative".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<TrainConfig> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<TrainConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies `a.b.c=value` overrides. Keys must name existing settings
    /// (optional paths may be set even when currently unset); values are
    /// parsed as TOML and fall back to strings.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<TrainConfig> {
        let mut root = toml::Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o.split_once('=').ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            set_path(&mut root, key.trim(), parse_value(raw.trim()))?;
        }
        let cfg: TrainConfig = root.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Overrides collected from `CCG_INDUCE_*` environment variables.
    pub fn env_overrides(vars: impl IntoIterator<Item = (String, String)>) -> Vec<String> {
        let mut out: Vec<String> = vars
            .into_iter()
            .filter_map(|(k, v)| {
                let key = k.strip_prefix(ENV_PREFIX)?;
                Some(format!("{}={v}", key.to_lowercase().replace("__", ".")))
            })
            .collect();
        out.sort();
        out
    }
}

const OPTIONAL_KEYS: [&str; 2] = ["embeddings", "anchors"];

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

fn set_path(root: &mut toml::Value, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = root;
    for (n, part) in parts.iter().enumerate() {
        let table = cur.as_table_mut().ok_or_else(|| Error::Config(format!("unknown key {key:?}")))?;
        let last = n + 1 == parts.len();
        if last {
            let known = table.contains_key(*part) || (n == 0 && OPTIONAL_KEYS.contains(part));
            if !known {
                return Err(Error::Config(format!("unknown key {key:?}")));
            }
            let value = match (table.get(*part), value) {
                // integers given for float settings
                (Some(toml::Value::Float(_)), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
                (_, v) => v,
            };
            table.insert(part.to_string(), value);
            return Ok(());
        }
        cur = table.get_mut(*part).ok_or_else(|| Error::Config(format!("unknown key {key:?}")))?;
    }
    Ok(())
}
