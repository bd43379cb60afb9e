//! The full model: embeddings, parser, type grammar and interpreter sharing
//! one parameter store, plus stage flags and on-disk layout.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chart::{inside_pass, outside_pass, predict_acceptability, Chart, ParserWeights, SentenceChart};
use crate::coherence::{interpret_span, AnchorTable, InterpreterWeights};
use crate::config::TrainConfig;
use crate::data::{ExternalEmbeddings, Vocab};
use crate::error::{Error, Result};
use crate::nn::{Checkpoint, Graph, ParamId, ParamStore, Var};
use crate::typegrammar::{TypeDistribution, TypeGrammarWeights};
use crate::types::{Combinator, TypeSignature};

pub const PARAMS_FILE: &str = "params.json";
pub const MANIFEST_FILE: &str = "model.json";

/// Which training stages have completed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageFlags {
    pub parser: bool,
    pub autoencoder: bool,
    pub decoders: bool,
    pub controller: bool,
    pub interpreter: bool,
}

impl StageFlags {
    pub fn types(&self) -> bool {
        self.autoencoder && self.decoders && self.controller
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: TrainConfig,
    vocab: Vocab,
    stages: StageFlags,
}

pub struct Model {
    pub config: TrainConfig,
    pub vocab: Vocab,
    pub store: ParamStore,
    pub embedding: ParamId,
    pub parser: ParserWeights,
    pub types: TypeGrammarWeights,
    pub interp: InterpreterWeights,
    pub stages: StageFlags,
    pub external: Option<ExternalEmbeddings>,
    pub anchors: AnchorTable,
}

impl Model {
    /// Fresh model; parameters are created in a fixed order from `config.seed`.
    pub fn new(config: &TrainConfig, vocab: Vocab) -> Result<Model> {
        config.validate()?;
        let d = &config.dims;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let embedding = store.glorot("embed.lookup", &[vocab.len(), d.m_lex], d.m_lex, d.m_lex, &mut rng);
        let parser = ParserWeights::new(&mut store, d.m_lex, d.m_node, d.wide_heads, &mut rng);
        let signature = TypeSignature::new(config.primitives.clone(), 1)?;
        let types = TypeGrammarWeights::new(&mut store, signature, d.m_type, config.depth, d.wide_heads, &mut rng)?;
        let interp = InterpreterWeights::new(&mut store, d.m_node, d.m_interp, &mut rng);
        let external = match &config.embeddings {
            Some(path) => {
                let ext = ExternalEmbeddings::load(path)?;
                if ext.dim != d.m_lex {
                    return Err(Error::Config(format!("embedding file width {} differs from dims.m_lex {}", ext.dim, d.m_lex)));
                }
                Some(ext)
            }
            None => None,
        };
        let anchors = match &config.anchors {
            Some(path) => AnchorTable::load(path, &types.signature)?,
            None => AnchorTable::default_table(),
        };
        if anchors.max_depth() > config.depth {
            return Err(Error::Config("anchor types must fit the decoder depth".into()));
        }
        Ok(Model {
            config: config.clone(),
            vocab,
            store,
            embedding,
            parser,
            types,
            interp,
            stages: StageFlags::default(),
            external,
            anchors,
        })
    }

    pub fn embedding_params(&self) -> Vec<ParamId> {
        vec![self.embedding]
    }

    pub fn input_vectors(&self, g: &mut Graph, tokens: &[String]) -> Result<Vec<Var>> {
        if tokens.is_empty() {
            return Err(Error::EmptySentence);
        }
        match &self.external {
            Some(ext) => {
                let vecs = ext.get(tokens).ok_or_else(|| Error::Data {
                    path: "embeddings".into(),
                    row: 0,
                    message: format!("no vectors for sentence {:?}", tokens.join(" ")),
                })?;
                Ok(vecs.iter().map(|v| g.input(v.clone())).collect())
            }
            None => Ok(tokens.iter().map(|t| g.row(self.embedding, self.vocab.index(t))).collect()),
        }
    }

    pub fn chart(&self, g: &mut Graph, tokens: &[String], with_outside: bool) -> Result<Chart> {
        let xs = self.input_vectors(g, tokens)?;
        let mut chart = inside_pass(g, &self.parser, &xs)?;
        if with_outside {
            outside_pass(g, &self.parser, &mut chart)?;
        }
        Ok(chart)
    }

    pub fn predict(&self, tokens: &[String]) -> Result<f64> {
        let mut g = Graph::new(&self.store);
        let chart = self.chart(&mut g, tokens, false)?;
        let y = predict_acceptability(&mut g, &self.parser, &chart)?;
        Ok(g.scalar(y))
    }

    pub fn sentence_chart(&self, tokens: &[String]) -> Result<SentenceChart> {
        let mut g = Graph::new(&self.store);
        let chart = self.chart(&mut g, tokens, true)?;
        SentenceChart::from_graph(&g, &chart, tokens)
    }

    /// Identity-decoded type distribution of the interpretation of span `(i, j)`.
    pub fn decode_span(&self, chart: &SentenceChart, i: usize, j: usize) -> Result<TypeDistribution> {
        let mut g = Graph::new(&self.store);
        let rep = g.input(chart.representation(i, j)?);
        let lambda = interpret_span(&mut g, &self.interp, rep)?;
        self.types.distribution(&mut g, Combinator::Identity, &[lambda])
    }

    pub fn require_trained(&self) -> Result<()> {
        let s = self.stages;
        if !(s.parser && s.types() && s.interpreter) {
            return Err(Error::StageOrder(format!("decoding needs all training stages; completed: {s:?}")));
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.store.to_checkpoint().save(&dir.join(PARAMS_FILE))?;
        let manifest = Manifest { config: self.config.clone(), vocab: self.vocab.clone(), stages: self.stages };
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Model> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        let mut model = Model::new(&manifest.config, manifest.vocab)?;
        model.store.load_checkpoint(&Checkpoint::load(&dir.join(PARAMS_FILE))?)?;
        model.stages = manifest.stages;
        Ok(model)
    }

    pub fn exists(dir: &Path) -> bool {
        dir.join(MANIFEST_FILE).is_file() && dir.join(PARAMS_FILE).is_file()
    }
}
