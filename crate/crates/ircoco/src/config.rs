//! Experiment configuration: a JSON file whose fields command-line flags
//! may override, plus the `IRCOCO_SEED` environment override.

use std::path::{Path, PathBuf};

use ircoco_core::corpus::{DEFAULT_VOCAB_CAP, TOP_NUMBERS, TOP_STRINGS};
use ircoco_core::critic::CriticConfig;
use ircoco_core::drl::AlignConfig;
use ircoco_core::lm::{HeadKind, ModelConfig};
use ircoco_core::metrics::MetricKind;
use ircoco_core::sft::SftConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::jsonl;

pub const SEED_ENV: &str = "IRCOCO_SEED";

/// Model dimensions; the vocabulary size comes from the prepared data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub max_len: usize,
}

impl ModelShape {
    pub fn with_vocab(self, vocab_size: usize, head_kind: HeadKind) -> ModelConfig {
        ModelConfig {
            layers: self.layers,
            heads: self.heads,
            d_model: self.d_model,
            vocab_size,
            max_len: self.max_len,
            head_kind,
        }
    }
}

impl Default for ModelShape {
    fn default() -> Self {
        Self {
            layers: 4,
            heads: 4,
            d_model: 256,
            max_len: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub paths: Vec<PathBuf>,
    pub extensions: Vec<String>,
    /// Lexer conventions, e.g. `python` or `java`.
    pub language: String,
    /// Non-blank lines per sample; each source file yields several samples.
    pub chunk_lines: usize,
    pub valid_fraction: f64,
    pub test_fraction: f64,
    pub min_freq: usize,
    pub vocab_cap: usize,
    pub top_strings: usize,
    pub top_numbers: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            paths: Vec::new(),
            extensions: vec!["py".into()],
            language: "python".into(),
            chunk_lines: 6,
            valid_fraction: 0.1,
            test_fraction: 0.1,
            min_freq: 2,
            vocab_cap: DEFAULT_VOCAB_CAP,
            top_strings: TOP_STRINGS,
            top_numbers: TOP_NUMBERS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CriticDataConfig {
    pub metric: MetricKind,
    pub splits_per_sample: usize,
}

impl Default for CriticDataConfig {
    fn default() -> Self {
        Self {
            metric: MetricKind::EditSim,
            splits_per_sample: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Required: every run is seeded.
    pub seed: u64,
    #[serde(default)]
    pub corpus: CorpusConfig,
    #[serde(default)]
    pub actor: ModelShape,
    #[serde(default)]
    pub critic_model: ModelShape,
    /// Optional language-model pass over whole sequences before SFT.
    #[serde(default = "no_pretrain")]
    pub pretrain: SftConfig,
    #[serde(default)]
    pub sft: SftConfig,
    #[serde(default)]
    pub critic_data: CriticDataConfig,
    #[serde(default)]
    pub critic: CriticConfig,
    #[serde(default)]
    pub align: AlignConfig,
    /// Use only the first examples of the shuffled training split for alignment.
    #[serde(default)]
    pub align_train_limit: Option<usize>,
    /// Held-out examples scored after each alignment epoch.
    #[serde(default)]
    pub align_eval_limit: Option<usize>,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
}

fn no_pretrain() -> SftConfig {
    SftConfig {
        epochs: 0,
        full_sequence: true,
        ..SftConfig::default()
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            corpus: CorpusConfig::default(),
            actor: ModelShape::default(),
            critic_model: ModelShape::default(),
            pretrain: no_pretrain(),
            sft: SftConfig::default(),
            critic_data: CriticDataConfig::default(),
            critic: CriticConfig::default(),
            align: AlignConfig::default(),
            align_train_limit: None,
            align_eval_limit: None,
            out_dir: default_out(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: Self = jsonl::read_json(path)?;
        cfg.set_seed(cfg.seed);
        Ok(cfg)
    }

    /// Sets the run seed and propagates it to every stage.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.pretrain.seed = seed;
        self.sft.seed = seed;
        self.critic.seed = seed;
        self.align.seed = seed;
    }

    /// Applies `IRCOCO_SEED` when it is set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            let seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={v} is not an unsigned integer")))?;
            self.set_seed(seed);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for p in &self.corpus.paths {
            if !p.exists() {
                return Err(Error::Config(format!("corpus path {} does not exist", p.display())));
            }
        }
        let c = &self.corpus;
        if !(0.0..1.0).contains(&(c.valid_fraction + c.test_fraction)) {
            return Err(Error::Config("valid and test fractions must sum below 1".into()));
        }
        if self.actor.max_len <= ircoco_core::corpus::REFERENCE_LEN + 2 {
            return Err(Error::Config("actor max_len leaves no room for a prefix".into()));
        }
        if self.critic_model.max_len < self.actor.max_len {
            return Err(Error::Config("critic max_len must be at least the actor's".into()));
        }
        for (name, shape) in [("actor", self.actor), ("critic_model", self.critic_model)] {
            if shape.heads == 0 || shape.d_model % shape.heads != 0 {
                return Err(Error::Config(format!("{name}: d_model must be divisible by heads")));
            }
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        hash_bytes(&serde_json::to_vec(self).expect("config serializes"))
    }
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of several byte strings, each length-prefixed so boundaries count.
pub fn hash_parts(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
