//! Run configuration: a TOML file with one table per concern. Every field
//! has a default, so an empty file is a valid config.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use doclen::attention::ScaleMode;
use doclen::corpus::{ContrastiveConfig, GenConfig, Span};
use doclen::decoding::{CollapsePolicy, DecodeParams, StrategyRegistry};
use doclen::model::ModelConfig;
use doclen::train::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub decode: DecodeSection,
    pub analyze: AnalyzeSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            paths: Paths::default(),
            data: DataSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            decode: DecodeSection::default(),
            analyze: AnalyzeSection::default(),
        }
    }
}

/// Unset paths resolve relative to `out` and `data_dir`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub out: PathBuf,
    pub data_dir: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub decode_input: Option<PathBuf>,
    pub hypotheses: Option<PathBuf>,
    pub suite: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            out: "out".into(),
            data_dir: "data".into(),
            checkpoint: None,
            decode_input: None,
            hypotheses: None,
            suite: None,
        }
    }
}

impl Paths {
    pub fn checkpoint(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out.join("model.ckpt"))
    }

    pub fn decode_input(&self) -> PathBuf {
        self.decode_input.clone().unwrap_or_else(|| self.data_dir.join("test.jsonl"))
    }

    pub fn hypotheses(&self) -> PathBuf {
        self.hypotheses.clone().unwrap_or_else(|| self.out.join("decode.jsonl"))
    }

    pub fn suite(&self) -> PathBuf {
        self.suite.clone().unwrap_or_else(|| self.data_dir.join("contrastive.jsonl"))
    }

    pub fn train_corpus(&self) -> PathBuf {
        self.data_dir.join("train.jsonl")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub vocab_size: usize,
    /// Total documents over all three splits.
    pub docs: usize,
    pub valid_docs: usize,
    pub test_docs: usize,
    pub sentence_len: Span,
    pub sentences_per_doc: Span,
    /// Test documents are drawn longer to exercise length generalization.
    pub test_sentences_per_doc: Span,
    pub cue_rate: f64,
    pub ambiguous_rate: f64,
    pub contrastive_items: usize,
    pub contrastive_sentences_per_doc: Span,
    pub contrastive_distance: Span,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            vocab_size: 32,
            docs: 120,
            valid_docs: 10,
            test_docs: 10,
            sentence_len: Span::new(3, 8),
            sentences_per_doc: Span::new(10, 30),
            test_sentences_per_doc: Span::new(55, 65),
            cue_rate: 0.06,
            ambiguous_rate: 0.1,
            contrastive_items: 300,
            contrastive_sentences_per_doc: Span::new(4, 6),
            contrastive_distance: Span::new(0, 3),
        }
    }
}

impl DataSection {
    pub fn train_docs(&self) -> Result<usize> {
        match self.docs.checked_sub(self.valid_docs + self.test_docs) {
            Some(n) if n > 0 => Ok(n),
            _ => bail!(
                "data.docs = {} leaves no training documents after {} valid and {} test",
                self.docs,
                self.valid_docs,
                self.test_docs
            ),
        }
    }

    pub fn gen_config(&self, docs: usize, sentences_per_doc: Span) -> GenConfig {
        GenConfig {
            vocab_size: self.vocab_size,
            docs,
            sentence_len: self.sentence_len,
            sentences_per_doc,
            cue_rate: self.cue_rate,
            ambiguous_rate: self.ambiguous_rate,
        }
    }

    pub fn contrastive_config(&self) -> ContrastiveConfig {
        ContrastiveConfig {
            vocab_size: self.vocab_size,
            items: self.contrastive_items,
            sentence_len: Span::new(self.sentence_len.min.max(2), self.sentence_len.max.max(2)),
            sentences_per_doc: self.contrastive_sentences_per_doc,
            distance: self.contrastive_distance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub max_positions: usize,
    pub laa: bool,
    pub laa_encoder_self: bool,
    pub laa_decoder_self: bool,
    pub laa_cross: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 4,
            d_model: 64,
            d_ff: 128,
            dropout: 0.1,
            max_positions: 512,
            laa: true,
            laa_encoder_self: true,
            laa_decoder_self: true,
            laa_cross: true,
        }
    }
}

impl ModelSection {
    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            layers: self.layers,
            heads: self.heads,
            d_model: self.d_model,
            d_ff: self.d_ff,
            dropout: self.dropout,
            max_positions: self.max_positions,
            vocab_size,
            scale_mode: if self.laa { ScaleMode::Laa } else { ScaleMode::Baseline },
            laa_encoder_self: self.laa_encoder_self,
            laa_decoder_self: self.laa_decoder_self,
            laa_cross: self.laa_cross,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub gamma: f64,
    pub max_len: usize,
    pub dls: bool,
    pub lr: f64,
    pub warmup: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub label_smoothing: f64,
    pub batch_tokens: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            epochs: 200,
            gamma: 5.0,
            max_len: 128,
            dls: true,
            lr: 3e-3,
            warmup: 40,
            beta1: 0.9,
            beta2: 0.98,
            label_smoothing: 0.1,
            batch_tokens: 512,
        }
    }
}

impl TrainSection {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            gamma: self.gamma,
            max_len: self.max_len,
            policy: if self.dls { "dls" } else { "fixed" }.into(),
            lr: self.lr,
            warmup: self.warmup,
            beta1: self.beta1,
            beta2: self.beta2,
            label_smoothing: self.label_smoothing,
            batch_tokens: self.batch_tokens,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeSection {
    pub strategy: String,
    pub beam: usize,
    pub alpha: f64,
    pub window_fraction: f64,
    pub collapse: CollapsePolicy,
    /// Cut documents into pieces of at most this many encoded tokens.
    pub max_len: Option<usize>,
}

impl Default for DecodeSection {
    fn default() -> Self {
        Self {
            strategy: "sliding".into(),
            beam: 5,
            alpha: 1.0,
            window_fraction: 0.8,
            collapse: CollapsePolicy::EverySentence,
            max_len: None,
        }
    }
}

impl DecodeSection {
    pub fn params(&self) -> DecodeParams {
        DecodeParams {
            beam: self.beam,
            alpha: self.alpha,
            max_len: self.max_len,
            window_fraction: self.window_fraction,
            collapse: self.collapse,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeSection {
    pub entropy_lengths: Vec<usize>,
    pub entropy_draws: usize,
    pub entropy_iota: f64,
    pub entropy_d_k: usize,
    pub length_bin: usize,
    pub sweep_lengths: Vec<usize>,
}

impl Default for AnalyzeSection {
    fn default() -> Self {
        Self {
            entropy_lengths: vec![16, 64, 256, 1024],
            entropy_draws: 1000,
            entropy_iota: 64.0,
            entropy_d_k: 16,
            length_bin: 8,
            sweep_lengths: vec![32, 128, 320],
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.decode;
        if !(d.window_fraction > 0.0 && d.window_fraction <= 1.0) {
            bail!("decode.window_fraction must lie in (0, 1], got {}", d.window_fraction);
        }
        if d.beam == 0 {
            bail!("decode.beam must be at least 1");
        }
        let registry = StrategyRegistry::default();
        if let Err(e) = registry.get(&d.strategy) {
            bail!("decode.strategy: {e}");
        }
        if d.collapse == CollapsePolicy::OnEviction && d.strategy != "sliding" {
            bail!("decode.collapse = on_eviction only applies to the sliding strategy");
        }
        if d.max_len == Some(0) {
            bail!("decode.max_len must be positive");
        }
        if self.train.max_len > self.model.max_positions {
            bail!(
                "train.max_len {} exceeds model.max_positions {}",
                self.train.max_len,
                self.model.max_positions
            );
        }
        if self.analyze.length_bin == 0 {
            bail!("analyze.length_bin must be positive");
        }
        self.data.train_docs()?;
        self.data.gen_config(1, self.data.sentences_per_doc).validate()?;
        self.model.model_config(self.data.vocab_size).validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(toml::from_str::<RunConfig>("").unwrap(), RunConfig::default());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = RunConfig::default();
        c.decode.max_len = Some(64);
        c.paths.checkpoint = Some("m.ckpt".into());
        let back: RunConfig = toml::from_str(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("[train]\nepoch = 3\n").is_err());
    }

    #[test]
    fn bad_combinations_fail_validation() {
        let mut c = RunConfig::default();
        c.decode.window_fraction = 1.5;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.decode.strategy = "segmented".into();
        c.decode.collapse = CollapsePolicy::OnEviction;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.decode.strategy = "greedy".into();
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.data.docs = 20;
        assert!(c.validate().is_err());
    }
}
