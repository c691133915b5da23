//! Training loop and gradient verification.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{EpochLog, ModelCheckpoint};
use crate::corpus::{encode_segment, Document, TokenId, BOS, EOS, NUM_RESERVED, SEP};
use crate::dls::{EpochData, PolicyRegistry, Segment};
use crate::error::{config_err, Error, Result};
use crate::model::{ModelConfig, Transformer};
use crate::nn::{Adam, AdamConfig};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub gamma: f64,
    /// Maximum training sequence length `L`.
    pub max_len: usize,
    /// Segment policy name: `dls` or `fixed`.
    pub policy: String,
    pub lr: f64,
    pub warmup: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub label_smoothing: f64,
    /// Token budget per batch (sum of segment lengths).
    pub batch_tokens: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            gamma: 5.0,
            max_len: 128,
            policy: "dls".into(),
            lr: 5e-4,
            warmup: 40,
            beta1: 0.9,
            beta2: 0.98,
            label_smoothing: 0.1,
            batch_tokens: 1024,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            warmup: self.warmup,
            ..AdamConfig::default()
        }
    }
}

/// Group segments into token-budget batches of similar length, then
/// shuffle batch order.
pub fn make_batches(segments: &[Segment], batch_tokens: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..segments.len()).collect();
    order.sort_by_key(|&i| segments[i].len());
    let mut batches = Vec::new();
    let mut current = Vec::new();
    let mut tokens = 0;
    for i in order {
        let len = segments[i].len();
        if !current.is_empty() && tokens + len > batch_tokens {
            batches.push(std::mem::take(&mut current));
            tokens = 0;
        }
        current.push(i);
        tokens += len;
    }
    if !current.is_empty() {
        batches.push(current);
    }
    batches.shuffle(rng);
    batches
}

pub fn segment_pair(corpus: &[Document], seg: &Segment) -> (Vec<TokenId>, Vec<TokenId>) {
    encode_segment(&corpus[seg.doc_index].sentences[seg.sentences()])
}

pub fn train(corpus: &[Document], model_config: &ModelConfig, config: &TrainConfig) -> Result<ModelCheckpoint> {
    train_with_observer(corpus, model_config, config, |_| {})
}

/// Like [`train`], calling `observe` with each epoch's segments before the
/// epoch's updates run.
pub fn train_with_observer(
    corpus: &[Document],
    model_config: &ModelConfig,
    config: &TrainConfig,
    mut observe: impl FnMut(&EpochData),
) -> Result<ModelCheckpoint> {
    if corpus.is_empty() {
        return Err(config_err("corpus is empty"));
    }
    if config.epochs == 0 {
        return Err(config_err("epochs must be at least 1"));
    }
    if !(0.0..1.0).contains(&config.label_smoothing) {
        return Err(config_err("label smoothing must lie in [0, 1)"));
    }
    if model_config.max_positions < config.max_len {
        return Err(config_err(format!(
            "max positions {} below training length {}",
            model_config.max_positions, config.max_len
        )));
    }
    let policy = PolicyRegistry::default().create(&config.policy, config.gamma, config.max_len)?;
    let mut model = Transformer::new(model_config.clone(), seed::derive(config.seed, "model", 0))?;
    let mut adam = Adam::new(config.adam(), model.params());
    let mut grads = model.params().zeros_like();
    let mut log = Vec::with_capacity(config.epochs);
    let mut iota = 0.0;

    for ep in 1..=config.epochs {
        let epoch_seed = seed::derive(config.seed, "epoch", ep as u64);
        let data = policy.epoch(corpus, ep, epoch_seed)?;
        if let Some(s) = data.segments.iter().find(|s| s.len() > model_config.max_positions) {
            return Err(config_err(format!(
                "segment of {} tokens in {} exceeds max positions {}",
                s.len(),
                s.doc_id,
                model_config.max_positions
            )));
        }
        observe(&data);
        iota = data.iota;
        let mut batch_rng = seed::derived_rng(epoch_seed, "batches", 0);
        let mut dropout_rng = seed::derived_rng(epoch_seed, "dropout", 0);
        let batches = make_batches(&data.segments, config.batch_tokens, &mut batch_rng);

        let (mut loss_sum, mut token_sum) = (0.0, 0usize);
        for batch in batches {
            let pairs: Vec<_> = batch.iter().map(|&i| segment_pair(corpus, &data.segments[i])).collect();
            let tokens: usize = pairs.iter().map(|(_, t)| t.len() - 1).sum();
            grads.fill_zero();
            for (src, tgt) in &pairs {
                loss_sum += model.loss_and_grad(
                    src,
                    tgt,
                    config.label_smoothing,
                    iota,
                    Some(&mut dropout_rng),
                    1.0 / tokens as f64,
                    &mut grads,
                )?;
            }
            token_sum += tokens;
            if !loss_sum.is_finite() {
                return Err(Error::Divergence { epoch: ep, loss: loss_sum });
            }
            adam.update(model.params_mut(), &grads);
        }
        let loss = loss_sum / token_sum as f64;
        if !loss.is_finite() || !model.params().all_finite() {
            return Err(Error::Divergence { epoch: ep, loss });
        }
        log::info!(
            "epoch {ep}: loss {loss:.4}, segments {}, iota {iota:.2}, steps {}",
            data.segments.len(),
            adam.steps()
        );
        log.push(EpochLog { epoch: ep, loss, temperature: data.temperature, iota });
    }

    Ok(ModelCheckpoint {
        model,
        iota,
        train_len: config.max_len,
        training_log: log,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub worst_param: String,
}

/// Floor on the relative-error denominator. Key biases have an exactly
/// zero gradient, where the finite difference is pure roundoff (~1e-10).
pub const GRAD_CHECK_FLOOR: f64 = 1e-5;

/// Compare analytic gradients of the loss against central finite
/// differences over `samples` randomly chosen scalar parameters.
pub fn grad_check(model_config: &ModelConfig, iota: f64, samples: usize, seed_value: u64) -> Result<GradCheckReport> {
    if model_config.d_model > 16 || model_config.max_positions > 12 {
        return Err(config_err("gradient check expects d_model <= 16 and max positions <= 12"));
    }
    let config = ModelConfig { dropout: 0.0, ..model_config.clone() };
    let model = Transformer::new(config.clone(), seed_value)?;
    let mut rng = seed::derived_rng(seed_value, "grad-check", 0);

    let content = NUM_RESERVED..config.vocab_size as TokenId;
    let mut seq = |len: usize| -> Vec<TokenId> {
        let mut v = vec![BOS];
        for i in 0..len {
            v.push(if i == len / 2 { SEP } else { rng.random_range(content.clone()) });
        }
        v.push(EOS);
        v
    };
    let max = config.max_positions;
    let src = seq(max - 2);
    let tgt = seq(max - 1);
    let smoothing = 0.1;

    let mut grads = model.params().zeros_like();
    model.loss_and_grad(&src, &tgt, smoothing, iota, None, 1.0, &mut grads)?;

    let total = model.params().scalar_count();
    let sizes: Vec<usize> = model.params().tensors().iter().map(|t| t.len()).collect();
    let mut probe = model.clone();
    let h = 1e-5;
    let mut report = GradCheckReport { max_rel_error: 0.0, checked: 0, worst_param: String::new() };
    for _ in 0..samples {
        let mut flat = rng.random_range(0..total);
        let mut t = 0;
        while flat >= sizes[t] {
            flat -= sizes[t];
            t += 1;
        }
        let cols = model.params().tensors()[t].ncols();
        let idx = (flat / cols, flat % cols);
        let original = model.params().tensors()[t][idx];
        let mut eval = |x: f64| -> Result<f64> {
            probe.params_mut().tensors_mut()[t][idx] = x;
            let mut sink = probe.params().zeros_like();
            probe.loss_and_grad(&src, &tgt, smoothing, iota, None, 0.0, &mut sink)
        };
        let numeric = (eval(original + h)? - eval(original - h)?) / (2.0 * h);
        eval(original)?;
        let analytic = grads.tensors()[t][idx];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_param = format!("{}[{},{}]", model.params().names()[t], idx.0, idx.1);
        }
        report.checked += 1;
    }
    Ok(report)
}
