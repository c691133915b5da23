//! BLEU at sentence and document granularity, and contrastive accuracy.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::checkpoint::ModelCheckpoint;
use crate::corpus::{encode_side, ContrastiveItem, TokenId};
use crate::error::{contract, Result};

pub const MAX_ORDER: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    pub score: f64,
    pub precisions: Vec<f64>,
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

/// Clipped n-gram match counts of one pair, accumulated into `stats`.
#[derive(Debug, Clone, Default)]
struct Stats {
    matches: [u64; MAX_ORDER],
    totals: [u64; MAX_ORDER],
    hyp_len: usize,
    ref_len: usize,
}

fn ngram_counts(tokens: &[TokenId], n: usize) -> HashMap<&[TokenId], u64> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

impl Stats {
    fn add(&mut self, hyp: &[TokenId], reference: &[TokenId]) {
        self.hyp_len += hyp.len();
        self.ref_len += reference.len();
        for n in 1..=MAX_ORDER {
            let h = ngram_counts(hyp, n);
            let r = ngram_counts(reference, n);
            self.totals[n - 1] += hyp.len().saturating_sub(n - 1) as u64;
            self.matches[n - 1] += h.iter().map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0))).sum::<u64>();
        }
    }

    fn report(&self) -> BleuReport {
        let mut precisions = Vec::with_capacity(MAX_ORDER);
        for n in 0..MAX_ORDER {
            let (m, t) = (self.matches[n] as f64, self.totals[n] as f64);
            let p = if n > 0 && self.matches[n] == 0 { 1.0 / (t + 1.0) } else if t > 0.0 { m / t } else { 0.0 };
            precisions.push(p);
        }
        let brevity_penalty = if self.hyp_len == 0 {
            0.0
        } else if self.hyp_len < self.ref_len {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        } else {
            1.0
        };
        let score = if self.hyp_len == 0 || precisions[0] == 0.0 {
            0.0
        } else {
            let mean_log = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64;
            100.0 * brevity_penalty * mean_log.exp()
        };
        BleuReport { score, precisions, brevity_penalty, hyp_len: self.hyp_len, ref_len: self.ref_len }
    }
}

/// Corpus BLEU over aligned (hypothesis, reference) pairs.
pub fn corpus_bleu(hyps: &[Vec<TokenId>], refs: &[Vec<TokenId>]) -> Result<BleuReport> {
    if hyps.len() != refs.len() {
        return Err(contract(format!("{} hypotheses for {} references", hyps.len(), refs.len())));
    }
    let mut s = Stats::default();
    for (h, r) in hyps.iter().zip(refs) {
        s.add(h, r);
    }
    Ok(s.report())
}

pub fn sentence_bleu(hyp: &[TokenId], reference: &[TokenId]) -> BleuReport {
    let mut s = Stats::default();
    s.add(hyp, reference);
    s.report()
}

/// Sentence-level corpus BLEU over sentence pairs.
pub fn s_bleu(hyps: &[Vec<TokenId>], refs: &[Vec<TokenId>]) -> Result<f64> {
    Ok(corpus_bleu(hyps, refs)?.score)
}

/// Document-level BLEU: each document's sentences are concatenated, without
/// separators, into one sequence.
pub fn d_bleu(hyps: &[Vec<Vec<TokenId>>], refs: &[Vec<Vec<TokenId>>]) -> Result<f64> {
    if hyps.len() != refs.len() {
        return Err(contract(format!("{} hypothesis documents for {} references", hyps.len(), refs.len())));
    }
    for (i, (h, r)) in hyps.iter().zip(refs).enumerate() {
        if h.len() != r.len() {
            return Err(contract(format!("document {i}: {} hypothesis sentences for {} references", h.len(), r.len())));
        }
    }
    let h: Vec<Vec<TokenId>> = hyps.iter().map(|d| d.concat()).collect();
    let r: Vec<Vec<TokenId>> = refs.iter().map(|d| d.concat()).collect();
    Ok(corpus_bleu(&h, &r)?.score)
}

/// Scores a (source, target) pair of encoded sequences.
pub trait SequenceScorer {
    fn score(&self, source: &[TokenId], target: &[TokenId]) -> Result<f64>;
}

impl SequenceScorer for ModelCheckpoint {
    fn score(&self, source: &[TokenId], target: &[TokenId]) -> Result<f64> {
        self.model.sequence_log_prob(source, target, self.iota)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextMode {
    /// Score candidate documents with the whole source document.
    Document,
    /// Score only the ambiguous sentence, in isolation.
    Blind,
}

/// Index of the best-scoring candidate; ties go to the lowest index.
pub fn pick_candidate(model: &dyn SequenceScorer, item: &ContrastiveItem, mode: ContextMode) -> Result<usize> {
    let mut best = (0, f64::NEG_INFINITY);
    for k in 0..item.candidates.len() {
        let s = match mode {
            ContextMode::Document => {
                let src = encode_side(&item.document.sources());
                let tgt = encode_side(&item.candidate_targets(k));
                model.score(&src, &tgt)?
            }
            ContextMode::Blind => {
                let src = encode_side(&[&item.document.sentences[item.ambiguous_sentence].source]);
                model.score(&src, &encode_side(&[&item.candidates[k]]))?
            }
        };
        if k == 0 || s > best.1 {
            best = (k, s);
        }
    }
    Ok(best.0)
}

pub fn contrastive_accuracy(model: &dyn SequenceScorer, suite: &[ContrastiveItem], mode: ContextMode) -> Result<f64> {
    if suite.is_empty() {
        return Err(contract("contrastive suite is empty"));
    }
    let mut correct = 0usize;
    for item in suite {
        if pick_candidate(model, item, mode)? == item.correct_index {
            correct += 1;
        }
    }
    Ok(correct as f64 / suite.len() as f64)
}

/// Summary written by the evaluate subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub s_bleu: f64,
    pub d_bleu: f64,
    pub contrastive_acc: Option<f64>,
    pub contrastive_acc_blind: Option<f64>,
}
