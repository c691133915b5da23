//! Dynamic length sampling.
//!
//! Each epoch draws segment-length budgets from a temperature-annealed
//! distribution `p_l ∝ exp(-l / T)`, `T = exp(ep - gamma)`, and cuts every
//! document greedily under those budgets. Early epochs see mostly single
//! sentences; as `T` grows the budgets approach uniform on `1..=L`.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{encoded_len, Document};
use crate::error::{config_err, Error, Result};
use crate::seed;

/// `T = e^(ep - gamma)`.
pub fn temperature(epoch: usize, gamma: f64) -> f64 {
    (epoch as f64 - gamma).exp()
}

/// Log-probabilities of lengths `1..=max_len` (index 0 holds length 1).
/// Computed in the log domain: `e^{-l}` underflows long before l = 512 at
/// small temperatures.
pub fn length_distribution(max_len: usize, temperature: f64) -> Vec<f64> {
    assert!(max_len >= 1 && temperature > 0.0);
    let logits: Vec<f64> = (1..=max_len).map(|l| -(l as f64) / temperature).collect();
    let lse = log_sum_exp(&logits);
    logits.into_iter().map(|a| a - lse).collect()
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthSchedule {
    pub max_len: usize,
    pub gamma: f64,
    pub epoch: usize,
    pub temperature: f64,
    pub log_probs: Vec<f64>,
    #[serde(skip)]
    cdf: Vec<f64>,
}

impl LengthSchedule {
    pub fn new(max_len: usize, gamma: f64, epoch: usize) -> Result<Self> {
        if max_len == 0 {
            return Err(config_err("maximum length must be at least 1"));
        }
        if epoch == 0 {
            return Err(config_err("epochs are 1-based"));
        }
        let t = temperature(epoch, gamma);
        if !(t > 0.0 && t.is_finite()) {
            return Err(config_err(format!("temperature {t} out of range")));
        }
        let log_probs = length_distribution(max_len, t);
        let mut acc = 0.0;
        let cdf = log_probs
            .iter()
            .map(|lp| {
                acc += lp.exp();
                acc
            })
            .collect();
        Ok(Self {
            max_len,
            gamma,
            epoch,
            temperature: t,
            log_probs,
            cdf,
        })
    }

    pub fn probs(&self) -> Vec<f64> {
        self.log_probs.iter().map(|lp| lp.exp()).collect()
    }

    /// One draw in `1..=max_len`.
    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        let total = *self.cdf.last().unwrap();
        let u = rng.random::<f64>() * total;
        self.cdf.partition_point(|&c| c <= u).min(self.max_len - 1) + 1
    }
}

pub fn sample_lengths(schedule: &LengthSchedule, rng: &mut impl Rng, count: usize) -> Vec<usize> {
    (0..count).map(|_| schedule.sample(rng)).collect()
}

/// How segment lengths are measured against a budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LengthAccounting {
    /// Encoded length including BOS, SEP and EOS.
    Encoded,
    /// Plain sum of sentence lengths.
    Raw,
}

impl LengthAccounting {
    pub fn measure<I: IntoIterator<Item = usize>>(self, lengths: I) -> usize {
        match self {
            LengthAccounting::Encoded => encoded_len(lengths),
            LengthAccounting::Raw => lengths.into_iter().sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub doc_id: String,
    pub doc_index: usize,
    /// First sentence (0-based).
    pub start: usize,
    /// Last sentence, inclusive.
    pub end: usize,
    pub src_len: usize,
    pub tgt_len: usize,
    pub budget: usize,
    pub oversized: bool,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.src_len.max(self.tgt_len)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn sentences(&self) -> std::ops::RangeInclusive<usize> {
        self.start..=self.end
    }
}

/// Greedy left-to-right packing. One budget is consumed per emitted
/// segment. A first sentence that alone exceeds its budget on either side is
/// emitted by itself and flagged oversized.
pub fn segment_document(
    doc: &Document,
    doc_index: usize,
    mut next_budget: impl FnMut() -> usize,
    accounting: LengthAccounting,
) -> Vec<Segment> {
    let src: Vec<usize> = doc.sentences.iter().map(|p| p.source.len()).collect();
    let tgt: Vec<usize> = doc.sentences.iter().map(|p| p.target.len()).collect();
    let measure = |a: usize, b: usize| {
        (
            accounting.measure(src[a..=b].iter().copied()),
            accounting.measure(tgt[a..=b].iter().copied()),
        )
    };

    let mut out = Vec::new();
    let mut start = 0;
    while start < src.len() {
        let budget = next_budget();
        let (s0, t0) = measure(start, start);
        let (end, src_len, tgt_len, oversized) = if s0 > budget || t0 > budget {
            (start, s0, t0, true)
        } else {
            let (mut end, mut s, mut t) = (start, s0, t0);
            while end + 1 < src.len() {
                let (s1, t1) = measure(start, end + 1);
                if s1 > budget || t1 > budget {
                    break;
                }
                end += 1;
                s = s1;
                t = t1;
            }
            (end, s, t, false)
        };
        out.push(Segment {
            doc_id: doc.id.clone(),
            doc_index,
            start,
            end,
            src_len,
            tgt_len,
            budget,
            oversized,
        });
        start = end + 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochData {
    pub epoch: usize,
    /// `None` when segments come from fixed packing.
    pub temperature: Option<f64>,
    pub segments: Vec<Segment>,
    /// Mean of `max(src_len, tgt_len)` over all segments.
    pub iota: f64,
}

fn mean_length(segments: &[Segment]) -> f64 {
    if segments.is_empty() {
        return 0.0;
    }
    segments.iter().map(|s| s.len() as f64).sum::<f64>() / segments.len() as f64
}

fn shuffled(mut segments: Vec<Segment>, seed: u64) -> Vec<Segment> {
    segments.shuffle(&mut seed::derived_rng(seed, "segment-order", 0));
    segments
}

/// Resample budgets for epoch `epoch` and cut the whole corpus.
pub fn build_epoch(
    corpus: &[Document],
    epoch: usize,
    gamma: f64,
    max_len: usize,
    seed: u64,
) -> Result<EpochData> {
    if corpus.is_empty() {
        return Err(config_err("corpus is empty"));
    }
    let schedule = LengthSchedule::new(max_len, gamma, epoch)?;
    let segments = corpus
        .iter()
        .enumerate()
        .flat_map(|(i, doc)| {
            let mut rng = seed::derived_rng(seed, "budgets", seed::fnv1a(doc.id.as_bytes()));
            segment_document(doc, i, || schedule.sample(&mut rng), LengthAccounting::Encoded)
        })
        .collect::<Vec<_>>();
    let iota = mean_length(&segments);
    Ok(EpochData {
        epoch,
        temperature: Some(schedule.temperature),
        segments: shuffled(segments, seed),
        iota,
    })
}

/// Pack every document greedily to `max_len` (the fixed-length baseline).
pub fn pack_fixed(corpus: &[Document], epoch: usize, max_len: usize, seed: u64) -> Result<EpochData> {
    if corpus.is_empty() {
        return Err(config_err("corpus is empty"));
    }
    let segments: Vec<Segment> = corpus
        .iter()
        .enumerate()
        .flat_map(|(i, doc)| segment_document(doc, i, || max_len, LengthAccounting::Encoded))
        .collect();
    let iota = mean_length(&segments);
    Ok(EpochData {
        epoch,
        temperature: None,
        segments: shuffled(segments, seed),
        iota,
    })
}

/// Produces the training segments of one epoch.
pub trait SegmentPolicy: Send + Sync {
    fn name(&self) -> &'static str;
    fn epoch(&self, corpus: &[Document], epoch: usize, seed: u64) -> Result<EpochData>;
}

pub struct DynamicLength {
    pub gamma: f64,
    pub max_len: usize,
}

impl SegmentPolicy for DynamicLength {
    fn name(&self) -> &'static str {
        "dls"
    }

    fn epoch(&self, corpus: &[Document], epoch: usize, seed: u64) -> Result<EpochData> {
        build_epoch(corpus, epoch, self.gamma, self.max_len, seed)
    }
}

pub struct FixedPacking {
    pub max_len: usize,
}

impl SegmentPolicy for FixedPacking {
    fn name(&self) -> &'static str {
        "fixed"
    }

    fn epoch(&self, corpus: &[Document], epoch: usize, seed: u64) -> Result<EpochData> {
        pack_fixed(corpus, epoch, self.max_len, seed)
    }
}

type PolicyFactory = fn(gamma: f64, max_len: usize) -> Box<dyn SegmentPolicy>;

/// Name -> segment policy constructor.
pub struct PolicyRegistry {
    entries: BTreeMap<&'static str, PolicyFactory>,
}

impl Default for PolicyRegistry {
    fn default() -> Self {
        let mut r = Self { entries: BTreeMap::new() };
        r.register("dls", |gamma, max_len| Box::new(DynamicLength { gamma, max_len }));
        r.register("fixed", |_, max_len| Box::new(FixedPacking { max_len }));
        r
    }
}

impl PolicyRegistry {
    pub fn register(&mut self, name: &'static str, factory: PolicyFactory) {
        self.entries.insert(name, factory);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }

    pub fn create(&self, name: &str, gamma: f64, max_len: usize) -> Result<Box<dyn SegmentPolicy>> {
        self.entries
            .get(name)
            .map(|f| f(gamma, max_len))
            .ok_or_else(|| Error::UnknownStrategy {
                kind: "segment policy",
                name: name.to_string(),
                known: self.names().join(", "),
            })
    }
}

/// Histogram of segment lengths with fixed-width bins over `1..=max_len`;
/// longer (oversized) segments land in the last bin. Returns
/// `(bin lower edge, count)` for every bin, empty ones included.
pub fn length_histogram(segments: &[Segment], max_len: usize, bin_width: usize) -> Vec<(usize, usize)> {
    let bins = max_len.div_ceil(bin_width).max(1);
    let mut counts = vec![0usize; bins];
    for s in segments {
        let b = (s.len().max(1) - 1) / bin_width;
        counts[b.min(bins - 1)] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (i * bin_width + 1, c))
        .collect()
}
