//! Autoregressive decoding: beam search, the split-then-translate baseline
//! and sliding-window decoding.
//!
//! Decoders talk to models through [`StepModel`], so the same search code
//! drives a trained [`ModelCheckpoint`] and the deterministic [`CopyModel`].

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::checkpoint::ModelCheckpoint;
use crate::corpus::{encode_side, encoded_len, Document, TokenId, BOS, EOS, SEP};
use crate::error::{config_err, contract, Error, Result};
use crate::metrics;
use crate::model::IncrementalState;

/// Incremental decoder state. `advance` feeds one decoder-input token and
/// returns log-probabilities over the vocabulary for the next token.
pub trait DecoderState<'m> {
    fn advance(&mut self, token: TokenId) -> Result<Vec<f64>>;
    fn fork(&self) -> Box<dyn DecoderState<'m> + 'm>;
}

pub trait StepModel {
    fn vocab_size(&self) -> usize;
    fn max_positions(&self) -> usize;
    /// Maximum training length; sliding windows are sized from it.
    fn train_len(&self) -> usize;
    fn start<'m>(&'m self, source: &[TokenId]) -> Result<Box<dyn DecoderState<'m> + 'm>>;
}

impl<'m> DecoderState<'m> for IncrementalState<'m> {
    fn advance(&mut self, token: TokenId) -> Result<Vec<f64>> {
        IncrementalState::advance(self, token)
    }

    fn fork(&self) -> Box<dyn DecoderState<'m> + 'm> {
        Box::new(self.clone())
    }
}

impl StepModel for ModelCheckpoint {
    fn vocab_size(&self) -> usize {
        self.config().vocab_size
    }

    fn max_positions(&self) -> usize {
        self.config().max_positions
    }

    fn train_len(&self) -> usize {
        self.train_len
    }

    fn start<'m>(&'m self, source: &[TokenId]) -> Result<Box<dyn DecoderState<'m> + 'm>> {
        Ok(Box::new(self.model.begin(source, self.iota)?))
    }
}

/// Predicts the source token at the decoder's current position (then EOS)
/// with probability 0.9. With identity targets it is a perfect translator.
#[derive(Debug, Clone)]
pub struct CopyModel {
    pub vocab_size: usize,
    pub max_positions: usize,
    pub train_len: usize,
}

#[derive(Clone)]
struct CopyState {
    source: Vec<TokenId>,
    vocab: usize,
    pos: usize,
}

impl<'m> DecoderState<'m> for CopyState {
    fn advance(&mut self, _token: TokenId) -> Result<Vec<f64>> {
        self.pos += 1;
        let next = self.source.get(self.pos).copied().unwrap_or(EOS) as usize;
        let rest = (0.1 / (self.vocab - 1) as f64).ln();
        let mut lp = vec![rest; self.vocab];
        lp[next] = 0.9f64.ln();
        Ok(lp)
    }

    fn fork(&self) -> Box<dyn DecoderState<'m> + 'm> {
        Box::new(self.clone())
    }
}

impl StepModel for CopyModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn max_positions(&self) -> usize {
        self.max_positions
    }

    fn train_len(&self) -> usize {
        self.train_len
    }

    fn start<'m>(&'m self, source: &[TokenId]) -> Result<Box<dyn DecoderState<'m> + 'm>> {
        Ok(Box::new(CopyState { source: source.to_vec(), vocab: self.vocab_size, pos: 0 }))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamHyp {
    /// Generated tokens, without the stop token.
    pub tokens: Vec<TokenId>,
    /// Cumulative log-probability of the generated tokens (stop included).
    pub score: f64,
    /// `score / generated_len^alpha`.
    pub normalized: f64,
    pub stopped_by: Option<TokenId>,
}

fn normalize(score: f64, len: usize, alpha: f64) -> f64 {
    if len == 0 {
        score
    } else {
        score / (len as f64).powf(alpha)
    }
}

struct Live<'m> {
    tokens: Vec<TokenId>,
    score: f64,
    state: Box<dyn DecoderState<'m> + 'm>,
    next: Vec<f64>,
}

/// Beam search after a forced decoder prefix (BOS is fed implicitly).
/// Returns every finished hypothesis, best first; the length penalty only
/// counts newly generated tokens.
pub fn beam_search(
    model: &dyn StepModel,
    source: &[TokenId],
    forced_prefix: &[TokenId],
    beam: usize,
    alpha: f64,
    max_new: usize,
    stops: &[TokenId],
) -> Result<Vec<BeamHyp>> {
    if beam == 0 {
        return Err(config_err("beam size must be at least 1"));
    }
    if max_new == 0 {
        return Ok(vec![BeamHyp { tokens: Vec::new(), score: 0.0, normalized: 0.0, stopped_by: None }]);
    }
    let mut state = model.start(source)?;
    let mut next = state.advance(BOS)?;
    for &t in forced_prefix {
        next = state.advance(t)?;
    }
    let mut live = vec![Live { tokens: Vec::new(), score: 0.0, state, next }];
    let mut finished: Vec<BeamHyp> = Vec::new();
    let width = 2 * beam;

    for step in 0..max_new {
        let mut cands: Vec<(f64, usize, TokenId)> = Vec::with_capacity(live.len() * width);
        for (h, hyp) in live.iter().enumerate() {
            let mut idx: Vec<usize> = (0..hyp.next.len()).collect();
            let k = width.min(idx.len());
            idx.select_nth_unstable_by(k - 1, |&a, &b| hyp.next[b].total_cmp(&hyp.next[a]).then(a.cmp(&b)));
            for &v in &idx[..k] {
                cands.push((hyp.score + hyp.next[v], h, v as TokenId));
            }
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

        let mut chosen = Vec::with_capacity(beam);
        for (rank, &(score, h, v)) in cands.iter().enumerate() {
            if stops.contains(&v) {
                if rank < beam {
                    let tokens = live[h].tokens.clone();
                    let len = tokens.len() + 1;
                    finished.push(BeamHyp { tokens, score, normalized: normalize(score, len, alpha), stopped_by: Some(v) });
                }
            } else if chosen.len() < beam {
                chosen.push((score, h, v));
            }
            if chosen.len() == beam && rank + 1 >= beam {
                break;
            }
        }
        if finished.len() >= beam || chosen.is_empty() {
            live.clear();
            break;
        }
        let last_step = step + 1 == max_new;
        let mut next_live = Vec::with_capacity(chosen.len());
        for (score, h, v) in chosen {
            let mut tokens = live[h].tokens.clone();
            tokens.push(v);
            if last_step {
                next_live.push(Live { tokens, score, state: live[h].state.fork(), next: Vec::new() });
            } else {
                let mut state = live[h].state.fork();
                let next = state.advance(v)?;
                next_live.push(Live { tokens, score, state, next });
            }
        }
        live = next_live;
    }
    for hyp in live {
        let len = hyp.tokens.len();
        finished.push(BeamHyp { normalized: normalize(hyp.score, len, alpha), tokens: hyp.tokens, score: hyp.score, stopped_by: None });
    }
    // Stable: equal scores keep discovery order.
    finished.sort_by(|a, b| b.normalized.total_cmp(&a.normalized));
    Ok(finished)
}

/// Default generation cap for a source of `len` tokens.
pub fn generation_cap(len: usize) -> usize {
    2 * len + 8
}

/// Translate one encoded source in a single pass; returns generated target
/// tokens (separators included, final EOS stripped).
pub fn decode_standard(
    model: &dyn StepModel,
    encoded_source: &[TokenId],
    beam: usize,
    alpha: f64,
    max_new: usize,
) -> Result<Vec<TokenId>> {
    if encoded_source.len() > model.max_positions() {
        return Err(contract(format!(
            "source of {} tokens exceeds max positions {}; segment it or use sliding decoding",
            encoded_source.len(),
            model.max_positions()
        )));
    }
    let max_new = max_new.min(model.max_positions().saturating_sub(1));
    let hyps = beam_search(model, encoded_source, &[], beam, alpha, max_new, &[EOS])?;
    Ok(hyps.into_iter().next().map(|h| h.tokens).unwrap_or_default())
}

/// Split a generated stream on SEP into exactly `expected` sentences:
/// missing sentences come back empty, surplus ones are merged into the last.
pub fn align_sentences(stream: &[TokenId], expected: usize) -> Vec<Vec<TokenId>> {
    if expected == 0 {
        return Vec::new();
    }
    let mut parts: Vec<Vec<TokenId>> = stream.split(|&t| t == SEP).map(<[TokenId]>::to_vec).collect();
    if parts.len() > expected {
        let tail: Vec<TokenId> = parts.drain(expected..).flatten().collect();
        parts[expected - 1].extend(tail);
    }
    parts.resize(expected, Vec::new());
    parts
}

fn decode_whole(model: &dyn StepModel, sources: &[Vec<TokenId>], beam: usize, alpha: f64) -> Result<Vec<Vec<TokenId>>> {
    let src = encode_side(sources);
    let out = decode_standard(model, &src, beam, alpha, generation_cap(src.len()))?;
    Ok(align_sentences(&out, sources.len()))
}

/// Greedy sentence-granular chunks whose encoded source length stays within
/// `max_len` (a single longer sentence forms its own chunk).
pub fn chunk_sentences(sources: &[Vec<TokenId>], max_len: usize) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < sources.len() {
        let mut end = start + 1;
        while end < sources.len() && encoded_len(sources[start..=end].iter().map(Vec::len)) <= max_len {
            end += 1;
        }
        out.push(start..end);
        start = end;
    }
    out
}

/// Split-then-translate: decode each chunk independently and concatenate.
pub fn decode_segmented(
    model: &dyn StepModel,
    sources: &[Vec<TokenId>],
    max_len: usize,
    beam: usize,
    alpha: f64,
) -> Result<Vec<Vec<TokenId>>> {
    if max_len > model.max_positions() {
        return Err(contract(format!(
            "chunk length {max_len} exceeds max positions {}",
            model.max_positions()
        )));
    }
    let mut out = Vec::with_capacity(sources.len());
    for range in chunk_sentences(sources, max_len) {
        let chunk = &sources[range.clone()];
        let mut src = encode_side(chunk);
        if src.len() > max_len {
            log::warn!("sentence {} has {} encoded tokens; truncating to {max_len}", range.start, src.len());
            src.truncate(max_len - 1);
            src.push(EOS);
        }
        let gen = decode_standard(model, &src, beam, alpha, generation_cap(src.len()))?;
        out.extend(align_sentences(&gen, chunk.len()));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CollapsePolicy {
    /// Keep only the best hypothesis at every sentence boundary.
    #[default]
    EverySentence,
    /// Carry up to `beam` hypotheses across boundaries until an eviction.
    OnEviction,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlidingConfig {
    pub beam: usize,
    pub alpha: f64,
    /// Window budget as a fraction of the training length.
    pub window_fraction: f64,
    pub collapse: CollapsePolicy,
}

impl Default for SlidingConfig {
    fn default() -> Self {
        Self { beam: 5, alpha: 1.0, window_fraction: 0.8, collapse: CollapsePolicy::EverySentence }
    }
}

/// Snapshot of the sliding window just before a sentence is translated.
#[derive(Debug, Clone, PartialEq)]
pub struct SlideState {
    /// Source sentence indices in the window, the one being translated last.
    pub window_src: Vec<usize>,
    pub window_src_len: usize,
    /// Translations of all window sentences but the last (the forced prefix).
    pub window_tgt: Vec<Vec<TokenId>>,
    pub window_tgt_len: usize,
    pub committed: Vec<Vec<TokenId>>,
    pub next_src_index: usize,
    pub window_budget: usize,
}

/// Instrumentation hooks for [`decode_sliding`].
pub trait SlideObserver {
    fn on_step(&mut self, _state: &SlideState) {}
    fn on_evict(&mut self, _src_index: usize) {}
}

impl SlideObserver for () {}

#[derive(Clone)]
struct SlideHyp {
    /// Translations of the sentences currently in the window.
    window: VecDeque<Vec<TokenId>>,
    committed: Vec<Vec<TokenId>>,
    score: f64,
}

pub fn window_budget(train_len: usize, fraction: f64) -> usize {
    (fraction * train_len as f64).floor() as usize
}

/// Sliding-window decoding over a document's source sentences.
pub fn decode_sliding(
    model: &dyn StepModel,
    sources: &[Vec<TokenId>],
    config: &SlidingConfig,
    observer: &mut dyn SlideObserver,
) -> Result<Vec<Vec<TokenId>>> {
    if !(config.window_fraction > 0.0 && config.window_fraction <= 1.0) {
        return Err(config_err("window fraction must lie in (0, 1]"));
    }
    let budget = window_budget(model.train_len(), config.window_fraction);
    if let Some((i, s)) = sources.iter().enumerate().find(|(_, s)| encoded_len([s.len()]) > budget) {
        return Err(contract(format!(
            "sentence {i} has {} encoded tokens, above the window budget {budget}",
            encoded_len([s.len()])
        )));
    }
    if encoded_len(sources.iter().map(Vec::len)) <= budget {
        return decode_whole(model, sources, config.beam, config.alpha);
    }

    let mut window: VecDeque<usize> = VecDeque::new();
    let mut hyps = vec![SlideHyp { window: VecDeque::new(), committed: Vec::new(), score: 0.0 }];
    for j in 0..sources.len() {
        let mut evicted = false;
        loop {
            let src_len = encoded_len(window.iter().chain([&j]).map(|&i| sources[i].len()));
            let tgt_len = encoded_len(hyps[0].window.iter().map(Vec::len));
            if window.is_empty() || (src_len <= budget && tgt_len <= budget) {
                break;
            }
            let gone = window.pop_front().expect("non-empty");
            if !evicted && hyps.len() > 1 {
                hyps.truncate(1);
            }
            evicted = true;
            let h = &mut hyps[0];
            let tgt = h.window.pop_front().expect("paired with source");
            h.committed.push(tgt);
            observer.on_evict(gone);
        }
        if config.collapse == CollapsePolicy::EverySentence {
            hyps.truncate(1);
        }
        window.push_back(j);

        let best = &hyps[0];
        let state = SlideState {
            window_src: window.iter().copied().collect(),
            window_src_len: encoded_len(window.iter().map(|&i| sources[i].len())),
            window_tgt: best.window.iter().cloned().collect(),
            window_tgt_len: encoded_len(best.window.iter().map(Vec::len)),
            committed: best.committed.clone(),
            next_src_index: j,
            window_budget: budget,
        };
        debug_assert!(state.window_src_len <= budget && state.window_tgt_len <= budget);
        observer.on_step(&state);

        let src_sents: Vec<&Vec<TokenId>> = window.iter().map(|&i| &sources[i]).collect();
        let encoder_input = encode_side(&src_sents);
        let cap = generation_cap(sources[j].len());
        let mut next: Vec<SlideHyp> = Vec::new();
        for h in &hyps {
            let mut prefix = Vec::new();
            for t in &h.window {
                prefix.extend_from_slice(t);
                prefix.push(SEP);
            }
            let found = beam_search(model, &encoder_input, &prefix, config.beam, config.alpha, cap, &[SEP, EOS])?;
            for cand in found.into_iter().take(config.beam) {
                let mut nh = h.clone();
                nh.window.push_back(cand.tokens);
                nh.score += cand.normalized;
                next.push(nh);
            }
        }
        next.sort_by(|a, b| b.score.total_cmp(&a.score));
        next.truncate(config.beam.max(1));
        hyps = next;
    }
    let best = hyps.into_iter().next().expect("at least one hypothesis");
    let mut out = best.committed;
    out.extend(best.window);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub beam: usize,
    pub alpha: f64,
    /// Cut documents into sentence-granular pieces of at most this many
    /// encoded source tokens before decoding.
    pub max_len: Option<usize>,
    pub window_fraction: f64,
    pub collapse: CollapsePolicy,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self { beam: 5, alpha: 1.0, max_len: None, window_fraction: 0.8, collapse: CollapsePolicy::EverySentence }
    }
}

impl DecodeParams {
    fn sliding(&self) -> SlidingConfig {
        SlidingConfig { beam: self.beam, alpha: self.alpha, window_fraction: self.window_fraction, collapse: self.collapse }
    }
}

/// A document-level decoding strategy; returns one target sentence per
/// source sentence.
pub trait DecodeStrategy: Send + Sync {
    fn name(&self) -> &'static str;
    fn decode(&self, model: &dyn StepModel, sources: &[Vec<TokenId>], params: &DecodeParams) -> Result<Vec<Vec<TokenId>>>;
}

/// Whole document in one pass (pieces, when `max_len` is set).
pub struct Standard;

impl DecodeStrategy for Standard {
    fn name(&self) -> &'static str {
        "standard"
    }

    fn decode(&self, model: &dyn StepModel, sources: &[Vec<TokenId>], params: &DecodeParams) -> Result<Vec<Vec<TokenId>>> {
        match params.max_len {
            None => decode_whole(model, sources, params.beam, params.alpha),
            Some(l) => decode_segmented(model, sources, l, params.beam, params.alpha),
        }
    }
}

/// Split into chunks of at most `max_len` (default: the training length).
pub struct Segmented;

impl DecodeStrategy for Segmented {
    fn name(&self) -> &'static str {
        "segmented"
    }

    fn decode(&self, model: &dyn StepModel, sources: &[Vec<TokenId>], params: &DecodeParams) -> Result<Vec<Vec<TokenId>>> {
        let l = params.max_len.unwrap_or_else(|| model.train_len());
        decode_segmented(model, sources, l, params.beam, params.alpha)
    }
}

/// Sliding window; with `max_len` set, each piece is slid independently.
pub struct Sliding;

impl DecodeStrategy for Sliding {
    fn name(&self) -> &'static str {
        "sliding"
    }

    fn decode(&self, model: &dyn StepModel, sources: &[Vec<TokenId>], params: &DecodeParams) -> Result<Vec<Vec<TokenId>>> {
        let cfg = params.sliding();
        match params.max_len {
            None => decode_sliding(model, sources, &cfg, &mut ()),
            Some(l) => {
                let mut out = Vec::with_capacity(sources.len());
                for range in chunk_sentences(sources, l) {
                    out.extend(decode_sliding(model, &sources[range], &cfg, &mut ())?);
                }
                Ok(out)
            }
        }
    }
}

type StrategyFactory = fn() -> Box<dyn DecodeStrategy>;

/// Name -> decoding strategy.
pub struct StrategyRegistry {
    entries: BTreeMap<&'static str, StrategyFactory>,
}

impl Default for StrategyRegistry {
    fn default() -> Self {
        let mut r = Self { entries: BTreeMap::new() };
        r.register("standard", || Box::new(Standard));
        r.register("segmented", || Box::new(Segmented));
        r.register("sliding", || Box::new(Sliding));
        r
    }
}

impl StrategyRegistry {
    pub fn register(&mut self, name: &'static str, factory: StrategyFactory) {
        self.entries.insert(name, factory);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }

    pub fn get(&self, name: &str) -> Result<Box<dyn DecodeStrategy>> {
        self.entries.get(name).map(|f| f()).ok_or_else(|| Error::UnknownStrategy {
            kind: "decoding strategy",
            name: name.to_string(),
            known: self.names().join(", "),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodedDocument {
    pub doc_id: String,
    pub sentences: Vec<Vec<TokenId>>,
}

pub fn decode_corpus(
    model: &dyn StepModel,
    corpus: &[Document],
    strategy: &dyn DecodeStrategy,
    params: &DecodeParams,
) -> Result<Vec<DecodedDocument>> {
    corpus
        .iter()
        .map(|doc| {
            let sources: Vec<Vec<TokenId>> = doc.sentences.iter().map(|p| p.source.clone()).collect();
            Ok(DecodedDocument { doc_id: doc.id.clone(), sentences: strategy.decode(model, &sources, params)? })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub strategy: String,
    pub max_len: usize,
    pub d_bleu: f64,
    pub s_bleu: f64,
}

/// Decode `corpus` once per maximum decoding length and score it.
pub fn sweep_decode_lengths(
    model: &dyn StepModel,
    corpus: &[Document],
    lengths: &[usize],
    strategy: &dyn DecodeStrategy,
    params: &DecodeParams,
) -> Result<Vec<SweepRow>> {
    if lengths.is_empty() {
        return Err(config_err("length list is empty"));
    }
    let refs: Vec<Vec<Vec<TokenId>>> = corpus.iter().map(|d| d.sentences.iter().map(|p| p.target.clone()).collect()).collect();
    lengths
        .iter()
        .map(|&max_len| {
            let p = DecodeParams { max_len: Some(max_len), ..params.clone() };
            let hyps: Vec<Vec<Vec<TokenId>>> = decode_corpus(model, corpus, strategy, &p)?.into_iter().map(|d| d.sentences).collect();
            Ok(SweepRow {
                strategy: strategy.name().to_string(),
                max_len,
                d_bleu: metrics::d_bleu(&hyps, &refs)?,
                s_bleu: metrics::s_bleu(&hyps.concat(), &refs.concat())?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn copy_model(train_len: usize) -> CopyModel {
        CopyModel { vocab_size: 20, max_positions: 512, train_len }
    }

    fn sentences(lengths: &[usize]) -> Vec<Vec<TokenId>> {
        lengths
            .iter()
            .enumerate()
            .map(|(i, &n)| (0..n).map(|k| 4 + ((i * 3 + k) % 16) as TokenId).collect())
            .collect()
    }

    /// Scores fixed by position only: a two-step trap where the greedy
    /// first choice leads to a poor continuation.
    struct TrapModel;

    #[derive(Clone)]
    struct TrapState {
        prev: TokenId,
        pos: usize,
    }

    impl<'m> DecoderState<'m> for TrapState {
        fn advance(&mut self, token: TokenId) -> Result<Vec<f64>> {
            self.pos += 1;
            self.prev = token;
            let mut p = vec![1e-6; 8];
            match (self.pos, self.prev) {
                (1, _) => {
                    p[4] = 0.55;
                    p[5] = 0.45;
                }
                (2, 4) => {
                    p[6] = 0.3;
                    p[7] = 0.3;
                    p[EOS as usize] = 0.3;
                }
                (2, 5) => p[EOS as usize] = 0.99,
                _ => p[EOS as usize] = 0.99,
            }
            let z: f64 = p.iter().sum();
            Ok(p.iter().map(|x| (x / z).ln()).collect())
        }

        fn fork(&self) -> Box<dyn DecoderState<'m> + 'm> {
            Box::new(self.clone())
        }
    }

    impl StepModel for TrapModel {
        fn vocab_size(&self) -> usize {
            8
        }
        fn max_positions(&self) -> usize {
            64
        }
        fn train_len(&self) -> usize {
            64
        }
        fn start<'m>(&'m self, _source: &[TokenId]) -> Result<Box<dyn DecoderState<'m> + 'm>> {
            Ok(Box::new(TrapState { prev: 0, pos: 0 }))
        }
    }

    #[test]
    fn greedy_copy_reproduces_source_content() {
        let m = copy_model(64);
        let src = sentences(&[3, 4]);
        let out = decode_standard(&m, &encode_side(&src), 1, 1.0, 100).unwrap();
        assert_eq!(align_sentences(&out, 2), src);
    }

    #[test]
    fn wider_beam_finds_better_scores() {
        let best = |beam| beam_search(&TrapModel, &[BOS, EOS], &[], beam, 0.0, 5, &[EOS]).unwrap()[0].clone();
        let narrow = best(1);
        let wide = best(5);
        assert_eq!(narrow.tokens[0], 4);
        assert_eq!(wide.tokens, vec![5]);
        assert!(wide.score >= narrow.score);
    }

    #[test]
    fn zero_budget_yields_nothing() {
        assert!(decode_standard(&copy_model(64), &[BOS, 5, EOS], 5, 1.0, 0).unwrap().is_empty());
    }

    #[test]
    fn alignment_pads_and_merges() {
        assert_eq!(align_sentences(&[5, SEP, 6], 3), vec![vec![5], vec![6], vec![]]);
        assert_eq!(align_sentences(&[5, SEP, 6, SEP, 7], 2), vec![vec![5], vec![6, 7]]);
        assert_eq!(align_sentences(&[], 1), vec![Vec::<TokenId>::new()]);
    }

    #[test]
    fn segmented_matches_standard_when_one_chunk_suffices() {
        let m = copy_model(64);
        let src = sentences(&[3, 4, 2]);
        let a = decode_segmented(&m, &src, 64, 3, 1.0).unwrap();
        let b = decode_whole(&m, &src, 3, 1.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn segmented_chunks_never_split_sentences() {
        let src = sentences(&[5, 6, 7, 3, 9]);
        let chunks = chunk_sentences(&src, 16);
        assert_eq!(chunks.iter().map(|r| r.len()).sum::<usize>(), 5);
        for r in &chunks {
            assert!(r.len() == 1 || encoded_len(src[r.clone()].iter().map(Vec::len)) <= 16);
        }
        assert_eq!(decode_segmented(&copy_model(64), &src, 16, 2, 1.0).unwrap(), src);
    }

    #[test]
    fn oversized_sentence_is_truncated_in_segmented_mode() {
        let src = sentences(&[20]);
        let out = decode_segmented(&copy_model(64), &src, 10, 1, 1.0).unwrap();
        assert_eq!(out[0], src[0][..8].to_vec());
    }

    #[derive(Default)]
    struct Recorder {
        steps: Vec<SlideState>,
        evictions: Vec<usize>,
    }

    impl SlideObserver for Recorder {
        fn on_step(&mut self, s: &SlideState) {
            self.steps.push(s.clone());
        }
        fn on_evict(&mut self, i: usize) {
            self.evictions.push(i);
        }
    }

    #[test]
    fn three_sentence_window_translates_everything() {
        // Sentences of 8 tokens; budget floor(0.8 * 40) = 32 holds three
        // (8 * 3 + 2 separators + 2 = 28) but not four.
        let m = copy_model(40);
        let src = sentences(&[8, 8, 8, 8, 8]);
        let mut rec = Recorder::default();
        let out = decode_sliding(&m, &src, &SlidingConfig { beam: 2, ..SlidingConfig::default() }, &mut rec).unwrap();
        assert_eq!(out, src);
        assert_eq!(rec.evictions, vec![0, 1]);
        assert!(rec.steps.iter().all(|s| s.window_src.len() <= 3 && s.window_src_len <= 32));
        assert_eq!(rec.steps[4].committed.len(), 2);
        assert_eq!(rec.steps[4].window_src, vec![2, 3, 4]);
    }

    #[test]
    fn sliding_equals_standard_when_document_fits() {
        let m = copy_model(100);
        let src = sentences(&[4, 5, 6]);
        let a = decode_sliding(&m, &src, &SlidingConfig::default(), &mut ()).unwrap();
        assert_eq!(a, decode_whole(&m, &src, 5, 1.0).unwrap());
    }

    #[test]
    fn sentence_over_budget_is_rejected() {
        let m = copy_model(10);
        let err = decode_sliding(&m, &sentences(&[3, 12]), &SlidingConfig::default(), &mut ()).unwrap_err();
        assert!(err.to_string().contains("sentence 1"));
    }

    #[test]
    fn beam_carrying_policy_also_completes() {
        let m = copy_model(40);
        let src = sentences(&[8, 8, 8, 8, 8, 3]);
        let cfg = SlidingConfig { beam: 3, collapse: CollapsePolicy::OnEviction, ..SlidingConfig::default() };
        assert_eq!(decode_sliding(&m, &src, &cfg, &mut ()).unwrap(), src);
    }

    #[test]
    fn registry_knows_all_strategies() {
        let r = StrategyRegistry::default();
        assert_eq!(r.names(), vec!["segmented", "sliding", "standard"]);
        assert!(r.get("sliding").is_ok());
        assert!(matches!(r.get("greedy"), Err(Error::UnknownStrategy { .. })));
    }

    #[test]
    fn perfect_model_scores_full_marks_at_every_length() {
        let docs: Vec<Document> = (0..3)
            .map(|d| Document {
                id: format!("d{d}"),
                sentences: sentences(&[5, 7, 4, 6, 8, 3])
                    .into_iter()
                    .map(|s| crate::corpus::SentencePair { source: s.clone(), target: s })
                    .collect(),
            })
            .collect();
        let m = copy_model(40);
        for name in ["segmented", "sliding"] {
            let strat = StrategyRegistry::default().get(name).unwrap();
            let rows = sweep_decode_lengths(&m, &docs, &[16, 32, 64], strat.as_ref(), &DecodeParams { beam: 2, ..DecodeParams::default() }).unwrap();
            assert_eq!(rows.len(), 3);
            assert!(rows.iter().all(|r| (r.d_bleu - 100.0).abs() < 1e-9), "{rows:?}");
        }
    }
}
