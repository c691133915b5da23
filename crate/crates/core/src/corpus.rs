//! Synthetic document-translation corpora.
//!
//! The synthetic "language" is a token-wise substitution cipher with one
//! context-dependent word: an ambiguous source token whose translation is
//! chosen by the class of the most recent cue token seen earlier in the
//! document. Cues may sit several sentences before the ambiguous token, so
//! translating it correctly requires document context.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::seed;

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const SEP: TokenId = 3;
pub const NUM_RESERVED: TokenId = 4;

/// Number of disambiguation classes.
pub const NUM_CLASSES: usize = 3;
/// Class used for an ambiguous token with no preceding cue.
pub const DEFAULT_CLASS: usize = 2;

const AMBIGUOUS: TokenId = NUM_RESERVED;
const FIRST_VARIANT: TokenId = NUM_RESERVED + 1;
const FIRST_FREE: TokenId = FIRST_VARIANT + NUM_CLASSES as TokenId;

/// Smallest vocabulary that still leaves plain words after reserving cues.
pub const MIN_VOCAB: usize = FIRST_FREE as usize + NUM_CLASSES + 2;

pub fn is_reserved(id: TokenId) -> bool {
    id < NUM_RESERVED
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    symbols: Vec<String>,
}

impl Vocab {
    pub fn from_symbols(symbols: Vec<String>) -> Result<Self> {
        if symbols.len() < NUM_RESERVED as usize {
            return Err(config_err("vocabulary lacks the reserved symbols"));
        }
        Ok(Self { symbols })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbol(&self, id: TokenId) -> Option<&str> {
        self.symbols.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, symbol: &str) -> Option<TokenId> {
        self.symbols
            .iter()
            .position(|s| s == symbol)
            .map(|i| i as TokenId)
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for s in &self.symbols {
            writeln!(w, "{s}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let symbols = reader.lines().collect::<std::io::Result<Vec<_>>>()?;
        Self::from_symbols(symbols)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentencePair {
    #[serde(rename = "src")]
    pub source: Vec<TokenId>,
    #[serde(rename = "tgt")]
    pub target: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub sentences: Vec<SentencePair>,
}

impl Document {
    pub fn sentence_count(&self) -> usize {
        self.sentences.len()
    }

    pub fn sources(&self) -> Vec<&[TokenId]> {
        self.sentences.iter().map(|p| p.source.as_slice()).collect()
    }

    pub fn targets(&self) -> Vec<&[TokenId]> {
        self.sentences.iter().map(|p| p.target.as_slice()).collect()
    }

    /// Encoded (source, target) length of the whole document.
    pub fn encoded_lengths(&self) -> (usize, usize) {
        encoded_pair_lengths(&self.sentences)
    }
}

/// Inclusive integer range used by the generators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub min: usize,
    pub max: usize,
}

impl Span {
    pub const fn new(min: usize, max: usize) -> Self {
        Self { min, max }
    }

    fn validate(&self, what: &str) -> Result<()> {
        if self.min > self.max {
            return Err(config_err(format!(
                "{what}: min {} exceeds max {}",
                self.min, self.max
            )));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut impl Rng) -> usize {
        rng.random_range(self.min..=self.max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub vocab_size: usize,
    pub docs: usize,
    pub sentence_len: Span,
    pub sentences_per_doc: Span,
    /// Per-token probability of a cue word.
    pub cue_rate: f64,
    /// Per-token probability of the ambiguous word.
    pub ambiguous_rate: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            vocab_size: 64,
            docs: 200,
            sentence_len: Span::new(4, 12),
            sentences_per_doc: Span::new(8, 40),
            cue_rate: 0.03,
            ambiguous_rate: 0.06,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        self.sentence_len.validate("sentence length")?;
        self.sentences_per_doc.validate("sentences per document")?;
        if self.sentence_len.min == 0 {
            return Err(config_err("sentences must contain at least one token"));
        }
        if self.sentences_per_doc.min == 0 {
            return Err(config_err("documents must contain at least one sentence"));
        }
        if self.vocab_size < MIN_VOCAB {
            return Err(config_err(format!(
                "vocab size {} is below the minimum {MIN_VOCAB}",
                self.vocab_size
            )));
        }
        if self.vocab_size > TokenId::MAX as usize {
            return Err(config_err("vocab size exceeds the token id range"));
        }
        let rates = [self.cue_rate, self.ambiguous_rate];
        if rates.iter().any(|r| !(0.0..=1.0).contains(r)) || rates.iter().sum::<f64>() > 1.0 {
            return Err(config_err("cue and ambiguous rates must be probabilities summing to <= 1"));
        }
        Ok(())
    }
}

/// The substitution cipher shared by a corpus and its contrastive suite.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Language {
    vocab_size: usize,
    cues_per_class: usize,
    /// Source content id -> target id, for plain words and cues.
    cipher: HashMap<TokenId, TokenId>,
    plain: Vec<TokenId>,
}

impl Language {
    pub fn new(vocab_size: usize, language_seed: u64) -> Result<Self> {
        if vocab_size < MIN_VOCAB {
            return Err(config_err(format!(
                "vocab size {vocab_size} is below the minimum {MIN_VOCAB}"
            )));
        }
        let free = vocab_size - FIRST_FREE as usize;
        let cues_per_class = (free / 8).max(1);
        let words: Vec<TokenId> = (FIRST_FREE..vocab_size as TokenId).collect();
        let plain = words[NUM_CLASSES * cues_per_class..].to_vec();

        let mut image = words.clone();
        image.shuffle(&mut seed::derived_rng(language_seed, "cipher", 0));
        let cipher = words.into_iter().zip(image).collect();
        Ok(Self {
            vocab_size,
            cues_per_class,
            cipher,
            plain,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn ambiguous_token(&self) -> TokenId {
        AMBIGUOUS
    }

    pub fn variant(&self, class: usize) -> TokenId {
        FIRST_VARIANT + class as TokenId
    }

    pub fn cue(&self, class: usize, i: usize) -> TokenId {
        FIRST_FREE + (class * self.cues_per_class + i % self.cues_per_class) as TokenId
    }

    pub fn cue_class(&self, id: TokenId) -> Option<usize> {
        let end = FIRST_FREE + (NUM_CLASSES * self.cues_per_class) as TokenId;
        (FIRST_FREE..end)
            .contains(&id)
            .then(|| (id - FIRST_FREE) as usize / self.cues_per_class)
    }

    pub fn plain_words(&self) -> &[TokenId] {
        &self.plain
    }

    pub fn random_cue(&self, rng: &mut impl Rng) -> TokenId {
        let class = rng.random_range(0..NUM_CLASSES);
        self.cue(class, rng.random_range(0..self.cues_per_class))
    }

    pub fn random_plain(&self, rng: &mut impl Rng) -> TokenId {
        self.plain[rng.random_range(0..self.plain.len())]
    }

    /// Translate source sentences left to right, threading the active cue
    /// class across sentence boundaries.
    pub fn translate(&self, sources: &[Vec<TokenId>]) -> Vec<Vec<TokenId>> {
        let mut class = DEFAULT_CLASS;
        sources
            .iter()
            .map(|sent| {
                sent.iter()
                    .map(|&tok| {
                        if let Some(c) = self.cue_class(tok) {
                            class = c;
                        }
                        if tok == AMBIGUOUS {
                            self.variant(class)
                        } else {
                            self.cipher[&tok]
                        }
                    })
                    .collect()
            })
            .collect()
    }

    pub fn vocab(&self) -> Vocab {
        let mut symbols: Vec<String> = ["<pad>", "<s>", "</s>", "<sep>", "it", "er", "sie", "es"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for id in FIRST_FREE..self.vocab_size as TokenId {
            match self.cue_class(id) {
                Some(c) => symbols.push(format!("c{c}_{}", (id - FIRST_FREE) as usize % self.cues_per_class)),
                None => symbols.push(format!("w{}", id - FIRST_FREE)),
            }
        }
        Vocab { symbols }
    }
}

/// Generate a corpus. The cipher is keyed by `seed` itself so that a
/// contrastive suite built with the same seed shares the language.
pub fn generate_corpus(config: &GenConfig, seed: u64) -> Result<Vec<Document>> {
    config.validate()?;
    let language = Language::new(config.vocab_size, seed)?;
    generate_documents(&language, config, seed::derive(seed, "documents", 0), 0)
}

/// Documents in an existing language; ids count up from `first_id`.
/// `config.vocab_size` must match the language.
pub fn generate_documents(language: &Language, config: &GenConfig, seed: u64, first_id: usize) -> Result<Vec<Document>> {
    config.validate()?;
    if config.vocab_size != language.vocab_size() {
        return Err(config_err(format!(
            "config vocab {} does not match language vocab {}",
            config.vocab_size,
            language.vocab_size()
        )));
    }
    let mut rng = seed::rng(seed);
    let docs = (0..config.docs)
        .map(|i| {
            let n = config.sentences_per_doc.sample(&mut rng);
            let sources: Vec<Vec<TokenId>> = (0..n)
                .map(|_| {
                    let len = config.sentence_len.sample(&mut rng);
                    (0..len)
                        .map(|_| {
                            let u: f64 = rng.random();
                            if u < config.cue_rate {
                                language.random_cue(&mut rng)
                            } else if u < config.cue_rate + config.ambiguous_rate {
                                language.ambiguous_token()
                            } else {
                                language.random_plain(&mut rng)
                            }
                        })
                        .collect()
                })
                .collect();
            let targets = language.translate(&sources);
            Document {
                id: format!("doc{:05}", first_id + i),
                sentences: sources
                    .into_iter()
                    .zip(targets)
                    .map(|(source, target)| SentencePair { source, target })
                    .collect(),
            }
        })
        .collect();
    Ok(docs)
}

/// Encoded length of a sentence list: content, separators, BOS and EOS.
pub fn encoded_len<I: IntoIterator<Item = usize>>(sentence_lengths: I) -> usize {
    let (sum, count) = sentence_lengths
        .into_iter()
        .fold((0, 0), |(s, c), l| (s + l, c + 1));
    if count == 0 {
        2
    } else {
        sum + count - 1 + 2
    }
}

pub fn encoded_pair_lengths(sentences: &[SentencePair]) -> (usize, usize) {
    (
        encoded_len(sentences.iter().map(|p| p.source.len())),
        encoded_len(sentences.iter().map(|p| p.target.len())),
    )
}

/// `BOS s1 SEP s2 SEP ... sn EOS`.
pub fn encode_side<S: AsRef<[TokenId]>>(sentences: &[S]) -> Vec<TokenId> {
    let mut out = Vec::with_capacity(encoded_len(sentences.iter().map(|s| s.as_ref().len())));
    out.push(BOS);
    for (i, s) in sentences.iter().enumerate() {
        if i > 0 {
            out.push(SEP);
        }
        out.extend_from_slice(s.as_ref());
    }
    out.push(EOS);
    out
}

pub fn encode_segment(sentences: &[SentencePair]) -> (Vec<TokenId>, Vec<TokenId>) {
    let src: Vec<&[TokenId]> = sentences.iter().map(|p| p.source.as_slice()).collect();
    let tgt: Vec<&[TokenId]> = sentences.iter().map(|p| p.target.as_slice()).collect();
    (encode_side(&src), encode_side(&tgt))
}

/// Split an encoded sequence back into sentences. Leading BOS and a
/// trailing EOS are stripped; anything after the first EOS is ignored.
pub fn decode_side(ids: &[TokenId]) -> Vec<Vec<TokenId>> {
    let body = ids.strip_prefix(&[BOS]).unwrap_or(ids);
    let body = match body.iter().position(|&t| t == EOS) {
        Some(end) => &body[..end],
        None => body,
    };
    body.split(|&t| t == SEP).map(|s| s.to_vec()).collect()
}

pub fn decode_segment(source: &[TokenId], target: &[TokenId]) -> Vec<SentencePair> {
    decode_side(source)
        .into_iter()
        .zip(decode_side(target))
        .map(|(source, target)| SentencePair { source, target })
        .collect()
}

pub fn save_corpus(corpus: &[Document], path: impl AsRef<Path>) -> Result<()> {
    save_records(corpus, path)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    load_records(path)
}

pub(crate) fn save_records<T: Serialize>(records: &[T], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn load_records<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContrastiveItem {
    pub document: Document,
    /// Index of the sentence holding the ambiguous token.
    pub ambiguous_sentence: usize,
    /// Position of the ambiguous token inside that sentence.
    pub ambiguous_position: usize,
    /// Target variants of the ambiguous sentence, one per class.
    pub candidates: Vec<Vec<TokenId>>,
    pub correct_index: usize,
    pub antecedent_distance: usize,
}

impl ContrastiveItem {
    /// Full target document with candidate `k` substituted in.
    pub fn candidate_targets(&self, k: usize) -> Vec<Vec<TokenId>> {
        let mut t: Vec<Vec<TokenId>> = self
            .document
            .sentences
            .iter()
            .map(|p| p.target.clone())
            .collect();
        t[self.ambiguous_sentence] = self.candidates[k].clone();
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveConfig {
    pub vocab_size: usize,
    pub items: usize,
    pub sentence_len: Span,
    pub sentences_per_doc: Span,
    /// Sentences between the cue and the ambiguous token.
    pub distance: Span,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            vocab_size: 64,
            items: 300,
            sentence_len: Span::new(4, 10),
            sentences_per_doc: Span::new(4, 6),
            distance: Span::new(0, 3),
        }
    }
}

/// Build the contrastive suite. `language_seed` must match the seed the
/// training corpus was generated with; `seed` drives the items themselves.
pub fn generate_contrastive_suite(
    config: &ContrastiveConfig,
    language_seed: u64,
    seed: u64,
) -> Result<Vec<ContrastiveItem>> {
    config.sentence_len.validate("sentence length")?;
    config.sentences_per_doc.validate("sentences per document")?;
    config.distance.validate("antecedent distance")?;
    if config.sentence_len.min < 2 {
        return Err(config_err("contrastive sentences need at least 2 tokens"));
    }
    if config.distance.max + 1 > config.sentences_per_doc.min {
        return Err(config_err(format!(
            "antecedent distance up to {} needs at least {} sentences per document, got {}",
            config.distance.max,
            config.distance.max + 1,
            config.sentences_per_doc.min
        )));
    }
    let language = Language::new(config.vocab_size, language_seed)?;
    let mut rng = seed::derived_rng(seed, "contrastive", 0);

    // Balanced classes, shuffled.
    let mut classes: Vec<usize> = (0..config.items).map(|i| i % NUM_CLASSES).collect();
    classes.shuffle(&mut rng);

    let items = classes
        .into_iter()
        .enumerate()
        .map(|(i, class)| {
            let m = config.sentences_per_doc.sample(&mut rng);
            let distance = config.distance.sample(&mut rng);
            let mut sources: Vec<Vec<TokenId>> = (0..m)
                .map(|_| {
                    let len = config.sentence_len.sample(&mut rng);
                    (0..len).map(|_| language.random_plain(&mut rng)).collect()
                })
                .collect();
            let amb_sent = rng.random_range(distance..m);
            let cue_sent = amb_sent - distance;
            let (cue_pos, amb_pos) = if distance == 0 {
                let len = sources[amb_sent].len();
                let amb = rng.random_range(1..len);
                (rng.random_range(0..amb), amb)
            } else {
                (
                    rng.random_range(0..sources[cue_sent].len()),
                    rng.random_range(0..sources[amb_sent].len()),
                )
            };
            sources[cue_sent][cue_pos] = language.cue(class, rng.random_range(0..usize::MAX));
            sources[amb_sent][amb_pos] = language.ambiguous_token();

            let targets = language.translate(&sources);
            let candidates = (0..NUM_CLASSES)
                .map(|c| {
                    let mut t = targets[amb_sent].clone();
                    t[amb_pos] = language.variant(c);
                    t
                })
                .collect();
            ContrastiveItem {
                document: Document {
                    id: format!("contra{i:05}"),
                    sentences: sources
                        .into_iter()
                        .zip(targets)
                        .map(|(source, target)| SentencePair { source, target })
                        .collect(),
                },
                ambiguous_sentence: amb_sent,
                ambiguous_position: amb_pos,
                candidates,
                correct_index: class,
                antecedent_distance: distance,
            }
        })
        .collect();
    Ok(items)
}

pub fn save_contrastive(items: &[ContrastiveItem], path: impl AsRef<Path>) -> Result<()> {
    save_records(items, path)
}

pub fn load_contrastive(path: impl AsRef<Path>) -> Result<Vec<ContrastiveItem>> {
    load_records(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tiny() -> GenConfig {
        GenConfig {
            vocab_size: 64,
            docs: 1,
            sentence_len: Span::new(3, 3),
            sentences_per_doc: Span::new(2, 2),
            ..GenConfig::default()
        }
    }

    #[test]
    fn degenerate_ranges_force_shape() {
        let c = generate_corpus(&tiny(), 7).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].sentences.len(), 2);
        assert!(c[0].sentences.iter().all(|p| p.source.len() == 3 && p.target.len() == 3));
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = GenConfig { docs: 20, ..GenConfig::default() };
        let a = serde_json::to_string(&generate_corpus(&cfg, 11).unwrap()).unwrap();
        let b = serde_json::to_string(&generate_corpus(&cfg, 11).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn inverted_range_is_a_config_error() {
        let cfg = GenConfig { sentence_len: Span::new(9, 3), ..GenConfig::default() };
        assert!(matches!(generate_corpus(&cfg, 1), Err(Error::Config(_))));
    }

    #[test]
    fn content_never_uses_reserved_ids() {
        let cfg = GenConfig { docs: 30, ..GenConfig::default() };
        for d in generate_corpus(&cfg, 3).unwrap() {
            for p in &d.sentences {
                assert!(!p.source.is_empty() && p.source.len() == p.target.len());
                assert!(p.source.iter().chain(&p.target).all(|&t| !is_reserved(t) && (t as usize) < 64));
            }
        }
    }

    #[test]
    fn ambiguous_token_follows_latest_cue_across_sentences() {
        let lang = Language::new(64, 5).unwrap();
        let amb = lang.ambiguous_token();
        let w = lang.plain_words()[0];
        let src = vec![vec![w, lang.cue(1, 0)], vec![w, w], vec![amb, lang.cue(0, 0), amb]];
        let tgt = lang.translate(&src);
        assert_eq!(tgt[2][0], lang.variant(1));
        assert_eq!(tgt[2][2], lang.variant(0));
        // No cue yet: default class.
        assert_eq!(lang.translate(&[vec![amb]])[0][0], lang.variant(DEFAULT_CLASS));
    }

    #[test]
    fn vocab_ids_are_dense_with_reserved_first() {
        let v = Language::new(40, 1).unwrap().vocab();
        assert_eq!(v.len(), 40);
        assert_eq!(v.symbol(PAD), Some("<pad>"));
        assert_eq!(v.symbol(SEP), Some("<sep>"));
        assert_eq!(v.id("<s>"), Some(BOS));
        let uniq: std::collections::HashSet<_> = v.symbols().iter().collect();
        assert_eq!(uniq.len(), v.len());
    }

    #[test]
    fn vocab_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let v = Language::new(32, 2).unwrap().vocab();
        v.save(&path).unwrap();
        assert_eq!(Vocab::load(&path).unwrap(), v);
    }

    #[test]
    fn encoded_lengths() {
        let p = |n: usize| SentencePair { source: vec![9; n], target: vec![9; n] };
        assert_eq!(encode_segment(&[p(3)]).0.len(), 5);
        assert_eq!(encode_segment(&[p(3), p(4)]).0.len(), 10);
        assert_eq!(encoded_len([3, 4]), 10);
    }

    #[test]
    fn corpus_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        save_corpus(&[], &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap().len(), 0);
        assert!(load_corpus(&path).unwrap().is_empty());

        let one = generate_corpus(&tiny(), 9).unwrap();
        save_corpus(&one, &path).unwrap();
        assert_eq!(load_corpus(&path).unwrap(), one);

        let wide = vec![Document {
            id: "max".into(),
            sentences: vec![SentencePair {
                source: vec![TokenId::MAX, 0, TokenId::MAX - 1],
                target: vec![TokenId::MAX],
            }],
        }];
        save_corpus(&wide, &path).unwrap();
        assert_eq!(load_corpus(&path).unwrap(), wide);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{\"id\":\"a\",\"sentences\":[]}\n{not json}\n").unwrap();
        match load_corpus(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn contrastive_suite_shape() {
        let cfg = ContrastiveConfig { items: 60, ..ContrastiveConfig::default() };
        let suite = generate_contrastive_suite(&cfg, 4, 5).unwrap();
        let lang = Language::new(cfg.vocab_size, 4).unwrap();
        for item in &suite {
            assert_eq!(item.candidates.len(), NUM_CLASSES);
            let len = item.candidates[0].len();
            assert!(item.candidates.iter().all(|c| c.len() == len));
            let correct = &item.document.sentences[item.ambiguous_sentence].target;
            assert_eq!(&item.candidates[item.correct_index], correct);
            for (k, c) in item.candidates.iter().enumerate() {
                let diff: Vec<_> = (0..len).filter(|&i| c[i] != correct[i]).collect();
                if k == item.correct_index {
                    assert!(diff.is_empty());
                } else {
                    assert_eq!(diff, vec![item.ambiguous_position]);
                }
            }
            let src = &item.document.sentences;
            let cue_sent = item.ambiguous_sentence - item.antecedent_distance;
            assert!(src[cue_sent].source.iter().any(|&t| lang.cue_class(t) == Some(item.correct_index)));
        }
    }

    #[test]
    fn zero_distance_puts_cue_in_the_same_sentence() {
        let cfg = ContrastiveConfig { items: 30, distance: Span::new(0, 0), ..ContrastiveConfig::default() };
        let lang = Language::new(cfg.vocab_size, 1).unwrap();
        for item in generate_contrastive_suite(&cfg, 1, 2).unwrap() {
            let s = &item.document.sentences[item.ambiguous_sentence].source;
            let cue_at = s.iter().position(|&t| lang.cue_class(t).is_some()).unwrap();
            assert!(cue_at < item.ambiguous_position);
        }
    }

    #[test]
    fn infeasible_distance_is_rejected() {
        let cfg = ContrastiveConfig { distance: Span::new(0, 6), ..ContrastiveConfig::default() };
        assert!(matches!(generate_contrastive_suite(&cfg, 1, 1), Err(Error::Config(_))));
    }

    fn sentence_lists() -> impl Strategy<Value = Vec<SentencePair>> {
        prop::collection::vec(
            (1usize..12).prop_flat_map(|n| {
                (
                    prop::collection::vec(NUM_RESERVED..1000u32, n),
                    prop::collection::vec(NUM_RESERVED..1000u32, 1..12),
                )
            }),
            1..8,
        )
        .prop_map(|v| {
            v.into_iter()
                .map(|(source, target)| SentencePair { source, target })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(sents in sentence_lists()) {
            let (src, tgt) = encode_segment(&sents);
            prop_assert_eq!(decode_segment(&src, &tgt), sents.clone());
            for seq in [&src, &tgt] {
                prop_assert_eq!(seq.iter().filter(|&&t| t == SEP).count(), sents.len() - 1);
                prop_assert_eq!(seq.iter().filter(|&&t| t == BOS).count(), 1);
                prop_assert_eq!(seq.iter().filter(|&&t| t == EOS).count(), 1);
            }
            prop_assert_eq!(src.len(), encoded_len(sents.iter().map(|p| p.source.len())));
        }
    }
}
