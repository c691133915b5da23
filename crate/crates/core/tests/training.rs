use std::collections::BTreeMap;

use doclen::corpus::{generate_corpus, GenConfig, Span};
use doclen::dls::build_epoch;
use doclen::model::ModelConfig;
use doclen::seed;
use doclen::train::{train, train_with_observer, TrainConfig};

fn small_model(vocab: usize) -> ModelConfig {
    ModelConfig { layers: 1, heads: 2, d_model: 16, d_ff: 32, max_positions: 128, vocab_size: vocab, ..ModelConfig::default() }
}

#[test]
fn loss_falls_over_the_first_epochs() {
    let corpus = generate_corpus(&GenConfig { vocab_size: 32, docs: 50, sentences_per_doc: Span::new(2, 8), ..GenConfig::default() }, 3).unwrap();
    let tc = TrainConfig { epochs: 5, max_len: 64, lr: 3e-3, batch_tokens: 256, seed: 4, ..TrainConfig::default() };
    let ckpt = train(&corpus, &small_model(32), &tc).unwrap();
    let log = &ckpt.training_log;
    assert!(log[4].loss < log[0].loss, "{log:?}");
}

#[test]
fn iota_grows_with_the_schedule() {
    let corpus = generate_corpus(&GenConfig { vocab_size: 32, docs: 20, sentences_per_doc: Span::new(20, 40), ..GenConfig::default() }, 8).unwrap();
    let tc = TrainConfig { epochs: 6, gamma: 2.0, max_len: 96, batch_tokens: 2048, seed: 2, ..TrainConfig::default() };
    let ckpt = train(&corpus, &ModelConfig { layers: 1, heads: 1, d_model: 4, d_ff: 4, vocab_size: 32, ..ModelConfig::default() }, &tc).unwrap();
    let iotas: Vec<f64> = ckpt.training_log.iter().map(|e| e.iota).collect();
    assert!(iotas.windows(2).all(|w| w[1] >= w[0]), "{iotas:?}");
    assert_eq!(ckpt.iota, *iotas.last().unwrap());
}

#[test]
fn training_segments_match_an_independent_epoch_build() {
    let corpus = generate_corpus(&GenConfig { vocab_size: 32, docs: 12, ..GenConfig::default() }, 6).unwrap();
    let tc = TrainConfig { epochs: 3, max_len: 64, seed: 10, ..TrainConfig::default() };
    let mut seen = Vec::new();
    train_with_observer(&corpus, &small_model(32), &tc, |data| seen.push(data.clone())).unwrap();
    for data in &seen {
        let direct = build_epoch(&corpus, data.epoch, tc.gamma, tc.max_len, seed::derive(tc.seed, "epoch", data.epoch as u64)).unwrap();
        let multiset = |d: &doclen::dls::EpochData| {
            let mut m = BTreeMap::new();
            for s in &d.segments {
                *m.entry((s.src_len, s.tgt_len)).or_insert(0) += 1;
            }
            m
        };
        assert_eq!(multiset(data), multiset(&direct));
        assert_eq!(data.iota, direct.iota);
    }
}

#[test]
fn training_twice_gives_identical_parameters() {
    let corpus = generate_corpus(&GenConfig { vocab_size: 32, docs: 10, ..GenConfig::default() }, 1).unwrap();
    let tc = TrainConfig { epochs: 2, max_len: 64, seed: 5, ..TrainConfig::default() };
    let a = train(&corpus, &small_model(32), &tc).unwrap();
    let b = train(&corpus, &small_model(32), &tc).unwrap();
    assert_eq!(a.to_bytes(), b.to_bytes());
}
