use doclen::corpus::{encoded_len, generate_corpus, Document, GenConfig, SentencePair, Span};
use doclen::dls::*;
use doclen::seed;
use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

#[test]
fn sampled_lengths_match_the_distribution() {
    let schedule = LengthSchedule::new(3, 5.0, 5).unwrap();
    let mut rng = seed::rng(2024);
    let draws = sample_lengths(&schedule, &mut rng, 100_000);
    let mut counts = [0usize; 3];
    for d in draws {
        counts[d - 1] += 1;
    }
    let p = schedule.probs();
    let mut stat = 0.0;
    for l in 0..3 {
        let f = counts[l] as f64 / 100_000.0;
        assert!((f - p[l]).abs() < 0.01, "l = {}: {f} vs {}", l + 1, p[l]);
        let e = p[l] * 100_000.0;
        stat += (counts[l] as f64 - e).powi(2) / e;
    }
    assert!(1.0 - ChiSquared::new(2.0).unwrap().cdf(stat) > 0.001);
}

#[test]
fn raising_temperature_approaches_uniform() {
    for max_len in [2usize, 8, 64, 512] {
        let mut prev = f64::INFINITY;
        for k in -40..=40 {
            let t = (k as f64 / 4.0).exp();
            let dev = length_distribution(max_len, t)
                .iter()
                .map(|lp| (lp.exp() - 1.0 / max_len as f64).abs())
                .fold(0.0, f64::max);
            assert!(dev <= prev + 1e-15, "L = {max_len}, T = {t}");
            prev = dev;
        }
    }
}

#[test]
fn single_sentence_documents_give_mean_encoded_length() {
    let corpus: Vec<Document> = [3usize, 7, 1, 12]
        .iter()
        .enumerate()
        .map(|(i, &n)| Document {
            id: format!("d{i}"),
            sentences: vec![SentencePair { source: vec![9; n], target: vec![9; n + 1] }],
        })
        .collect();
    let data = build_epoch(&corpus, 20, 5.0, 16, 1).unwrap();
    let expected = [3usize, 7, 1, 12].iter().map(|&n| encoded_len([n + 1]) as f64).sum::<f64>() / 4.0;
    assert!((data.iota - expected).abs() < 1e-12);
}

#[test]
fn late_epochs_average_longer_segments() {
    let cfg = GenConfig { docs: 60, sentences_per_doc: Span::new(20, 40), ..GenConfig::default() };
    let corpus = generate_corpus(&cfg, 5).unwrap();
    let early = build_epoch(&corpus, 1, 5.0, 128, 8).unwrap();
    let late = build_epoch(&corpus, 12, 5.0, 128, 8).unwrap();
    assert!(late.iota > early.iota, "{} vs {}", late.iota, early.iota);
}

#[test]
fn fixed_seed_repeats_draws() {
    let schedule = LengthSchedule::new(40, 5.0, 6).unwrap();
    let a = sample_lengths(&schedule, &mut seed::rng(3), 500);
    let b = sample_lengths(&schedule, &mut seed::rng(3), 500);
    assert_eq!(a, b);
    assert!(a.iter().all(|&l| (1..=40).contains(&l)));
}

fn doc_from(lengths: &[(usize, usize)]) -> Document {
    Document {
        id: "p".into(),
        sentences: lengths
            .iter()
            .map(|&(s, t)| SentencePair { source: vec![10; s], target: vec![11; t] })
            .collect(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn segments_partition_documents(
        lengths in prop::collection::vec((1usize..30, 1usize..30), 1..25),
        budgets in prop::collection::vec(1usize..80, 25),
        raw in any::<bool>(),
    ) {
        let doc = doc_from(&lengths);
        let accounting = if raw { LengthAccounting::Raw } else { LengthAccounting::Encoded };
        let mut it = budgets.iter().copied().cycle();
        let segs = segment_document(&doc, 0, || it.next().unwrap(), accounting);
        let mut next = 0;
        for s in &segs {
            prop_assert_eq!(s.start, next);
            prop_assert!(s.start <= s.end);
            let src = accounting.measure(lengths[s.start..=s.end].iter().map(|l| l.0));
            let tgt = accounting.measure(lengths[s.start..=s.end].iter().map(|l| l.1));
            prop_assert_eq!((s.src_len, s.tgt_len), (src, tgt));
            if s.oversized {
                prop_assert_eq!(s.start, s.end);
                prop_assert!(src > s.budget || tgt > s.budget);
            } else {
                prop_assert!(src <= s.budget && tgt <= s.budget);
            }
            next = s.end + 1;
        }
        prop_assert_eq!(next, lengths.len());
    }

    #[test]
    fn distributions_are_normalized(max_len in 1usize..=4096, log_t in -10.0f64..10.0) {
        let lp = length_distribution(max_len, log_t.exp());
        prop_assert_eq!(lp.len(), max_len);
        prop_assert!(lp.iter().all(|x| x.is_finite()));
        prop_assert!((lp.iter().map(|x| x.exp()).sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(lp.windows(2).all(|w| w[1] < w[0]));
    }
}
