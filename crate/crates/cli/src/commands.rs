use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{anyhow, Context, Result};
use doclen::attention::{entropy_gap_study, gaussian_dot_sampler, ScaleMode};
use doclen::checkpoint::ModelCheckpoint;
use doclen::corpus::{
    generate_contrastive_suite, generate_documents, load_contrastive, load_corpus, save_contrastive, save_corpus, Document,
    Language, TokenId, Vocab,
};
use doclen::decoding::{decode_corpus, sweep_decode_lengths, DecodedDocument, StrategyRegistry, SweepRow};
use doclen::dls::{length_histogram, PolicyRegistry};
use doclen::metrics::{contrastive_accuracy, d_bleu, s_bleu, ContextMode, EvaluationReport};
use doclen::seed;
use doclen::train::train;

use crate::config::RunConfig;

fn prepare_out(cfg: &RunConfig, command: &str) -> Result<()> {
    fs::create_dir_all(&cfg.paths.out).with_context(|| format!("creating {}", cfg.paths.out.display()))?;
    let path = cfg.paths.out.join(format!("{command}.config.toml"));
    fs::write(&path, cfg.to_toml()?).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn language_seed(cfg: &RunConfig) -> u64 {
    seed::derive(cfg.seed, "language", 0)
}

pub fn gen_data(cfg: &RunConfig) -> Result<()> {
    prepare_out(cfg, "gen-data")?;
    let d = &cfg.data;
    let train_docs = d.train_docs()?;
    let language = Language::new(d.vocab_size, language_seed(cfg))?;
    let head = generate_documents(
        &language,
        &d.gen_config(train_docs + d.valid_docs, d.sentences_per_doc),
        seed::derive(cfg.seed, "documents", 0),
        0,
    )?;
    let test = generate_documents(
        &language,
        &d.gen_config(d.test_docs, d.test_sentences_per_doc),
        seed::derive(cfg.seed, "test-documents", 0),
        head.len(),
    )?;
    let suite = generate_contrastive_suite(&d.contrastive_config(), language_seed(cfg), seed::derive(cfg.seed, "contrastive", 0))?;

    let out = &cfg.paths.out;
    save_corpus(&head[..train_docs], out.join("train.jsonl"))?;
    save_corpus(&head[train_docs..], out.join("valid.jsonl"))?;
    save_corpus(&test, out.join("test.jsonl"))?;
    save_contrastive(&suite, out.join("contrastive.jsonl"))?;
    language.vocab().save(out.join("vocab.txt"))?;
    log::info!(
        "wrote {train_docs} train, {} valid, {} test documents and {} contrastive items to {}",
        d.valid_docs,
        test.len(),
        suite.len(),
        out.display()
    );
    Ok(())
}

fn load_train_corpus(cfg: &RunConfig) -> Result<(Vec<Document>, usize)> {
    let corpus = load_corpus(cfg.paths.train_corpus())?;
    let vocab_path = cfg.paths.data_dir.join("vocab.txt");
    let vocab_size = if vocab_path.exists() { Vocab::load(&vocab_path)?.len() } else { cfg.data.vocab_size };
    Ok((corpus, vocab_size))
}

pub fn train_cmd(cfg: &RunConfig) -> Result<()> {
    let (corpus, vocab_size) = load_train_corpus(cfg)?;
    let mut cfg = cfg.clone();
    cfg.data.vocab_size = vocab_size;
    prepare_out(&cfg, "train")?;
    let model_config = cfg.model.model_config(vocab_size);
    let train_config = cfg.train.train_config(seed::derive(cfg.seed, "train", 0));
    let ckpt = train(&corpus, &model_config, &train_config)?;
    ckpt.save(cfg.paths.checkpoint())?;

    let mut w = csv_writer(&cfg.paths.out.join("train_log.csv"), "epoch,loss,T,iota")?;
    for e in &ckpt.training_log {
        let t = e.temperature.map(|t| t.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{},{}", e.epoch, e.loss, t, e.iota)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_writer(path: &Path, header: &str) -> Result<BufWriter<fs::File>> {
    let mut w = BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
    writeln!(w, "{header}")?;
    Ok(w)
}

fn load_checkpoint(cfg: &RunConfig) -> Result<ModelCheckpoint> {
    let path = cfg.paths.checkpoint();
    ModelCheckpoint::load(&path).with_context(|| format!("loading checkpoint {}", path.display()))
}

pub fn decode_cmd(cfg: &RunConfig) -> Result<()> {
    prepare_out(cfg, "decode")?;
    let ckpt = load_checkpoint(cfg)?;
    let corpus = load_corpus(cfg.paths.decode_input())?;
    let strategy = StrategyRegistry::default().get(&cfg.decode.strategy)?;
    let decoded = decode_corpus(&ckpt, &corpus, strategy.as_ref(), &cfg.decode.params())?;
    let path = cfg.paths.hypotheses();
    let mut w = BufWriter::new(fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?);
    for doc in &decoded {
        writeln!(w, "{}", serde_json::to_string(doc)?)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_decoded(path: &Path) -> Result<Vec<DecodedDocument>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    Ok(out)
}

/// Pair hypotheses with references by document id.
pub fn aligned_documents(
    hyps: &[DecodedDocument],
    refs: &[Document],
) -> Result<(Vec<Vec<Vec<TokenId>>>, Vec<Vec<Vec<TokenId>>>)> {
    let by_id: HashMap<&str, &DecodedDocument> = hyps.iter().map(|d| (d.doc_id.as_str(), d)).collect();
    let mut h = Vec::with_capacity(refs.len());
    let mut r = Vec::with_capacity(refs.len());
    for doc in refs {
        let hyp = by_id.get(doc.id.as_str()).ok_or_else(|| anyhow!("no hypothesis for document {}", doc.id))?;
        h.push(hyp.sentences.clone());
        r.push(doc.sentences.iter().map(|p| p.target.clone()).collect());
    }
    Ok((h, r))
}

pub fn evaluate_cmd(cfg: &RunConfig) -> Result<()> {
    prepare_out(cfg, "evaluate")?;
    let refs = load_corpus(cfg.paths.decode_input())?;
    let hyps = load_decoded(&cfg.paths.hypotheses())?;
    let (h, r) = aligned_documents(&hyps, &refs)?;
    let mut report = EvaluationReport {
        s_bleu: s_bleu(&h.concat(), &r.concat())?,
        d_bleu: d_bleu(&h, &r)?,
        contrastive_acc: None,
        contrastive_acc_blind: None,
    };
    let suite_path = cfg.paths.suite();
    if suite_path.exists() && cfg.paths.checkpoint().exists() {
        let ckpt = load_checkpoint(cfg)?;
        let suite = load_contrastive(&suite_path)?;
        report.contrastive_acc = Some(contrastive_accuracy(&ckpt, &suite, ContextMode::Document)?);
        report.contrastive_acc_blind = Some(contrastive_accuracy(&ckpt, &suite, ContextMode::Blind)?);
    }
    let out = &cfg.paths.out;
    fs::write(out.join("eval.json"), serde_json::to_string(&report)? + "\n")?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_else(|| "n/a".into());
    let text = format!(
        "s_bleu={}\nd_bleu={}\ncontrastive_acc={}\ncontrastive_acc_blind={}\n",
        report.s_bleu,
        report.d_bleu,
        opt(report.contrastive_acc),
        opt(report.contrastive_acc_blind)
    );
    fs::write(out.join("eval.txt"), &text)?;
    print!("{text}");
    Ok(())
}

pub fn analyze_entropy(cfg: &RunConfig) -> Result<()> {
    prepare_out(cfg, "analyze-entropy")?;
    let a = &cfg.analyze;
    let mut sampler = gaussian_dot_sampler(a.entropy_d_k, seed::derive(cfg.seed, "entropy", 0));
    let study = entropy_gap_study(&mut sampler, &a.entropy_lengths, a.entropy_iota, a.entropy_draws)?;
    let mut w = csv_writer(&cfg.paths.out.join("entropy.csv"), "scale_mode,length,mean_entropy,std_entropy,delta")?;
    for mode in [ScaleMode::Baseline, ScaleMode::Laa] {
        let delta = study.delta(mode);
        for row in study.rows_for(mode) {
            writeln!(w, "{},{},{},{},{}", mode.as_str(), row.length, row.mean_entropy, row.std_entropy, delta)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn analyze_lengths(cfg: &RunConfig) -> Result<()> {
    prepare_out(cfg, "analyze-lengths")?;
    let (corpus, _) = load_train_corpus(cfg)?;
    let t = &cfg.train;
    let tc = t.train_config(seed::derive(cfg.seed, "train", 0));
    let policy = PolicyRegistry::default().create(&tc.policy, t.gamma, t.max_len)?;
    let mut w = csv_writer(&cfg.paths.out.join("lengths.csv"), "epoch,length_bin,count")?;
    for ep in 1..=t.epochs {
        let data = policy.epoch(&corpus, ep, seed::derive(tc.seed, "epoch", ep as u64))?;
        for (bin, count) in length_histogram(&data.segments, t.max_len, cfg.analyze.length_bin) {
            writeln!(w, "{ep},{bin},{count}")?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn sweep_rows(cfg: &RunConfig) -> Result<Vec<SweepRow>> {
    let ckpt = load_checkpoint(cfg)?;
    let corpus = load_corpus(cfg.paths.decode_input())?;
    let strategy = StrategyRegistry::default().get(&cfg.decode.strategy)?;
    Ok(sweep_decode_lengths(&ckpt, &corpus, &cfg.analyze.sweep_lengths, strategy.as_ref(), &cfg.decode.params())?)
}

pub fn analyze_sweep(cfg: &RunConfig) -> Result<()> {
    prepare_out(cfg, "analyze-sweep")?;
    let rows = sweep_rows(cfg)?;
    let mut w = csv_writer(&cfg.paths.out.join("sweep.csv"), "strategy,max_len,d_bleu,s_bleu")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.strategy, r.max_len, r.d_bleu, r.s_bleu)?;
    }
    w.flush()?;
    Ok(())
}
