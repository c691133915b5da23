//! Encoder-decoder transformer with hand-written backpropagation.
//!
//! Pre-norm residual blocks, learned absolute positions shared by both
//! stacks, token embeddings shared by source and target. Sequences are
//! processed one at a time (no padding inside the math); [`Batch`] is the
//! padded view used by the public batch API.

use std::sync::Arc;

use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::attention::{multi_head, multi_head_backward, AttnConfig, AttnOutput, ScaleMode};
use crate::corpus::{TokenId, PAD};
use crate::error::{config_err, contract, Result};
use crate::nn::{apply_mask, dropout_mask, embed, embed_backward, log_softmax_rows, normal, sinusoidal, LayerNorm, LayerNormCache, Linear, ParamId, Params};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub dropout: f64,
    /// Size of the learned position table.
    pub max_positions: usize,
    pub vocab_size: usize,
    pub scale_mode: ScaleMode,
    pub laa_encoder_self: bool,
    pub laa_decoder_self: bool,
    pub laa_cross: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 4,
            d_model: 64,
            d_ff: 256,
            dropout: 0.1,
            max_positions: 512,
            vocab_size: 64,
            scale_mode: ScaleMode::Baseline,
            laa_encoder_self: true,
            laa_decoder_self: true,
            laa_cross: true,
        }
    }
}

impl ModelConfig {
    pub fn d_k(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(config_err(format!(
                "d_model {} is not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if self.layers == 0 || self.d_ff == 0 || self.max_positions == 0 {
            return Err(config_err("layers, d_ff and max_positions must be positive"));
        }
        if self.vocab_size < 5 {
            return Err(config_err("vocabulary too small"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(config_err("dropout must lie in [0, 1)"));
        }
        Ok(())
    }

    fn attn(&self, laa_here: bool, iota: f64, per_query: bool) -> AttnConfig {
        let mut c = if self.scale_mode == ScaleMode::Laa && laa_here {
            AttnConfig::laa(self.d_k(), iota)
        } else {
            AttnConfig::baseline(self.d_k())
        };
        c.per_query_length = per_query;
        c
    }

    /// Attention settings for (encoder self, decoder self, cross).
    pub fn attn_configs(&self, iota: f64) -> Result<[AttnConfig; 3]> {
        if self.scale_mode == ScaleMode::Laa && !(iota > 1.0 && iota.is_finite()) {
            return Err(config_err(format!("length-aware attention needs iota > 1, got {iota}")));
        }
        Ok([
            self.attn(self.laa_encoder_self, iota, false),
            self.attn(self.laa_decoder_self, iota, true),
            self.attn(self.laa_cross, iota, false),
        ])
    }
}

#[derive(Debug, Clone, Copy)]
struct Mha {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

impl Mha {
    fn new(p: &mut Params, name: &str, d: usize, rng: &mut impl rand::Rng) -> Self {
        Self {
            q: Linear::new(p, &format!("{name}.q"), d, d, rng),
            k: Linear::new(p, &format!("{name}.k"), d, d, rng),
            v: Linear::new(p, &format!("{name}.v"), d, d, rng),
            o: Linear::new(p, &format!("{name}.o"), d, d, rng),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct FeedForward {
    up: Linear,
    down: Linear,
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    ln_attn: LayerNorm,
    attn: Mha,
    ln_ff: LayerNorm,
    ff: FeedForward,
}

#[derive(Debug, Clone)]
struct DecoderLayer {
    ln_self: LayerNorm,
    self_attn: Mha,
    ln_cross: LayerNorm,
    cross_attn: Mha,
    ln_ff: LayerNorm,
    ff: FeedForward,
}

#[derive(Debug, Clone)]
struct Layout {
    tokens: ParamId,
    positions: ParamId,
    encoder: Vec<EncoderLayer>,
    enc_norm: LayerNorm,
    decoder: Vec<DecoderLayer>,
    dec_norm: LayerNorm,
    output: Linear,
}

impl Layout {
    fn build(c: &ModelConfig, p: &mut Params, rng: &mut impl rand::Rng) -> Self {
        let d = c.d_model;
        let tokens = p.add("embed.tokens", normal(rng, c.vocab_size, d, 1.0 / (d as f64).sqrt()));
        let positions = p.add("embed.positions", sinusoidal(c.max_positions, d));
        let ff = |p: &mut Params, name: &str, rng: &mut _| FeedForward {
            up: Linear::new(p, &format!("{name}.ff.up"), d, c.d_ff, rng),
            down: Linear::new(p, &format!("{name}.ff.down"), c.d_ff, d, rng),
        };
        let encoder = (0..c.layers)
            .map(|i| {
                let n = format!("enc.{i}");
                EncoderLayer {
                    ln_attn: LayerNorm::new(p, &format!("{n}.ln_attn"), d),
                    attn: Mha::new(p, &format!("{n}.attn"), d, rng),
                    ln_ff: LayerNorm::new(p, &format!("{n}.ln_ff"), d),
                    ff: ff(p, &n, rng),
                }
            })
            .collect();
        let enc_norm = LayerNorm::new(p, "enc.norm", d);
        let decoder = (0..c.layers)
            .map(|i| {
                let n = format!("dec.{i}");
                DecoderLayer {
                    ln_self: LayerNorm::new(p, &format!("{n}.ln_self"), d),
                    self_attn: Mha::new(p, &format!("{n}.self_attn"), d, rng),
                    ln_cross: LayerNorm::new(p, &format!("{n}.ln_cross"), d),
                    cross_attn: Mha::new(p, &format!("{n}.cross_attn"), d, rng),
                    ln_ff: LayerNorm::new(p, &format!("{n}.ln_ff"), d),
                    ff: ff(p, &n, rng),
                }
            })
            .collect();
        let dec_norm = LayerNorm::new(p, "dec.norm", d);
        let output = Linear::new(p, "output", d, c.vocab_size, rng);
        Self { tokens, positions, encoder, enc_norm, decoder, dec_norm, output }
    }
}

#[derive(Debug, Clone)]
pub struct Transformer {
    config: ModelConfig,
    params: Params,
    layout: Layout,
}

struct MhaCache {
    hq: Array2<f64>,
    hkv: Option<Array2<f64>>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    heads: Vec<AttnOutput>,
    ctx: Array2<f64>,
}

struct FfCache {
    h: Array2<f64>,
    pre: Array2<f64>,
    act: Array2<f64>,
}

struct EncCache {
    ln_attn: LayerNormCache,
    attn: MhaCache,
    drop_attn: Option<Array2<f64>>,
    ln_ff: LayerNormCache,
    ff: FfCache,
    drop_ff: Option<Array2<f64>>,
}

struct DecCache {
    ln_self: LayerNormCache,
    self_attn: MhaCache,
    drop_self: Option<Array2<f64>>,
    ln_cross: LayerNormCache,
    cross_attn: MhaCache,
    drop_cross: Option<Array2<f64>>,
    ln_ff: LayerNormCache,
    ff: FfCache,
    drop_ff: Option<Array2<f64>>,
}

struct Tape {
    src: Vec<usize>,
    tgt: Vec<usize>,
    drop_src: Option<Array2<f64>>,
    drop_tgt: Option<Array2<f64>>,
    enc: Vec<EncCache>,
    enc_norm: LayerNormCache,
    memory: Array2<f64>,
    dec: Vec<DecCache>,
    dec_norm: LayerNormCache,
    dec_out: Array2<f64>,
}

/// Padded batch of encoded (source, target) pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub source: Array2<TokenId>,
    /// Decoder input: encoded target without its final token.
    pub target_in: Array2<TokenId>,
    /// Decoder output: encoded target without BOS; position k predicts
    /// `target_out[k]` from `target_in[..=k]`.
    pub target_out: Array2<TokenId>,
    pub source_mask: Array2<bool>,
    pub target_mask: Array2<bool>,
}

impl Batch {
    pub fn new(pairs: &[(Vec<TokenId>, Vec<TokenId>)]) -> Result<Self> {
        if pairs.iter().any(|(s, t)| s.is_empty() || t.len() < 2) {
            return Err(contract("sources must be non-empty and targets at least BOS + one token"));
        }
        let b = pairs.len();
        let s_max = pairs.iter().map(|(s, _)| s.len()).max().unwrap_or(0);
        let t_max = pairs.iter().map(|(_, t)| t.len() - 1).max().unwrap_or(0);
        let mut batch = Batch {
            source: Array2::from_elem((b, s_max), PAD),
            target_in: Array2::from_elem((b, t_max), PAD),
            target_out: Array2::from_elem((b, t_max), PAD),
            source_mask: Array2::from_elem((b, s_max), false),
            target_mask: Array2::from_elem((b, t_max), false),
        };
        for (i, (s, t)) in pairs.iter().enumerate() {
            for (j, &x) in s.iter().enumerate() {
                batch.source[[i, j]] = x;
                batch.source_mask[[i, j]] = true;
            }
            for j in 0..t.len() - 1 {
                batch.target_in[[i, j]] = t[j];
                batch.target_out[[i, j]] = t[j + 1];
                batch.target_mask[[i, j]] = true;
            }
        }
        Ok(batch)
    }

    pub fn len(&self) -> usize {
        self.source.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Unpadded (source, decoder input, decoder output) of row `i`.
    pub fn row(&self, i: usize) -> (Vec<TokenId>, Vec<TokenId>, Vec<TokenId>) {
        let take = |ids: ndarray::ArrayView1<TokenId>, m: ndarray::ArrayView1<bool>| -> Vec<TokenId> {
            ids.iter().zip(m).filter(|(_, &k)| k).map(|(&x, _)| x).collect()
        };
        (
            take(self.source.row(i), self.source_mask.row(i)),
            take(self.target_in.row(i), self.target_mask.row(i)),
            take(self.target_out.row(i), self.target_mask.row(i)),
        )
    }

    pub fn target_tokens(&self) -> usize {
        self.target_mask.iter().filter(|&&m| m).count()
    }
}

fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Label-smoothed loss of one position and its gradient w.r.t. logits.
fn smoothed_nll(log_probs: ndarray::ArrayView1<f64>, gold: usize, smoothing: f64) -> f64 {
    let v = log_probs.len() as f64;
    let mean_lp = log_probs.sum() / v;
    -(1.0 - smoothing) * log_probs[gold] - smoothing * mean_lp
}

/// Mean label-smoothed NLL over non-pad positions of a batch.
pub fn loss(log_probs: &Array3<f64>, batch: &Batch, smoothing: f64) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for ((b, t), &m) in batch.target_mask.indexed_iter() {
        if m {
            let gold = batch.target_out[[b, t]] as usize;
            total += smoothed_nll(log_probs.slice(s![b, t, ..]), gold, smoothing);
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

impl Transformer {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::derived_rng(seed, "init", 0);
        let mut params = Params::new();
        let layout = Layout::build(&config, &mut params, &mut rng);
        Ok(Self { config, params, layout })
    }

    /// Rebuild from stored tensors; names and shapes must match the layout
    /// `config` implies.
    pub fn from_params(config: ModelConfig, stored: Params) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        if model.params.names() != stored.names() {
            return Err(config_err("stored parameter names do not match the model layout"));
        }
        for (a, b) in model.params.tensors().iter().zip(stored.tensors()) {
            if a.dim() != b.dim() {
                return Err(config_err("stored parameter shapes do not match the model layout"));
            }
        }
        model.params = stored;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn output_projection(&self) -> (ParamId, ParamId) {
        (self.layout.output.w, self.layout.output.b)
    }

    pub fn token_embedding(&self) -> ParamId {
        self.layout.tokens
    }

    fn check_ids(&self, ids: &[TokenId], what: &str) -> Result<()> {
        if ids.len() > self.config.max_positions {
            return Err(contract(format!(
                "{what} length {} exceeds max positions {}",
                ids.len(),
                self.config.max_positions
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(contract(format!("{what} token {bad} outside vocabulary")));
        }
        Ok(())
    }

    fn embed_seq(&self, ids: &[usize]) -> Array2<f64> {
        let p = &self.params;
        let scale = (self.config.d_model as f64).sqrt();
        embed(p.get(self.layout.tokens), ids.iter().copied(), scale) + &p.get(self.layout.positions).slice(s![..ids.len(), ..])
    }

    fn mha_forward(&self, m: &Mha, hq: Array2<f64>, hkv: Option<&Array2<f64>>, mask: Option<ArrayView2<bool>>, cfg: &AttnConfig) -> (Array2<f64>, MhaCache) {
        let p = &self.params;
        let kv_in = hkv.unwrap_or(&hq);
        let q = m.q.forward(p, hq.view());
        let k = m.k.forward(p, kv_in.view());
        let v = m.v.forward(p, kv_in.view());
        let (ctx, heads) = multi_head(q.view(), k.view(), v.view(), self.config.heads, mask, cfg);
        let out = m.o.forward(p, ctx.view());
        let hkv = hkv.cloned();
        (out, MhaCache { hq, hkv, q, k, v, heads, ctx })
    }

    /// Returns (d_hq, d_hkv); d_hkv is folded into d_hq for self-attention.
    fn mha_backward(&self, m: &Mha, c: &MhaCache, d_out: ArrayView2<f64>, g: &mut Params) -> (Array2<f64>, Option<Array2<f64>>) {
        let p = &self.params;
        let d_ctx = m.o.backward(p, g, c.ctx.view(), d_out);
        let (dq, dk, dv) = multi_head_backward(c.q.view(), c.k.view(), c.v.view(), &c.heads, d_ctx.view());
        let d_hq = m.q.backward(p, g, c.hq.view(), dq.view());
        let kv_in = c.hkv.as_ref().unwrap_or(&c.hq);
        let d_kv = m.k.backward(p, g, kv_in.view(), dk.view()) + m.v.backward(p, g, kv_in.view(), dv.view());
        if c.hkv.is_some() {
            (d_hq, Some(d_kv))
        } else {
            (d_hq + d_kv, None)
        }
    }

    fn ff_forward(&self, f: &FeedForward, h: Array2<f64>) -> (Array2<f64>, FfCache) {
        let p = &self.params;
        let pre = f.up.forward(p, h.view());
        let act = relu(&pre);
        let out = f.down.forward(p, act.view());
        (out, FfCache { h, pre, act })
    }

    fn ff_backward(&self, f: &FeedForward, c: &FfCache, d_out: ArrayView2<f64>, g: &mut Params) -> Array2<f64> {
        let p = &self.params;
        let mut d_act = f.down.backward(p, g, c.act.view(), d_out);
        ndarray::Zip::from(&mut d_act).and(&c.pre).for_each(|d, &x| {
            if x <= 0.0 {
                *d = 0.0;
            }
        });
        f.up.backward(p, g, c.h.view(), d_act.view())
    }

    fn run(&self, src: &[TokenId], tgt_in: &[TokenId], iota: f64, mut rng: Option<&mut dyn RngCore>) -> Result<(Array2<f64>, Tape)> {
        self.check_ids(src, "source")?;
        self.check_ids(tgt_in, "target")?;
        let [enc_cfg, self_cfg, cross_cfg] = self.config.attn_configs(iota)?;
        let rate = self.config.dropout;
        let p = &self.params;
        let src: Vec<usize> = src.iter().map(|&t| t as usize).collect();
        let tgt: Vec<usize> = tgt_in.iter().map(|&t| t as usize).collect();

        let drop_src = dropout_mask(reborrow(&mut rng), (src.len(), self.config.d_model), rate);
        let mut x = apply_mask(self.embed_seq(&src), &drop_src);
        let mut enc = Vec::with_capacity(self.layout.encoder.len());
        for layer in &self.layout.encoder {
            let (h, ln_attn) = layer.ln_attn.forward(p, x.view());
            let (a, attn) = self.mha_forward(&layer.attn, h, None, None, &enc_cfg);
            let drop_attn = dropout_mask(reborrow(&mut rng), a.dim(), rate);
            x = x + apply_mask(a, &drop_attn);
            let (h, ln_ff) = layer.ln_ff.forward(p, x.view());
            let (f, ff) = self.ff_forward(&layer.ff, h);
            let drop_ff = dropout_mask(reborrow(&mut rng), f.dim(), rate);
            x = x + apply_mask(f, &drop_ff);
            enc.push(EncCache { ln_attn, attn, drop_attn, ln_ff, ff, drop_ff });
        }
        let (memory, enc_norm) = self.layout.enc_norm.forward(p, x.view());

        let causal = crate::attention::causal_mask(tgt.len());
        let drop_tgt = dropout_mask(reborrow(&mut rng), (tgt.len(), self.config.d_model), rate);
        let mut y = apply_mask(self.embed_seq(&tgt), &drop_tgt);
        let mut dec = Vec::with_capacity(self.layout.decoder.len());
        for layer in &self.layout.decoder {
            let (h, ln_self) = layer.ln_self.forward(p, y.view());
            let (a, self_attn) = self.mha_forward(&layer.self_attn, h, None, Some(causal.view()), &self_cfg);
            let drop_self = dropout_mask(reborrow(&mut rng), a.dim(), rate);
            y = y + apply_mask(a, &drop_self);
            let (h, ln_cross) = layer.ln_cross.forward(p, y.view());
            let (a, cross_attn) = self.mha_forward(&layer.cross_attn, h, Some(&memory), None, &cross_cfg);
            let drop_cross = dropout_mask(reborrow(&mut rng), a.dim(), rate);
            y = y + apply_mask(a, &drop_cross);
            let (h, ln_ff) = layer.ln_ff.forward(p, y.view());
            let (f, ff) = self.ff_forward(&layer.ff, h);
            let drop_ff = dropout_mask(reborrow(&mut rng), f.dim(), rate);
            y = y + apply_mask(f, &drop_ff);
            dec.push(DecCache { ln_self, self_attn, drop_self, ln_cross, cross_attn, drop_cross, ln_ff, ff, drop_ff });
        }
        let (dec_out, dec_norm) = self.layout.dec_norm.forward(p, y.view());
        let mut logits = self.layout.output.forward(p, dec_out.view());
        log_softmax_rows(&mut logits);
        Ok((logits, Tape { src, tgt, drop_src, drop_tgt, enc, enc_norm, memory, dec, dec_norm, dec_out }))
    }

    fn backward(&self, tape: &Tape, d_logits: ArrayView2<f64>, g: &mut Params) {
        let p = &self.params;
        let l = &self.layout;
        let d_dec_out = l.output.backward(p, g, tape.dec_out.view(), d_logits);
        let mut dy = l.dec_norm.backward(p, g, &tape.dec_norm, d_dec_out.view());
        let mut d_memory = Array2::<f64>::zeros(tape.memory.raw_dim());
        for (layer, c) in l.decoder.iter().zip(&tape.dec).rev() {
            let d_f = apply_mask(dy.clone(), &c.drop_ff);
            let d_h = self.ff_backward(&layer.ff, &c.ff, d_f.view(), g);
            dy = dy + layer.ln_ff.backward(p, g, &c.ln_ff, d_h.view());

            let d_a = apply_mask(dy.clone(), &c.drop_cross);
            let (d_h, d_mem) = self.mha_backward(&layer.cross_attn, &c.cross_attn, d_a.view(), g);
            d_memory = d_memory + d_mem.expect("cross attention");
            dy = dy + layer.ln_cross.backward(p, g, &c.ln_cross, d_h.view());

            let d_a = apply_mask(dy.clone(), &c.drop_self);
            let (d_h, _) = self.mha_backward(&layer.self_attn, &c.self_attn, d_a.view(), g);
            dy = dy + layer.ln_self.backward(p, g, &c.ln_self, d_h.view());
        }
        let dy = apply_mask(dy, &tape.drop_tgt);
        self.embed_grads(g, &tape.tgt, dy.view());

        let mut dx = l.enc_norm.backward(p, g, &tape.enc_norm, d_memory.view());
        for (layer, c) in l.encoder.iter().zip(&tape.enc).rev() {
            let d_f = apply_mask(dx.clone(), &c.drop_ff);
            let d_h = self.ff_backward(&layer.ff, &c.ff, d_f.view(), g);
            dx = dx + layer.ln_ff.backward(p, g, &c.ln_ff, d_h.view());

            let d_a = apply_mask(dx.clone(), &c.drop_attn);
            let (d_h, _) = self.mha_backward(&layer.attn, &c.attn, d_a.view(), g);
            dx = dx + layer.ln_attn.backward(p, g, &c.ln_attn, d_h.view());
        }
        let dx = apply_mask(dx, &tape.drop_src);
        self.embed_grads(g, &tape.src, dx.view());
    }

    fn embed_grads(&self, g: &mut Params, ids: &[usize], d: ArrayView2<f64>) {
        let scale = (self.config.d_model as f64).sqrt();
        embed_backward(g.get_mut(self.layout.tokens), ids.iter().copied(), d, scale);
        let mut pos = g.get_mut(self.layout.positions).slice_mut(s![..ids.len(), ..]);
        pos += &d;
    }

    /// Per-position log-probabilities (tgt_in.len() × vocab) for one
    /// unpadded pair, dropout off.
    pub fn log_probs(&self, src: &[TokenId], tgt_in: &[TokenId], iota: f64) -> Result<Array2<f64>> {
        Ok(self.run(src, tgt_in, iota, None)?.0)
    }

    /// Batch forward. Padding positions carry a uniform distribution.
    pub fn forward(&self, batch: &Batch, iota: f64) -> Result<Array3<f64>> {
        let (b, t) = batch.target_in.dim();
        let v = self.config.vocab_size;
        let mut out = Array3::from_elem((b, t, v), -(v as f64).ln());
        for i in 0..b {
            let (src, tin, _) = batch.row(i);
            let lp = self.log_probs(&src, &tin, iota)?;
            out.slice_mut(s![i, ..tin.len(), ..]).assign(&lp);
        }
        Ok(out)
    }

    /// Summed label-smoothed loss of one encoded pair; accumulates
    /// `grad_scale ×` its gradient into `grads`.
    pub fn loss_and_grad(
        &self,
        src: &[TokenId],
        tgt: &[TokenId],
        smoothing: f64,
        iota: f64,
        rng: Option<&mut dyn RngCore>,
        grad_scale: f64,
        grads: &mut Params,
    ) -> Result<f64> {
        if tgt.len() < 2 {
            return Err(contract("target must hold BOS and at least one token"));
        }
        let (tin, tout) = (&tgt[..tgt.len() - 1], &tgt[1..]);
        let (lp, tape) = self.run(src, tin, iota, rng)?;
        let v = lp.ncols() as f64;
        let mut total = 0.0;
        let mut d_logits = lp.mapv(f64::exp);
        for (k, &gold) in tout.iter().enumerate() {
            total += smoothed_nll(lp.row(k), gold as usize, smoothing);
            let mut row = d_logits.row_mut(k);
            row.mapv_inplace(|x| x - smoothing / v);
            row[gold as usize] -= 1.0 - smoothing;
        }
        d_logits *= grad_scale;
        self.backward(&tape, d_logits.view(), grads);
        Ok(total)
    }

    /// Total log-probability of an encoded target given a source.
    pub fn sequence_log_prob(&self, src: &[TokenId], tgt: &[TokenId], iota: f64) -> Result<f64> {
        let lp = self.log_probs(src, &tgt[..tgt.len() - 1], iota)?;
        Ok(tgt[1..].iter().enumerate().map(|(k, &y)| lp[[k, y as usize]]).sum())
    }

    /// Start incremental decoding against `src`.
    pub fn begin(&self, src: &[TokenId], iota: f64) -> Result<IncrementalState<'_>> {
        let (_, tape) = self.run(src, &[crate::corpus::BOS], iota, None)?;
        let [_, self_cfg, cross_cfg] = self.config.attn_configs(iota)?;
        let memory = tape.memory;
        let p = &self.params;
        let cross = self
            .layout
            .decoder
            .iter()
            .map(|l| (l.cross_attn.k.forward(p, memory.view()), l.cross_attn.v.forward(p, memory.view())))
            .collect();
        Ok(IncrementalState {
            model: self,
            cross: Arc::new(cross),
            self_cfg,
            cross_cfg,
            keys: vec![Vec::new(); self.layout.decoder.len()],
            values: vec![Vec::new(); self.layout.decoder.len()],
            len: 0,
        })
    }
}

/// Decoder state with cached self-attention keys/values; cheap to clone
/// relative to recomputing the prefix.
#[derive(Clone)]
pub struct IncrementalState<'m> {
    model: &'m Transformer,
    cross: Arc<Vec<(Array2<f64>, Array2<f64>)>>,
    self_cfg: AttnConfig,
    cross_cfg: AttnConfig,
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    len: usize,
}

impl IncrementalState<'_> {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Feed one decoder-input token; returns log-probabilities of the next.
    pub fn advance(&mut self, token: TokenId) -> Result<Vec<f64>> {
        let m = self.model;
        let c = &m.config;
        if self.len >= c.max_positions {
            return Err(contract(format!("decoder exceeded {} positions", c.max_positions)));
        }
        if token as usize >= c.vocab_size {
            return Err(contract(format!("token {token} outside vocabulary")));
        }
        let p = &m.params;
        let d = c.d_model;
        let heads = c.heads;
        let scale = (d as f64).sqrt();
        let mut y = &p.get(m.layout.tokens).slice(s![token as usize..token as usize + 1, ..]) * scale
            + &p.get(m.layout.positions).slice(s![self.len..self.len + 1, ..]);
        let t = self.len + 1;
        for (i, layer) in m.layout.decoder.iter().enumerate() {
            let (h, _) = layer.ln_self.forward(p, y.view());
            let q = layer.self_attn.q.forward(p, h.view());
            let k = layer.self_attn.k.forward(p, h.view());
            let v = layer.self_attn.v.forward(p, h.view());
            self.keys[i].extend(k.iter());
            self.values[i].extend(v.iter());
            let kk = ArrayView2::from_shape((t, d), &self.keys[i]).expect("cache shape");
            let vv = ArrayView2::from_shape((t, d), &self.values[i]).expect("cache shape");
            let (ctx, _) = multi_head(q.view(), kk, vv, heads, None, &self.self_cfg);
            y = y + layer.self_attn.o.forward(p, ctx.view());

            let (h, _) = layer.ln_cross.forward(p, y.view());
            let q = layer.cross_attn.q.forward(p, h.view());
            let (ck, cv) = &self.cross[i];
            let (ctx, _) = multi_head(q.view(), ck.view(), cv.view(), heads, None, &self.cross_cfg);
            y = y + layer.cross_attn.o.forward(p, ctx.view());

            let (h, _) = layer.ln_ff.forward(p, y.view());
            let pre = layer.ff.up.forward(p, h.view());
            y = y + layer.ff.down.forward(p, relu(&pre).view());
        }
        self.len = t;
        let (h, _) = m.layout.dec_norm.forward(p, y.view());
        let mut logits = m.layout.output.forward(p, h.view());
        log_softmax_rows(&mut logits);
        Ok(logits.index_axis(Axis(0), 0).to_vec())
    }
}

fn reborrow<'a>(rng: &'a mut Option<&mut dyn RngCore>) -> Option<&'a mut dyn RngCore> {
    match rng {
        Some(r) => Some(&mut **r),
        None => None,
    }
}
