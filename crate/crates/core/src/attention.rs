//! Scaled dot-product attention with optional length-aware scaling, plus
//! attention-entropy tooling.
//!
//! Length-aware attention multiplies the logits by `λ = ln l / ln ι`, where
//! `l` is the number of attended keys and `ι` the mean training segment
//! length. Entropy of a softmax over `n` i.i.d. scores grows like `ln n`;
//! a scale that grows with `ln n` counteracts it.

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, contract, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScaleMode {
    #[default]
    Baseline,
    Laa,
}

impl ScaleMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ScaleMode::Baseline => "baseline",
            ScaleMode::Laa => "laa",
        }
    }
}

impl std::str::FromStr for ScaleMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(ScaleMode::Baseline),
            "laa" => Ok(ScaleMode::Laa),
            other => Err(config_err(format!("unknown scale mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttnConfig {
    pub d_k: usize,
    pub scale_mode: ScaleMode,
    pub iota: Option<f64>,
    /// Measure `l` per query row (unmasked keys of that row) instead of over
    /// the whole key sequence.
    pub per_query_length: bool,
}

impl AttnConfig {
    pub fn baseline(d_k: usize) -> Self {
        Self {
            d_k,
            scale_mode: ScaleMode::Baseline,
            iota: None,
            per_query_length: false,
        }
    }

    pub fn laa(d_k: usize, iota: f64) -> Self {
        Self {
            d_k,
            scale_mode: ScaleMode::Laa,
            iota: Some(iota),
            per_query_length: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_k == 0 {
            return Err(config_err("d_k must be at least 1"));
        }
        if self.scale_mode == ScaleMode::Laa {
            match self.iota {
                Some(i) if i > 1.0 && i.is_finite() => {}
                Some(i) => return Err(config_err(format!("iota must exceed 1, got {i}"))),
                None => return Err(config_err("length-aware attention requires iota")),
            }
        }
        Ok(())
    }

    /// Logit multiplier for an attended length `l`.
    pub fn lambda(&self, l: usize) -> f64 {
        match self.scale_mode {
            ScaleMode::Baseline => 1.0,
            ScaleMode::Laa => length_scale(l, self.iota.expect("validated")),
        }
    }
}

/// `log_ι(l)`; zero at `l = 1`, one at `l = ι`.
pub fn length_scale(l: usize, iota: f64) -> f64 {
    (l.max(1) as f64).ln() / iota.ln()
}

#[derive(Debug, Clone)]
pub struct AttnOutput {
    pub values: Array2<f64>,
    /// Row-stochastic over unmasked keys; masked entries are exactly 0.
    pub weights: Array2<f64>,
    /// Per-row logit multiplier `λ_i / √d_k`.
    pub row_scale: Vec<f64>,
}

/// Attention of `q` (q_len × d_k) over `k` (kv_len × d_k) and `v`
/// (kv_len × d_v). `mask[i][j] == true` means query `i` may attend key `j`.
pub fn attention(
    q: ArrayView2<f64>,
    k: ArrayView2<f64>,
    v: ArrayView2<f64>,
    mask: Option<ArrayView2<bool>>,
    config: &AttnConfig,
) -> Result<AttnOutput> {
    config.validate()?;
    let (q_len, d_k) = q.dim();
    let kv_len = k.nrows();
    if d_k != config.d_k || k.ncols() != d_k {
        return Err(contract(format!(
            "key dimension mismatch: q has {d_k}, k has {}, config says {}",
            k.ncols(),
            config.d_k
        )));
    }
    if v.nrows() != kv_len {
        return Err(contract("k and v differ in length"));
    }
    if let Some(m) = mask {
        if m.dim() != (q_len, kv_len) {
            return Err(contract(format!(
                "mask is {:?}, expected ({q_len}, {kv_len})",
                m.dim()
            )));
        }
    }
    Ok(attention_unchecked(q, k, v, mask, config))
}

pub(crate) fn attention_unchecked(
    q: ArrayView2<f64>,
    k: ArrayView2<f64>,
    v: ArrayView2<f64>,
    mask: Option<ArrayView2<bool>>,
    config: &AttnConfig,
) -> AttnOutput {
    let q_len = q.nrows();
    let kv_len = k.nrows();
    let inv_sqrt = 1.0 / (config.d_k as f64).sqrt();
    let mut logits = q.dot(&k.t());

    let whole_len = match mask {
        None => kv_len,
        Some(m) => (0..kv_len).filter(|&j| m.column(j).iter().any(|&b| b)).count(),
    };
    let mut row_scale = Vec::with_capacity(q_len);
    for (i, mut row) in logits.axis_iter_mut(Axis(0)).enumerate() {
        let l = match (mask, config.per_query_length) {
            (Some(m), true) => m.row(i).iter().filter(|&&b| b).count(),
            _ => whole_len,
        };
        let c = config.lambda(l) * inv_sqrt;
        row_scale.push(c);
        let mut max = f64::NEG_INFINITY;
        for (j, x) in row.iter_mut().enumerate() {
            if mask.is_some_and(|m| !m[[i, j]]) {
                *x = f64::NEG_INFINITY;
            } else {
                *x *= c;
                max = max.max(*x);
            }
        }
        if max == f64::NEG_INFINITY {
            row.fill(0.0);
            continue;
        }
        let mut sum = 0.0;
        for x in row.iter_mut() {
            *x = if *x == f64::NEG_INFINITY { 0.0 } else { (*x - max).exp() };
            sum += *x;
        }
        row.mapv_inplace(|x| x / sum);
    }
    let values = logits.dot(&v);
    AttnOutput {
        values,
        weights: logits,
        row_scale,
    }
}

/// Gradients of attention w.r.t. `q`, `k`, `v` given the upstream gradient
/// of the output values.
pub fn attention_backward(
    q: ArrayView2<f64>,
    k: ArrayView2<f64>,
    v: ArrayView2<f64>,
    out: &AttnOutput,
    d_values: ArrayView2<f64>,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let w = &out.weights;
    let dv = w.t().dot(&d_values);
    let dw = d_values.dot(&v.t());
    let mut ds = w * &dw;
    for (i, mut row) in ds.axis_iter_mut(Axis(0)).enumerate() {
        let dot: f64 = row.sum();
        let c = out.row_scale[i];
        for (x, &wij) in row.iter_mut().zip(w.row(i)) {
            *x = (*x - wij * dot) * c;
        }
    }
    let dq = ds.dot(&k);
    let dk = ds.t().dot(&q);
    (dq, dk, dv)
}

/// Multi-head attention over pre-projected inputs: columns of `q`, `k`, `v`
/// are split into `heads` equal slices and the head outputs concatenated.
pub fn multi_head(
    q: ArrayView2<f64>,
    k: ArrayView2<f64>,
    v: ArrayView2<f64>,
    heads: usize,
    mask: Option<ArrayView2<bool>>,
    config: &AttnConfig,
) -> (Array2<f64>, Vec<AttnOutput>) {
    let d = q.ncols();
    let dh = d / heads;
    let mut out = Array2::zeros((q.nrows(), v.ncols()));
    let dv = v.ncols() / heads;
    let per_head: Vec<AttnOutput> = (0..heads)
        .map(|h| {
            let qs = q.slice(s![.., h * dh..(h + 1) * dh]);
            let ks = k.slice(s![.., h * dh..(h + 1) * dh]);
            let vs = v.slice(s![.., h * dv..(h + 1) * dv]);
            let o = attention_unchecked(qs, ks, vs, mask, config);
            out.slice_mut(s![.., h * dv..(h + 1) * dv]).assign(&o.values);
            o
        })
        .collect();
    (out, per_head)
}

pub fn multi_head_backward(
    q: ArrayView2<f64>,
    k: ArrayView2<f64>,
    v: ArrayView2<f64>,
    per_head: &[AttnOutput],
    d_out: ArrayView2<f64>,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let heads = per_head.len();
    let dh = q.ncols() / heads;
    let dvh = v.ncols() / heads;
    let mut dq = Array2::zeros(q.raw_dim());
    let mut dk = Array2::zeros(k.raw_dim());
    let mut dv = Array2::zeros(v.raw_dim());
    for (h, o) in per_head.iter().enumerate() {
        let cols = s![.., h * dh..(h + 1) * dh];
        let vcols = s![.., h * dvh..(h + 1) * dvh];
        let (gq, gk, gv) = attention_backward(
            q.slice(cols),
            k.slice(cols),
            v.slice(vcols),
            o,
            d_out.slice(vcols),
        );
        dq.slice_mut(cols).assign(&gq);
        dk.slice_mut(cols).assign(&gk);
        dv.slice_mut(vcols).assign(&gv);
    }
    (dq, dk, dv)
}

/// Causal mask: query `i` sees keys `0..=i`.
pub fn causal_mask(len: usize) -> Array2<bool> {
    Array2::from_shape_fn((len, len), |(i, j)| j <= i)
}

/// Shannon entropy of each row, with `0 · ln 0 = 0`.
pub fn attention_entropy(weights: ArrayView2<f64>) -> Result<Vec<f64>> {
    if weights.iter().any(|&w| w < 0.0) {
        return Err(contract("attention weights must be non-negative"));
    }
    Ok(weights
        .rows()
        .into_iter()
        .map(|row| row.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum())
        .collect())
}

fn softmax_row(scores: &[f64], lambda: f64) -> Vec<f64> {
    let m = scores.iter().map(|s| lambda * s).fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (lambda * s - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Entropy of `softmax(λ s)` via `ln Σ e^{λ s} - λ Σ p s`.
pub fn entropy_from_logits(scores: &[f64], lambda: f64) -> f64 {
    let scaled: Vec<f64> = scores.iter().map(|s| lambda * s).collect();
    let lse = crate::dls::log_sum_exp(&scaled);
    let p = softmax_row(scores, lambda);
    lse - lambda * p.iter().zip(scores).map(|(p, s)| p * s).sum::<f64>()
}

/// Mean-field approximation `ln n + λ (s̄ - s_max)`.
pub fn entropy_approximation(scores: &[f64], lambda: f64) -> f64 {
    let n = scores.len();
    if n <= 1 {
        return 0.0;
    }
    let mean = scores.iter().sum::<f64>() / n as f64;
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (n as f64).ln() + lambda * (mean - max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropyReport {
    pub n: usize,
    pub lambda: f64,
    pub exact: Vec<f64>,
    pub approx: Vec<f64>,
    pub s_bar: Vec<f64>,
    pub s_max: Vec<f64>,
}

/// Exact and approximate entropies of `softmax(λ · row)` for every row of a
/// score matrix.
pub fn entropy_report(scores: ArrayView2<f64>, lambda: f64) -> EntropyReport {
    let n = scores.ncols();
    let mut r = EntropyReport {
        n,
        lambda,
        exact: Vec::new(),
        approx: Vec::new(),
        s_bar: Vec::new(),
        s_max: Vec::new(),
    };
    for row in scores.rows() {
        let row = row.to_vec();
        let p = softmax_row(&row, lambda);
        r.exact.push(p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum());
        r.approx.push(entropy_approximation(&row, lambda));
        r.s_bar.push(row.iter().sum::<f64>() / n as f64);
        r.s_max.push(row.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    }
    r
}

/// Draws one query's raw attention scores against `n` keys.
pub trait ScoreSampler {
    fn sample(&mut self, n: usize) -> Vec<f64>;
}

/// Scores `q·k / √d_k` with `q`, `k` drawn from a unit Gaussian in `d_k`
/// dimensions.
pub struct GaussianDotScores<R> {
    pub d_k: usize,
    pub rng: R,
}

impl<R: Rng> ScoreSampler for GaussianDotScores<R> {
    fn sample(&mut self, n: usize) -> Vec<f64> {
        let q: Vec<f64> = (0..self.d_k).map(|_| self.rng.sample(StandardNormal)).collect();
        let inv = 1.0 / (self.d_k as f64).sqrt();
        (0..n)
            .map(|_| {
                q.iter()
                    .map(|qi| qi * self.rng.sample::<f64, _>(StandardNormal))
                    .sum::<f64>()
                    * inv
            })
            .collect()
    }
}

/// I.i.d. Gaussian scores with a fixed standard deviation.
pub struct GaussianScores<R> {
    pub std: f64,
    pub rng: R,
}

impl<R: Rng> ScoreSampler for GaussianScores<R> {
    fn sample(&mut self, n: usize) -> Vec<f64> {
        (0..n)
            .map(|_| self.std * self.rng.sample::<f64, _>(StandardNormal))
            .collect()
    }
}

pub fn gaussian_dot_sampler(d_k: usize, seed: u64) -> GaussianDotScores<rand_chacha::ChaCha8Rng> {
    GaussianDotScores { d_k, rng: seed::rng(seed) }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntropyRow {
    pub scale_mode: ScaleMode,
    pub length: usize,
    pub mean_entropy: f64,
    pub std_entropy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropyStudy {
    pub rows: Vec<EntropyRow>,
}

impl EntropyStudy {
    pub fn rows_for(&self, mode: ScaleMode) -> impl Iterator<Item = &EntropyRow> {
        self.rows.iter().filter(move |r| r.scale_mode == mode)
    }

    /// Max minus min of the mean entropy across lengths.
    pub fn delta(&self, mode: ScaleMode) -> f64 {
        let (lo, hi) = self
            .rows_for(mode)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                (lo.min(r.mean_entropy), hi.max(r.mean_entropy))
            });
        if lo.is_finite() {
            hi - lo
        } else {
            0.0
        }
    }
}

/// Mean/std of exact attention entropy per length for both scale modes.
/// Both modes see the same score draws.
pub fn entropy_gap_study(
    sampler: &mut dyn ScoreSampler,
    lengths: &[usize],
    iota: f64,
    draws: usize,
) -> Result<EntropyStudy> {
    if lengths.iter().any(|&n| !(2..=4096).contains(&n)) {
        return Err(config_err("lengths must lie in 2..=4096"));
    }
    if !(iota > 1.0) {
        return Err(config_err("iota must exceed 1"));
    }
    let mut base = Vec::new();
    let mut laa = Vec::new();
    for &n in lengths {
        let lambda = length_scale(n, iota);
        let (mut hb, mut hl) = (Vec::with_capacity(draws), Vec::with_capacity(draws));
        for _ in 0..draws {
            let s = sampler.sample(n);
            hb.push(entropy_of(&softmax_row(&s, 1.0)));
            hl.push(entropy_of(&softmax_row(&s, lambda)));
        }
        base.push(summary(ScaleMode::Baseline, n, &hb));
        laa.push(summary(ScaleMode::Laa, n, &hl));
    }
    base.extend(laa);
    Ok(EntropyStudy { rows: base })
}

fn entropy_of(p: &[f64]) -> f64 {
    p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum()
}

fn summary(mode: ScaleMode, length: usize, xs: &[f64]) -> EntropyRow {
    let n = xs.len().max(1) as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    EntropyRow {
        scale_mode: mode,
        length,
        mean_entropy: mean,
        std_entropy: var.sqrt(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use rand_chacha::ChaCha8Rng;

    fn randn(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
    }

    #[test]
    fn laa_equals_baseline_at_iota() {
        let mut rng = seed::rng(1);
        let (q, k, v) = (randn(4, 8, &mut rng), randn(16, 8, &mut rng), randn(16, 8, &mut rng));
        let b = attention(q.view(), k.view(), v.view(), None, &AttnConfig::baseline(8)).unwrap();
        let l = attention(q.view(), k.view(), v.view(), None, &AttnConfig::laa(8, 16.0)).unwrap();
        assert_eq!(b.weights, l.weights);
        assert_eq!(b.values, l.values);
    }

    #[test]
    fn lambda_at_iota_squared_is_two() {
        assert_abs_diff_eq!(length_scale(64, 8.0), 2.0, epsilon = 1e-15);
        assert_eq!(length_scale(1, 8.0), 0.0);
    }

    #[test]
    fn positive_scaling_preserves_row_argmax() {
        let mut rng = seed::rng(2);
        let (q, k, v) = (randn(6, 8, &mut rng), randn(10, 8, &mut rng), randn(10, 4, &mut rng));
        let b = attention(q.view(), k.view(), v.view(), None, &AttnConfig::baseline(8)).unwrap();
        // iota = 100 over 10 keys gives λ = 0.5.
        let l = attention(q.view(), k.view(), v.view(), None, &AttnConfig::laa(8, 100.0)).unwrap();
        let argmax = |w: &Array2<f64>| -> Vec<usize> {
            w.rows()
                .into_iter()
                .map(|r| r.iter().enumerate().fold(0, |b, (i, &x)| if x > r[b] { i } else { b }))
                .collect()
        };
        assert_eq!(argmax(&b.weights), argmax(&l.weights));
    }

    #[test]
    fn masked_rows_are_stochastic_with_exact_zeros() {
        let mut rng = seed::rng(3);
        let (q, k, v) = (randn(5, 4, &mut rng), randn(5, 4, &mut rng), randn(5, 4, &mut rng));
        let mask = causal_mask(5);
        for cfg in [AttnConfig::baseline(4), AttnConfig { per_query_length: true, ..AttnConfig::laa(4, 3.0) }] {
            let o = attention(q.view(), k.view(), v.view(), Some(mask.view()), &cfg).unwrap();
            for i in 0..5 {
                assert_abs_diff_eq!(o.weights.row(i).sum(), 1.0, epsilon = 1e-12);
                for j in i + 1..5 {
                    assert_eq!(o.weights[[i, j]], 0.0);
                }
            }
            // A single visible key gets all the weight, even with λ = 0.
            assert_eq!(o.weights[[0, 0]], 1.0);
        }
    }

    #[test]
    fn per_query_length_uses_row_counts() {
        let mut rng = seed::rng(4);
        let (q, k, v) = (randn(4, 4, &mut rng), randn(4, 4, &mut rng), randn(4, 4, &mut rng));
        let mask = causal_mask(4);
        let cfg = AttnConfig { per_query_length: true, ..AttnConfig::laa(4, 2.0) };
        let o = attention(q.view(), k.view(), v.view(), Some(mask.view()), &cfg).unwrap();
        for (i, c) in o.row_scale.iter().enumerate() {
            assert_abs_diff_eq!(*c, length_scale(i + 1, 2.0) / 2.0, epsilon = 1e-15);
        }
        let whole = attention(q.view(), k.view(), v.view(), Some(mask.view()), &AttnConfig::laa(4, 2.0)).unwrap();
        assert!(whole.row_scale.iter().all(|&c| (c - 1.0).abs() < 1e-15));
    }

    #[test]
    fn config_and_shape_errors() {
        let z = Array2::<f64>::zeros((2, 4));
        let bad = AttnConfig { iota: None, ..AttnConfig::laa(4, 2.0) };
        assert!(matches!(attention(z.view(), z.view(), z.view(), None, &bad), Err(crate::Error::Config(_))));
        let k = Array2::<f64>::zeros((2, 3));
        assert!(matches!(
            attention(z.view(), k.view(), z.view(), None, &AttnConfig::baseline(4)),
            Err(crate::Error::Contract(_))
        ));
    }

    fn loss_of(q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>, g: &Array2<f64>, cfg: &AttnConfig, mask: &Array2<bool>) -> f64 {
        let o = attention(q.view(), k.view(), v.view(), Some(mask.view()), cfg).unwrap();
        (&o.values * g).sum()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = seed::rng(5);
        let mask = Array2::from_shape_fn((5, 8), |(i, j)| j <= i + 3);
        for cfg in [
            AttnConfig::baseline(4),
            AttnConfig::laa(4, 3.0),
            AttnConfig { per_query_length: true, ..AttnConfig::laa(4, 5.0) },
        ] {
            let (q, k, v) = (randn(5, 4, &mut rng), randn(8, 4, &mut rng), randn(8, 3, &mut rng));
            let g = randn(5, 3, &mut rng);
            let o = attention(q.view(), k.view(), v.view(), Some(mask.view()), &cfg).unwrap();
            let (dq, dk, dv) = attention_backward(q.view(), k.view(), v.view(), &o, g.view());
            let h = 1e-6;
            let mut worst: f64 = 0.0;
            for (which, analytic) in [(0, &dq), (1, &dk), (2, &dv)] {
                for idx in ndarray::indices(analytic.raw_dim()) {
                    let mut inputs = [q.clone(), k.clone(), v.clone()];
                    inputs[which][idx] += h;
                    let up = loss_of(&inputs[0], &inputs[1], &inputs[2], &g, &cfg, &mask);
                    inputs[which][idx] -= 2.0 * h;
                    let down = loss_of(&inputs[0], &inputs[1], &inputs[2], &g, &cfg, &mask);
                    let numeric = (up - down) / (2.0 * h);
                    let a = analytic[idx];
                    let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                    worst = worst.max(rel);
                }
            }
            assert!(worst < 1e-4, "{cfg:?}: worst relative error {worst}");
        }
    }

    #[test]
    fn entropy_extremes() {
        let uniform = Array2::from_elem((1, 16), 1.0 / 16.0);
        assert_abs_diff_eq!(attention_entropy(uniform.view()).unwrap()[0], 16f64.ln(), epsilon = 1e-12);
        let mut onehot = Array2::zeros((1, 16));
        onehot[[0, 3]] = 1.0;
        assert_eq!(attention_entropy(onehot.view()).unwrap()[0], 0.0);
        onehot[[0, 4]] = -0.1;
        assert!(attention_entropy(onehot.view()).is_err());
    }

    #[test]
    fn approximation_edge_cases() {
        assert_abs_diff_eq!(entropy_approximation(&[0.3; 10], 1.7), 10f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(entropy_from_logits(&[0.3; 10], 1.7), 10f64.ln(), epsilon = 1e-12);
        assert_eq!(entropy_approximation(&[2.0], 3.0), 0.0);
    }

    #[test]
    fn approximation_orders_like_exact_as_lambda_grows() {
        let mut sampler = GaussianScores { std: 1.0, rng: seed::rng(6) };
        let scores = Array2::from_shape_vec((64, 256), (0..64).flat_map(|_| sampler.sample(256)).collect()).unwrap();
        let reports: Vec<_> = [0.5, 1.0, 2.0].iter().map(|&l| entropy_report(scores.view(), l)).collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        for w in reports.windows(2) {
            assert!(mean(&w[1].exact) < mean(&w[0].exact));
            assert!(mean(&w[1].approx) < mean(&w[0].approx));
        }
    }

    #[test]
    fn study_modes_coincide_at_iota() {
        let mut s = gaussian_dot_sampler(8, 1);
        let study = entropy_gap_study(&mut s, &[32], 32.0, 50).unwrap();
        let b: Vec<_> = study.rows_for(ScaleMode::Baseline).collect();
        let l: Vec<_> = study.rows_for(ScaleMode::Laa).collect();
        assert_abs_diff_eq!(b[0].mean_entropy, l[0].mean_entropy, epsilon = 1e-12);
    }

    #[test]
    fn baseline_entropy_grows_and_laa_spread_shrinks() {
        let mut s = gaussian_dot_sampler(16, 2);
        let study = entropy_gap_study(&mut s, &[16, 512], 16.0, 200).unwrap();
        let b: Vec<f64> = study.rows_for(ScaleMode::Baseline).map(|r| r.mean_entropy).collect();
        assert!(b[1] > b[0]);
        assert!(study.delta(ScaleMode::Laa) < study.delta(ScaleMode::Baseline));
    }
}
