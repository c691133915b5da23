//! Parameter storage and the differentiable layers the transformer is built
//! from. Every layer keeps what its backward pass needs in an explicit
//! cache struct; gradients accumulate into a [`Params`] of identical layout.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Normal, Uniform};

/// Handle to one tensor in a [`Params`] store.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

/// Named 2-D tensors in registration order.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    names: Vec<String>,
    tensors: Vec<Array2<f64>>,
}

impl Params {
    pub fn new() -> Self {
        Self { names: Vec::new(), tensors: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Array2<f64>) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.tensors[id.0]
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| Array2::zeros(t.raw_dim())).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Array2<f64>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.tensors
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn fill_zero(&mut self) {
        for t in &mut self.tensors {
            t.fill(0.0);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|x| x.is_finite()))
    }
}

impl Default for Params {
    fn default() -> Self {
        Self::new()
    }
}

pub(crate) fn xavier(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new(-a, a).expect("valid bounds");
    Array2::from_shape_fn((rows, cols), |_| rng.sample(dist))
}

pub(crate) fn normal(rng: &mut impl Rng, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    let dist = Normal::new(0.0, std).expect("valid std");
    Array2::from_shape_fn((rows, cols), |_| rng.sample(dist))
}

/// Sine/cosine table, used as the starting point of the learned positions.
pub(crate) fn sinusoidal(rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |(p, j)| {
        let angle = p as f64 / 10000f64.powf((j - j % 2) as f64 / cols as f64);
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(params: &mut Params, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        Self {
            w: params.add(format!("{name}.weight"), xavier(rng, fan_in, fan_out)),
            b: params.add(format!("{name}.bias"), Array2::zeros((1, fan_out))),
        }
    }

    pub fn forward(&self, p: &Params, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(p.get(self.w)) + p.get(self.b)
    }

    /// Accumulate parameter gradients and return the input gradient.
    pub fn backward(&self, p: &Params, g: &mut Params, x: ArrayView2<f64>, dy: ArrayView2<f64>) -> Array2<f64> {
        *g.get_mut(self.w) += &x.t().dot(&dy);
        *g.get_mut(self.b) += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        dy.dot(&p.get(self.w).t())
    }
}

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

pub struct LayerNormCache {
    xhat: Array2<f64>,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(params: &mut Params, name: &str, dim: usize) -> Self {
        Self {
            gain: params.add(format!("{name}.gain"), Array2::ones((1, dim))),
            bias: params.add(format!("{name}.bias"), Array2::zeros((1, dim))),
        }
    }

    pub fn forward(&self, p: &Params, x: ArrayView2<f64>) -> (Array2<f64>, LayerNormCache) {
        let d = x.ncols() as f64;
        let mut xhat = x.to_owned();
        let mut inv_std = Vec::with_capacity(x.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / d;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|v| v * v).sum::<f64>() / d;
            let is = 1.0 / (var + LN_EPS).sqrt();
            row.mapv_inplace(|v| v * is);
            inv_std.push(is);
        }
        let y = &xhat * p.get(self.gain) + p.get(self.bias);
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&self, p: &Params, g: &mut Params, cache: &LayerNormCache, dy: ArrayView2<f64>) -> Array2<f64> {
        let gain = p.get(self.gain);
        *g.get_mut(self.gain) += &(&dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
        *g.get_mut(self.bias) += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        let dxhat = &dy * gain;
        let d = dy.ncols() as f64;
        let mut dx = Array2::zeros(dy.raw_dim());
        for i in 0..dy.nrows() {
            let xh = cache.xhat.row(i);
            let gr = dxhat.row(i);
            let mean_g = gr.sum() / d;
            let mean_gx = gr.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d;
            let is = cache.inv_std[i];
            for ((o, &gv), &xv) in dx.row_mut(i).iter_mut().zip(gr).zip(xh) {
                *o = is * (gv - mean_g - xv * mean_gx);
            }
        }
        dx
    }
}

/// Row gather from a table.
pub fn embed(table: &Array2<f64>, ids: impl IntoIterator<Item = usize>, scale: f64) -> Array2<f64> {
    let rows: Vec<usize> = ids.into_iter().collect();
    let mut out = Array2::zeros((rows.len(), table.ncols()));
    for (i, &r) in rows.iter().enumerate() {
        out.row_mut(i).assign(&(&table.row(r) * scale));
    }
    out
}

pub fn embed_backward(grad_table: &mut Array2<f64>, ids: impl IntoIterator<Item = usize>, dy: ArrayView2<f64>, scale: f64) {
    for (i, r) in ids.into_iter().enumerate() {
        let mut row = grad_table.row_mut(r);
        row.scaled_add(scale, &dy.row(i));
    }
}

/// Inverted dropout mask (`None` when inactive).
pub fn dropout_mask(rng: Option<&mut dyn rand::RngCore>, shape: (usize, usize), rate: f64) -> Option<Array2<f64>> {
    let rng = rng?;
    if rate <= 0.0 {
        return None;
    }
    let keep = 1.0 - rate;
    Some(Array2::from_shape_fn(shape, |_| {
        if rng.random::<f64>() < keep {
            1.0 / keep
        } else {
            0.0
        }
    }))
}

pub fn apply_mask(x: Array2<f64>, mask: &Option<Array2<f64>>) -> Array2<f64> {
    match mask {
        Some(m) => x * m,
        None => x,
    }
}

pub fn log_softmax_rows(logits: &mut Array2<f64>) {
    for mut row in logits.rows_mut() {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        row.mapv_inplace(|x| x - lse);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub warmup: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 5e-4, beta1: 0.9, beta2: 0.98, eps: 1e-9, warmup: 40 }
    }
}

impl AdamConfig {
    /// Inverse-square-root schedule with linear warmup; peaks at `lr` when
    /// `step == warmup`.
    pub fn rate(&self, step: usize) -> f64 {
        let s = step.max(1) as f64;
        let w = self.warmup.max(1) as f64;
        self.lr * (s / w).min((w / s).sqrt())
    }
}

pub struct Adam {
    pub config: AdamConfig,
    m: Params,
    v: Params,
    step: usize,
}

impl Adam {
    pub fn new(config: AdamConfig, like: &Params) -> Self {
        Self { config, m: like.zeros_like(), v: like.zeros_like(), step: 0 }
    }

    pub fn steps(&self) -> usize {
        self.step
    }

    pub fn update(&mut self, params: &mut Params, grads: &Params) {
        self.step += 1;
        let c = self.config;
        let lr = c.rate(self.step);
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (((p, g), m), v) in params
            .tensors
            .iter_mut()
            .zip(&grads.tensors)
            .zip(&mut self.m.tensors)
            .zip(&mut self.v.tensors)
        {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *p -= lr * mhat / (vhat.sqrt() + c.eps);
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn numeric_check(f: impl Fn(&Array2<f64>) -> f64, x: &Array2<f64>, analytic: &Array2<f64>) {
        let h = 1e-6;
        for idx in ndarray::indices(x.raw_dim()) {
            let mut xp = x.clone();
            xp[idx] += h;
            let mut xm = x.clone();
            xm[idx] -= h;
            let n = (f(&xp) - f(&xm)) / (2.0 * h);
            let a = analytic[idx];
            assert!((a - n).abs() <= 1e-6 * a.abs().max(n.abs()).max(1.0), "{a} vs {n}");
        }
    }

    #[test]
    fn layer_norm_input_gradient() {
        let mut rng = seed::rng(1);
        let mut p = Params::new();
        let ln = LayerNorm::new(&mut p, "ln", 6);
        *p.get_mut(ln.gain) = normal(&mut rng, 1, 6, 1.0);
        let x = normal(&mut rng, 3, 6, 1.0);
        let up = normal(&mut rng, 3, 6, 1.0);
        let (_, cache) = ln.forward(&p, x.view());
        let mut g = p.zeros_like();
        let dx = ln.backward(&p, &mut g, &cache, up.view());
        numeric_check(|x| (&ln.forward(&p, x.view()).0 * &up).sum(), &x, &dx);
    }

    #[test]
    fn linear_input_gradient() {
        let mut rng = seed::rng(2);
        let mut p = Params::new();
        let lin = Linear::new(&mut p, "l", 4, 3, &mut rng);
        let x = normal(&mut rng, 5, 4, 1.0);
        let up = normal(&mut rng, 5, 3, 1.0);
        let mut g = p.zeros_like();
        let dx = lin.backward(&p, &mut g, x.view(), up.view());
        numeric_check(|x| (&lin.forward(&p, x.view()) * &up).sum(), &x, &dx);
    }

    #[test]
    fn warmup_schedule_peaks_at_warmup() {
        let c = AdamConfig { lr: 1e-3, warmup: 40, ..AdamConfig::default() };
        assert!((c.rate(40) - 1e-3).abs() < 1e-15);
        assert!(c.rate(10) < c.rate(40));
        assert!(c.rate(160) < c.rate(40));
        assert!((c.rate(160) - 5e-4).abs() < 1e-15);
    }

    #[test]
    fn adam_leaves_zero_gradient_entries_untouched() {
        let mut p = Params::new();
        let id = p.add("x", Array2::from_elem((2, 2), 1.0));
        let mut g = p.zeros_like();
        g.get_mut(id)[[0, 0]] = 1.0;
        let mut adam = Adam::new(AdamConfig::default(), &p);
        adam.update(&mut p, &g);
        assert!(p.get(id)[[0, 0]] < 1.0);
        assert_eq!(p.get(id)[[1, 1]], 1.0);
    }
}
