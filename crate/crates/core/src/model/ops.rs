//! Dense building blocks with their reverse-mode rules.
//!
//! Matrices are row-per-position (`seq x features`) and linear maps act on
//! the right: `y = x W + b` with `W` stored `in x out`.

use ndarray::{s, Array1, Array2, Axis, Zip};

pub type Matrix = Array2<f64>;
pub type Vector = Array1<f64>;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Vector,
}

impl Linear {
    pub fn zeros(d_in: usize, d_out: usize) -> Linear {
        Linear { weight: Matrix::zeros((d_in, d_out)), bias: Vector::zeros(d_out) }
    }

    pub fn d_in(&self) -> usize {
        self.weight.nrows()
    }

    pub fn d_out(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: &Matrix) -> Matrix {
        let mut y = x.dot(&self.weight);
        y += &self.bias;
        y
    }

    pub fn backward_input(&self, dy: &Matrix) -> Matrix {
        dy.dot(&self.weight.t())
    }

    pub fn backward_params(x: &Matrix, dy: &Matrix) -> LinearGrads {
        LinearGrads { weight: x.t().dot(dy), bias: dy.sum_axis(Axis(0)) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrads {
    pub weight: Matrix,
    pub bias: Vector,
}

impl LinearGrads {
    pub fn zeros_like(l: &Linear) -> LinearGrads {
        LinearGrads { weight: Matrix::zeros(l.weight.raw_dim()), bias: Vector::zeros(l.bias.len()) }
    }

    pub fn add_assign(&mut self, other: &LinearGrads) {
        self.weight += &other.weight;
        self.bias += &other.bias;
    }
}

/// Gain and shift of a layer normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct NormParams {
    pub gain: Vector,
    pub shift: Vector,
}

impl NormParams {
    pub fn identity(d: usize) -> NormParams {
        NormParams { gain: Vector::ones(d), shift: Vector::zeros(d) }
    }
}

#[derive(Debug, Clone)]
pub struct NormCache {
    pub normalized: Matrix,
    pub inv_std: Vector,
}

/// Per-row standardization before gain and shift are applied.
pub fn standardize_rows(x: &Matrix) -> (Matrix, Vector) {
    let d = x.ncols() as f64;
    let mut out = x.clone();
    let mut inv_std = Vector::zeros(x.nrows());
    for (mut row, r) in out.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *r = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        row *= *r;
    }
    (out, inv_std)
}

pub fn layer_norm(x: &Matrix, p: &NormParams) -> (Matrix, NormCache) {
    let (normalized, inv_std) = standardize_rows(x);
    let mut y = &normalized * &p.gain;
    y += &p.shift;
    (y, NormCache { normalized, inv_std })
}

/// Gradient with respect to the normalization input.
pub fn layer_norm_backward(cache: &NormCache, p: &NormParams, dy: &Matrix) -> Matrix {
    let dxhat = dy * &p.gain;
    let d = dy.ncols() as f64;
    let mut dx = Matrix::zeros(dy.raw_dim());
    for i in 0..dy.nrows() {
        let g = dxhat.row(i);
        let xh = cache.normalized.row(i);
        let mean_g = g.sum() / d;
        let mean_gx = g.dot(&xh) / d;
        let r = cache.inv_std[i];
        Zip::from(dx.row_mut(i)).and(&g).and(&xh).for_each(|o, &gi, &xi| {
            *o = r * (gi - mean_g - xi * mean_gx);
        });
    }
    dx
}

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact (erf-based) GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / SQRT_2))
}

pub fn gelu_grad(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / SQRT_2)) + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Row-wise softmax restricted to `keep` columns; other columns get exactly 0.
pub fn masked_softmax_rows(scores: &mut Matrix, keep: &[bool]) {
    for mut row in scores.rows_mut() {
        let max = row
            .iter()
            .zip(keep)
            .filter(|(_, &k)| k)
            .map(|(v, _)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            row.fill(0.0);
            continue;
        }
        let mut total = 0.0;
        for (v, &k) in row.iter_mut().zip(keep) {
            *v = if k { (*v - max).exp() } else { 0.0 };
            total += *v;
        }
        row /= total;
    }
}

/// Sinusoidal position table, `len x d`.
pub fn sinusoidal_positions(len: usize, d: usize) -> Matrix {
    Matrix::from_shape_fn((len, d), |(pos, i)| {
        let angle = pos as f64 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// Query/key/value/output projections of one multi-head attention block.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub n_heads: usize,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

impl AttentionParams {
    pub fn d_model(&self) -> usize {
        self.query.d_in()
    }

    pub fn head_dim(&self) -> usize {
        self.d_model() / self.n_heads
    }
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    pub input: Matrix,
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
    /// Attention weights, one `seq x seq` matrix per head.
    pub weights: Vec<Matrix>,
    pub context: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGrads {
    pub query: LinearGrads,
    pub key: LinearGrads,
    pub value: LinearGrads,
    pub output: LinearGrads,
}

impl AttentionGrads {
    pub fn zeros_like(p: &AttentionParams) -> AttentionGrads {
        AttentionGrads {
            query: LinearGrads::zeros_like(&p.query),
            key: LinearGrads::zeros_like(&p.key),
            value: LinearGrads::zeros_like(&p.value),
            output: LinearGrads::zeros_like(&p.output),
        }
    }

    pub fn add_assign(&mut self, other: &AttentionGrads) {
        self.query.add_assign(&other.query);
        self.key.add_assign(&other.key);
        self.value.add_assign(&other.value);
        self.output.add_assign(&other.output);
    }
}

/// Scaled dot-product attention over all heads. `keep[j]` is false for padded keys.
pub fn attention_forward(p: &AttentionParams, x: &Matrix, keep: &[bool]) -> (Matrix, AttentionCache) {
    let q = p.query.forward(x);
    let k = p.key.forward(x);
    let v = p.value.forward(x);
    let dh = p.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut context = Matrix::zeros(x.raw_dim());
    let mut weights = Vec::with_capacity(p.n_heads);
    for h in 0..p.n_heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut scores = q.slice(cols).dot(&k.slice(cols).t());
        scores *= scale;
        masked_softmax_rows(&mut scores, keep);
        context.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
        weights.push(scores);
    }
    let out = p.output.forward(&context);
    (out, AttentionCache { input: x.clone(), q, k, v, weights, context })
}

/// Reverse pass of [`attention_forward`]. Parameter gradients are only
/// computed when `want_params` is set.
pub fn attention_backward(
    p: &AttentionParams,
    cache: &AttentionCache,
    dout: &Matrix,
    want_params: bool,
) -> (Matrix, Option<AttentionGrads>) {
    let dh = p.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let dcontext = p.output.backward_input(dout);
    let mut dq = Matrix::zeros(cache.q.raw_dim());
    let mut dk = Matrix::zeros(cache.k.raw_dim());
    let mut dv = Matrix::zeros(cache.v.raw_dim());
    for (h, w) in cache.weights.iter().enumerate() {
        let cols = s![.., h * dh..(h + 1) * dh];
        let dc = dcontext.slice(cols);
        dv.slice_mut(cols).assign(&w.t().dot(&dc));
        let dw = dc.dot(&cache.v.slice(cols).t());
        // softmax Jacobian, row by row
        let mut dscores = Matrix::zeros(w.raw_dim());
        for i in 0..w.nrows() {
            let dot = w.row(i).dot(&dw.row(i));
            Zip::from(dscores.row_mut(i)).and(w.row(i)).and(dw.row(i)).for_each(|o, &wi, &gi| {
                *o = wi * (gi - dot) * scale;
            });
        }
        dq.slice_mut(cols).assign(&dscores.dot(&cache.k.slice(cols)));
        dk.slice_mut(cols).assign(&dscores.t().dot(&cache.q.slice(cols)));
    }
    let mut dx = p.query.backward_input(&dq);
    dx += &p.key.backward_input(&dk);
    dx += &p.value.backward_input(&dv);
    let grads = want_params.then(|| AttentionGrads {
        query: Linear::backward_params(&cache.input, &dq),
        key: Linear::backward_params(&cache.input, &dk),
        value: Linear::backward_params(&cache.input, &dv),
        output: Linear::backward_params(&cache.context, dout),
    });
    (dx, grads)
}

/// Two-layer position-wise feed-forward block with GELU.
#[derive(Debug, Clone, PartialEq)]
pub struct FfnParams {
    pub expand: Linear,
    pub contract: Linear,
}

#[derive(Debug, Clone)]
pub struct FfnCache {
    pub pre_activation: Matrix,
}

pub fn ffn_forward(p: &FfnParams, x: &Matrix) -> (Matrix, FfnCache) {
    let pre = p.expand.forward(x);
    let act = pre.mapv(gelu);
    (p.contract.forward(&act), FfnCache { pre_activation: pre })
}

pub fn ffn_backward_input(p: &FfnParams, cache: &FfnCache, dout: &Matrix) -> Matrix {
    let mut dact = p.contract.backward_input(dout);
    Zip::from(&mut dact).and(&cache.pre_activation).for_each(|g, &u| *g *= gelu_grad(u));
    p.expand.backward_input(&dact)
}
