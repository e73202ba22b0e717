//! Independent loop-based oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use kner::model::ops::{AttentionParams, FfnParams, Linear, Matrix, NormParams};
use kner::model::{AdapterParams, BaseLayerParams};
use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TABLE3: &str = include_str!("../fixtures/table3.tsv");

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_shape_fn((rows, cols), |_| rng.random_range(-scale..scale))
}

pub fn random_linear(rng: &mut impl Rng, d_in: usize, d_out: usize, scale: f64) -> Linear {
    Linear {
        weight: random_matrix(rng, d_in, d_out, scale),
        bias: Array1::from_shape_fn(d_out, |_| rng.random_range(-scale..scale)),
    }
}

pub fn random_attention(rng: &mut impl Rng, d: usize, heads: usize, scale: f64) -> AttentionParams {
    AttentionParams {
        n_heads: heads,
        query: random_linear(rng, d, d, scale),
        key: random_linear(rng, d, d, scale),
        value: random_linear(rng, d, d, scale),
        output: random_linear(rng, d, d, scale),
    }
}

pub fn random_norm(rng: &mut impl Rng, d: usize) -> NormParams {
    NormParams {
        gain: Array1::from_shape_fn(d, |_| rng.random_range(0.5..1.5)),
        shift: Array1::from_shape_fn(d, |_| rng.random_range(-0.5..0.5)),
    }
}

pub fn random_base(rng: &mut impl Rng, d: usize, heads: usize, d_ffn: usize) -> BaseLayerParams {
    BaseLayerParams {
        attention: random_attention(rng, d, heads, 0.5),
        norm1: random_norm(rng, d),
        ffn: FfnParams {
            expand: random_linear(rng, d, d_ffn, 0.5),
            contract: random_linear(rng, d_ffn, d, 0.5),
        },
        norm2: random_norm(rng, d),
    }
}

pub fn random_adapter(rng: &mut impl Rng, d: usize, heads: usize) -> AdapterParams {
    AdapterParams { attention: random_attention(rng, d, heads, 0.5) }
}

pub fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

type Rows = Vec<Vec<f64>>;

fn rows(m: &Matrix) -> Rows {
    m.outer_iter().map(|r| r.to_vec()).collect()
}

fn to_matrix(r: &Rows) -> Matrix {
    let cols = r.first().map_or(0, Vec::len);
    Matrix::from_shape_fn((r.len(), cols), |(i, j)| r[i][j])
}

fn affine(x: &Rows, l: &Linear) -> Rows {
    x.iter()
        .map(|row| {
            (0..l.weight.ncols())
                .map(|j| {
                    let mut s = l.bias[j];
                    for (i, v) in row.iter().enumerate() {
                        s += v * l.weight[[i, j]];
                    }
                    s
                })
                .collect()
        })
        .collect()
}

/// Attention one head, one query position at a time.
pub fn attention_oracle(x: &Matrix, p: &AttentionParams, keep: &[bool]) -> Matrix {
    let xr = rows(x);
    let (q, k, v) = (affine(&xr, &p.query), affine(&xr, &p.key), affine(&xr, &p.value));
    let n = xr.len();
    let d = p.query.weight.ncols();
    let dh = d / p.n_heads;
    let mut ctx = vec![vec![0.0; d]; n];
    for h in 0..p.n_heads {
        for i in 0..n {
            let mut scores = vec![f64::NEG_INFINITY; n];
            for j in 0..n {
                if keep[j] {
                    let mut s = 0.0;
                    for c in h * dh..(h + 1) * dh {
                        s += q[i][c] * k[j][c];
                    }
                    scores[j] = s / (dh as f64).sqrt();
                }
            }
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| if s.is_finite() { (s - m).exp() } else { 0.0 }).collect();
            let z: f64 = e.iter().sum();
            for j in 0..n {
                for c in h * dh..(h + 1) * dh {
                    ctx[i][c] += e[j] / z * v[j][c];
                }
            }
        }
    }
    to_matrix(&affine(&ctx, &p.output))
}

pub fn layer_norm_oracle(x: &Matrix, p: &NormParams) -> Matrix {
    let out: Rows = rows(x)
        .iter()
        .map(|r| {
            let n = r.len() as f64;
            let mean = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            r.iter()
                .enumerate()
                .map(|(j, v)| (v - mean) / (var + 1e-5).sqrt() * p.gain[j] + p.shift[j])
                .collect()
        })
        .collect();
    to_matrix(&out)
}

pub fn gelu_oracle(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

pub fn ffn_oracle(h: &Matrix, p: &FfnParams) -> Matrix {
    let hidden: Rows = affine(&rows(h), &p.expand)
        .into_iter()
        .map(|r| r.into_iter().map(gelu_oracle).collect())
        .collect();
    to_matrix(&affine(&hidden, &p.contract))
}

pub fn layer_oracle(x: &Matrix, base: &BaseLayerParams, adapter: Option<&AdapterParams>, keep: &[bool]) -> Matrix {
    let mut sum = x + &attention_oracle(x, &base.attention, keep);
    if let Some(a) = adapter {
        sum += &attention_oracle(x, &a.attention, keep);
    }
    let h1 = layer_norm_oracle(&sum, &base.norm1);
    layer_norm_oracle(&(&h1 + &ffn_oracle(&h1, &base.ffn)), &base.norm2)
}
