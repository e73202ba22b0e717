//! Encoder layer, standard and adapter-augmented.
//!
//! Standard layer:
//!
//! ```text
//! H_attn = MHA(X)
//! H_add1 = LayerNorm(X + H_attn)
//! H      = LayerNorm(H_add1 + FFN(H_add1))
//! ```
//!
//! The modified layer adds a second attention path whose output projection
//! starts at zero and sums it with the frozen one before the first residual:
//! `H_add1 = LayerNorm(X + H_attn + H_adapter)`. With the adapter at its
//! initial state the two layers compute the same values bit for bit.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::ops::{
    attention_backward, attention_forward, ffn_backward_input, ffn_forward, layer_norm,
    layer_norm_backward, AttentionCache, AttentionGrads, AttentionParams, FfnCache, FfnParams,
    Linear, Matrix, NormCache, NormParams,
};
use super::ModelError;

pub const INIT_STD: f64 = 0.02;

pub(crate) fn gaussian_linear<R: Rng>(rng: &mut R, d_in: usize, d_out: usize) -> Linear {
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    Linear {
        weight: Matrix::from_shape_simple_fn((d_in, d_out), || normal.sample(rng)),
        bias: ndarray::Array1::zeros(d_out),
    }
}

/// Frozen parameters of one encoder layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseLayerParams {
    pub attention: AttentionParams,
    pub norm1: NormParams,
    pub ffn: FfnParams,
    pub norm2: NormParams,
}

impl BaseLayerParams {
    pub fn init<R: Rng>(rng: &mut R, d_model: usize, n_heads: usize, d_ffn: usize) -> Self {
        BaseLayerParams {
            attention: AttentionParams {
                n_heads,
                query: gaussian_linear(rng, d_model, d_model),
                key: gaussian_linear(rng, d_model, d_model),
                value: gaussian_linear(rng, d_model, d_model),
                output: gaussian_linear(rng, d_model, d_model),
            },
            norm1: NormParams::identity(d_model),
            ffn: FfnParams {
                expand: gaussian_linear(rng, d_model, d_ffn),
                contract: gaussian_linear(rng, d_ffn, d_model),
            },
            norm2: NormParams::identity(d_model),
        }
    }
}

/// Trainable adapter attention. Query/key/value projections start random,
/// the output projection and all biases start at exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterParams {
    pub attention: AttentionParams,
}

impl AdapterParams {
    pub fn zero_init<R: Rng>(rng: &mut R, d_model: usize, n_heads: usize) -> Self {
        AdapterParams {
            attention: AttentionParams {
                n_heads,
                query: gaussian_linear(rng, d_model, d_model),
                key: gaussian_linear(rng, d_model, d_model),
                value: gaussian_linear(rng, d_model, d_model),
                output: Linear::zeros(d_model, d_model),
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerCache {
    base: AttentionCache,
    adapter: Option<AttentionCache>,
    norm1: NormCache,
    ffn: FfnCache,
    norm2: NormCache,
}

pub(crate) fn layer_forward(
    x: &Matrix,
    base: &BaseLayerParams,
    adapter: Option<&AdapterParams>,
    keep: &[bool],
) -> (Matrix, LayerCache) {
    let (mut combined, base_cache) = attention_forward(&base.attention, x, keep);
    let adapter_cache = adapter.map(|a| {
        let (h, cache) = attention_forward(&a.attention, x, keep);
        combined += &h;
        cache
    });
    let (h_add1, norm1) = layer_norm(&(x + &combined), &base.norm1);
    let (h_ffn, ffn) = ffn_forward(&base.ffn, &h_add1);
    let (h, norm2) = layer_norm(&(&h_add1 + &h_ffn), &base.norm2);
    (h, LayerCache { base: base_cache, adapter: adapter_cache, norm1, ffn, norm2 })
}

/// Returns the input gradient (when asked for) and the adapter gradients.
pub(crate) fn layer_backward(
    base: &BaseLayerParams,
    adapter: Option<&AdapterParams>,
    cache: &LayerCache,
    dout: &Matrix,
    want_input: bool,
) -> (Option<Matrix>, Option<AttentionGrads>) {
    let dsum2 = layer_norm_backward(&cache.norm2, &base.norm2, dout);
    let dh_add1 = &dsum2 + &ffn_backward_input(&base.ffn, &cache.ffn, &dsum2);
    let dsum1 = layer_norm_backward(&cache.norm1, &base.norm1, &dh_add1);
    let adapter_grads = match (adapter, &cache.adapter) {
        (Some(a), Some(ac)) => Some(attention_backward(&a.attention, ac, &dsum1, true)),
        _ => None,
    };
    if !want_input {
        return (None, adapter_grads.and_then(|(_, g)| g));
    }
    let (dx_base, _) = attention_backward(&base.attention, &cache.base, &dsum1, false);
    let mut dx = dsum1 + dx_base;
    let grads = adapter_grads.and_then(|(dx_adapter, g)| {
        dx += &dx_adapter;
        g
    });
    (Some(dx), grads)
}

fn check_rows(x: &Matrix, d_model: usize, keep: Option<&[bool]>) -> Result<(), ModelError> {
    if x.ncols() != d_model {
        return Err(ModelError::ShapeMismatch(format!(
            "input has {} features, parameters expect {d_model}",
            x.ncols()
        )));
    }
    if let Some(keep) = keep {
        if keep.len() != x.nrows() {
            return Err(ModelError::ShapeMismatch(format!(
                "mask covers {} positions, input has {}",
                keep.len(),
                x.nrows()
            )));
        }
    }
    Ok(())
}

fn check_attention(p: &AttentionParams) -> Result<(), ModelError> {
    let d = p.d_model();
    let ok = p.n_heads > 0
        && d.is_multiple_of(p.n_heads)
        && [&p.query, &p.key, &p.value, &p.output]
            .iter()
            .all(|l| l.d_in() == d && l.d_out() == d && l.bias.len() == d);
    if ok {
        Ok(())
    } else {
        Err(ModelError::ShapeMismatch("inconsistent attention parameters".into()))
    }
}

/// Multi-head self-attention over the rows of `x`.
pub fn multi_head_attention(
    x: &Matrix,
    p: &AttentionParams,
    keep: &[bool],
) -> Result<Matrix, ModelError> {
    check_attention(p)?;
    check_rows(x, p.d_model(), Some(keep))?;
    Ok(attention_forward(p, x, keep).0)
}

/// `LayerNorm(x + h)`.
pub fn add_norm(x: &Matrix, h: &Matrix, p: &NormParams) -> Result<Matrix, ModelError> {
    if x.raw_dim() != h.raw_dim() {
        return Err(ModelError::ShapeMismatch(format!(
            "residual shapes differ: {:?} vs {:?}",
            x.shape(),
            h.shape()
        )));
    }
    check_rows(x, p.gain.len(), None)?;
    Ok(layer_norm(&(x + h), p).0)
}

pub fn ffn(h: &Matrix, p: &FfnParams) -> Result<Matrix, ModelError> {
    check_rows(h, p.expand.d_in(), None)?;
    if p.contract.d_in() != p.expand.d_out() || p.contract.d_out() != p.expand.d_in() {
        return Err(ModelError::ShapeMismatch("inconsistent feed-forward parameters".into()));
    }
    Ok(ffn_forward(p, h).0)
}

pub fn standard_layer_forward(
    x: &Matrix,
    base: &BaseLayerParams,
    keep: &[bool],
) -> Result<Matrix, ModelError> {
    check_attention(&base.attention)?;
    check_rows(x, base.attention.d_model(), Some(keep))?;
    Ok(layer_forward(x, base, None, keep).0)
}

pub fn adapter_attention(
    x: &Matrix,
    adapter: &AdapterParams,
    keep: &[bool],
) -> Result<Matrix, ModelError> {
    multi_head_attention(x, &adapter.attention, keep)
}

pub fn modified_layer_forward(
    x: &Matrix,
    base: &BaseLayerParams,
    adapter: &AdapterParams,
    keep: &[bool],
) -> Result<Matrix, ModelError> {
    check_attention(&base.attention)?;
    check_attention(&adapter.attention)?;
    if adapter.attention.d_model() != base.attention.d_model() {
        return Err(ModelError::ShapeMismatch("adapter width differs from layer width".into()));
    }
    check_rows(x, base.attention.d_model(), Some(keep))?;
    Ok(layer_forward(x, base, Some(adapter), keep).0)
}
