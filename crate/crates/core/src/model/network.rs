use ndarray::{Array3, Axis, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::config::{HeadKind, ModelConfig};
use super::layers::{
    gaussian_linear, layer_backward, layer_forward, AdapterParams, BaseLayerParams, LayerCache,
    INIT_STD,
};
use super::ops::{
    gelu, gelu_grad, sinusoidal_positions, AttentionGrads, Linear, LinearGrads, Matrix,
};
use super::ModelError;
use crate::corpus::IGNORE;
use crate::tokenize::PAD_ID;

const BASE_STREAM: u64 = 0;
const ADAPTER_STREAM: u64 = 1;
const HEAD_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub enum Head {
    Linear(Linear),
    Mlp { hidden: Linear, output: Linear },
}

#[derive(Debug, Clone, PartialEq)]
pub enum HeadGrads {
    Linear(LinearGrads),
    Mlp { hidden: LinearGrads, output: LinearGrads },
}

impl HeadGrads {
    fn zeros_like(head: &Head) -> HeadGrads {
        match head {
            Head::Linear(l) => HeadGrads::Linear(LinearGrads::zeros_like(l)),
            Head::Mlp { hidden, output } => HeadGrads::Mlp {
                hidden: LinearGrads::zeros_like(hidden),
                output: LinearGrads::zeros_like(output),
            },
        }
    }

    fn add_assign(&mut self, other: &HeadGrads) {
        match (self, other) {
            (HeadGrads::Linear(a), HeadGrads::Linear(b)) => a.add_assign(b),
            (HeadGrads::Mlp { hidden: ah, output: ao }, HeadGrads::Mlp { hidden: bh, output: bo }) => {
                ah.add_assign(bh);
                ao.add_assign(bo);
            }
            _ => unreachable!("gradients of one model share a head kind"),
        }
    }
}

/// One encoder layer: frozen base plus optional trainable adapter.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub base: BaseLayerParams,
    pub adapter: Option<AdapterParams>,
}

/// Token-classification encoder.
///
/// Only adapter and head parameters are trainable. Embeddings, attention,
/// feed-forward and normalization parameters are frozen: the optimizer only
/// ever sees [`Model::trainable_slices_mut`].
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub(crate) config: ModelConfig,
    pub(crate) embeddings: Matrix,
    pub(crate) positions: Matrix,
    pub(crate) layers: Vec<Layer>,
    pub(crate) head: Head,
}

/// Padded token ids and labels for a group of sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub ids: Vec<Vec<usize>>,
    pub labels: Vec<Vec<usize>>,
    pub mask: Vec<Vec<bool>>,
}

impl Batch {
    /// Pads `(ids, labels)` pairs to a common length with PAD and IGNORE.
    pub fn from_sequences(seqs: &[(Vec<usize>, Vec<usize>)]) -> Result<Batch, ModelError> {
        let len = seqs.iter().map(|(ids, _)| ids.len()).max().unwrap_or(0);
        let mut batch = Batch { ids: Vec::new(), labels: Vec::new(), mask: Vec::new() };
        for (ids, labels) in seqs {
            if ids.len() != labels.len() {
                return Err(ModelError::ShapeMismatch(format!(
                    "{} ids but {} labels",
                    ids.len(),
                    labels.len()
                )));
            }
            let pad = len - ids.len();
            batch.ids.push(ids.iter().copied().chain(std::iter::repeat_n(PAD_ID, pad)).collect());
            batch.labels.push(labels.iter().copied().chain(std::iter::repeat_n(IGNORE, pad)).collect());
            batch.mask.push((0..len).map(|i| i < ids.len()).collect());
        }
        Ok(batch)
    }

    /// Unlabelled batch, e.g. for inference.
    pub fn from_ids(seqs: &[Vec<usize>]) -> Batch {
        let pairs: Vec<(Vec<usize>, Vec<usize>)> =
            seqs.iter().map(|s| (s.clone(), vec![IGNORE; s.len()])).collect();
        Batch::from_sequences(&pairs).expect("lengths agree by construction")
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn seq_len(&self) -> usize {
        self.ids.first().map_or(0, Vec::len)
    }

    /// Positions that contribute to the loss.
    pub fn n_supervised(&self) -> usize {
        self.labels
            .iter()
            .zip(&self.mask)
            .flat_map(|(l, m)| l.iter().zip(m))
            .filter(|(&l, &m)| m && l != IGNORE)
            .count()
    }
}

#[derive(Debug, Clone)]
struct SequenceTrace {
    layers: Vec<LayerCache>,
    final_hidden: Matrix,
    head_pre: Option<Matrix>,
}

/// Logits of a forward pass plus, when recorded, what the reverse pass needs.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub logits: Array3<f64>,
    traces: Option<Vec<SequenceTrace>>,
}

impl ForwardPass {
    pub fn is_recorded(&self) -> bool {
        self.traces.is_some()
    }
}

/// Gradients of every trainable parameter, in the same layout as the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub adapters: Vec<Option<AttentionGrads>>,
    pub head: HeadGrads,
}

impl Gradients {
    fn zeros_like(model: &Model) -> Gradients {
        Gradients {
            adapters: model
                .layers
                .iter()
                .map(|l| l.adapter.as_ref().map(|a| AttentionGrads::zeros_like(&a.attention)))
                .collect(),
            head: HeadGrads::zeros_like(&model.head),
        }
    }

    fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.adapters.iter_mut().zip(&other.adapters) {
            if let (Some(a), Some(b)) = (a, b) {
                a.add_assign(b);
            }
        }
        self.head.add_assign(&other.head);
    }

    /// Flat views in [`Model::trainable_names`] order.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for g in self.adapters.iter().flatten() {
            for l in [&g.query, &g.key, &g.value, &g.output] {
                out.push(l.weight.as_slice().expect("standard layout"));
                out.push(l.bias.as_slice().expect("standard layout"));
            }
        }
        let head: Vec<&LinearGrads> = match &self.head {
            HeadGrads::Linear(l) => vec![l],
            HeadGrads::Mlp { hidden, output } => vec![hidden, output],
        };
        for l in head {
            out.push(l.weight.as_slice().expect("standard layout"));
            out.push(l.bias.as_slice().expect("standard layout"));
        }
        out
    }
}

/// A named parameter tensor, flattened row-major.
#[derive(Debug)]
pub struct TensorView<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
    pub trainable: bool,
}

impl Model {
    /// Seeded initialization. Base, adapter and head weights come from
    /// independent random streams, so enabling the adapter or swapping the
    /// head never changes the base weights drawn for a seed.
    pub fn init(config: ModelConfig) -> Result<Model, ModelError> {
        config.validate()?;
        let ModelConfig { d_model, n_heads, n_layers, d_ffn, vocab_size, n_tags, max_seq_len, .. } =
            config;
        let stream = |s| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(s);
            rng
        };
        let mut base_rng = stream(BASE_STREAM);
        let mut adapter_rng = stream(ADAPTER_STREAM);
        let mut head_rng = stream(HEAD_STREAM);

        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let embeddings =
            Matrix::from_shape_simple_fn((vocab_size, d_model), || normal.sample(&mut base_rng));
        let layers = (0..n_layers)
            .map(|_| Layer {
                base: BaseLayerParams::init(&mut base_rng, d_model, n_heads, d_ffn),
                adapter: config
                    .adapter_enabled
                    .then(|| AdapterParams::zero_init(&mut adapter_rng, d_model, n_heads)),
            })
            .collect();
        let head = match config.head_kind {
            HeadKind::Linear => Head::Linear(gaussian_linear(&mut head_rng, d_model, n_tags)),
            HeadKind::Mlp => Head::Mlp {
                hidden: gaussian_linear(&mut head_rng, d_model, d_model),
                output: gaussian_linear(&mut head_rng, d_model, n_tags),
            },
        };
        Ok(Model {
            config,
            embeddings,
            positions: sinusoidal_positions(max_seq_len, d_model),
            layers,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn head(&self) -> &Head {
        &self.head
    }

    pub fn embeddings(&self) -> &Matrix {
        &self.embeddings
    }

    /// Copy of this model with the adapters removed; base and head are shared.
    pub fn without_adapters(&self) -> Model {
        let mut m = self.clone();
        m.config.adapter_enabled = false;
        for l in &mut m.layers {
            l.adapter = None;
        }
        m
    }

    fn check_batch(&self, batch: &Batch) -> Result<(), ModelError> {
        let len = batch.seq_len();
        if len > self.config.max_seq_len {
            return Err(ModelError::SequenceTooLong { len, max: self.config.max_seq_len });
        }
        for ((ids, labels), mask) in batch.ids.iter().zip(&batch.labels).zip(&batch.mask) {
            if ids.len() != len || labels.len() != len || mask.len() != len {
                return Err(ModelError::ShapeMismatch("ragged batch".into()));
            }
            if let Some(&id) = ids.iter().find(|&&id| id >= self.config.vocab_size) {
                return Err(ModelError::TokenOutOfRange { id, vocab_size: self.config.vocab_size });
            }
            if let Some(&l) = labels.iter().find(|&&l| l != IGNORE && l >= self.config.n_tags) {
                return Err(ModelError::LabelOutOfRange { label: l, n_tags: self.config.n_tags });
            }
        }
        if batch.labels.len() != batch.len() || batch.mask.len() != batch.len() {
            return Err(ModelError::ShapeMismatch("batch fields disagree in length".into()));
        }
        Ok(())
    }

    fn embed(&self, ids: &[usize]) -> Matrix {
        // Token embeddings are scaled by sqrt(d_model) so that word identity
        // is not swamped by the unit-amplitude position signal.
        let scale = (self.config.d_model as f64).sqrt();
        let mut x = self.positions.slice(ndarray::s![..ids.len(), ..]).to_owned();
        for (i, &id) in ids.iter().enumerate() {
            let mut row = x.row_mut(i);
            row.scaled_add(scale, &self.embeddings.row(id));
        }
        x
    }

    fn head_forward(&self, h: &Matrix) -> (Matrix, Option<Matrix>) {
        match &self.head {
            Head::Linear(l) => (l.forward(h), None),
            Head::Mlp { hidden, output } => {
                let pre = hidden.forward(h);
                (output.forward(&pre.mapv(gelu)), Some(pre))
            }
        }
    }

    fn sequence_forward(&self, ids: &[usize], keep: &[bool], record: bool) -> (Matrix, Option<SequenceTrace>) {
        let mut x = self.embed(ids);
        let mut caches = Vec::with_capacity(if record { self.layers.len() } else { 0 });
        for layer in &self.layers {
            let (h, cache) = layer_forward(&x, &layer.base, layer.adapter.as_ref(), keep);
            if record {
                caches.push(cache);
            }
            x = h;
        }
        let (logits, head_pre) = self.head_forward(&x);
        let trace = record.then(|| SequenceTrace { layers: caches, final_hidden: x, head_pre });
        (logits, trace)
    }

    /// Forward pass. Padded positions get logits too; they are excluded later.
    pub fn forward(&self, batch: &Batch) -> Result<Array3<f64>, ModelError> {
        Ok(self.forward_pass(batch, false)?.logits)
    }

    /// Forward pass that keeps intermediate activations for [`Model::backward`].
    pub fn forward_recorded(&self, batch: &Batch) -> Result<ForwardPass, ModelError> {
        self.forward_pass(batch, true)
    }

    pub fn forward_pass(&self, batch: &Batch, record: bool) -> Result<ForwardPass, ModelError> {
        self.check_batch(batch)?;
        let results: Vec<(Matrix, Option<SequenceTrace>)> = batch
            .ids
            .par_iter()
            .zip(&batch.mask)
            .map(|(ids, keep)| self.sequence_forward(ids, keep, record))
            .collect();
        let mut logits = Array3::zeros((batch.len(), batch.seq_len(), self.config.n_tags));
        let mut traces = record.then(Vec::new);
        for (b, (l, trace)) in results.into_iter().enumerate() {
            logits.index_axis_mut(Axis(0), b).assign(&l);
            if let (Some(traces), Some(t)) = (traces.as_mut(), trace) {
                traces.push(t);
            }
        }
        Ok(ForwardPass { logits, traces })
    }

    /// Mean cross-entropy of a batch and the gradients of all trainable parameters.
    pub fn loss_and_gradients(&self, batch: &Batch) -> Result<(f64, Gradients), ModelError> {
        let pass = self.forward_recorded(batch)?;
        let loss = cross_entropy(&pass.logits, batch)?;
        let grads = self.backward(&pass, batch)?;
        Ok((loss, grads))
    }

    /// Reverse pass for the mean cross-entropy of `batch`.
    pub fn backward(&self, pass: &ForwardPass, batch: &Batch) -> Result<Gradients, ModelError> {
        let traces = pass.traces.as_ref().ok_or(ModelError::NoGraph)?;
        if traces.len() != batch.len() {
            return Err(ModelError::ShapeMismatch("forward pass was run on a different batch".into()));
        }
        let n = batch.n_supervised();
        if n == 0 {
            return Err(ModelError::AllIgnored);
        }
        let scale = 1.0 / n as f64;
        let per_sequence: Vec<Gradients> = traces
            .par_iter()
            .enumerate()
            .map(|(b, trace)| {
                let logits = pass.logits.index_axis(Axis(0), b).to_owned();
                let dlogits = cross_entropy_grad(&logits, &batch.labels[b], &batch.mask[b], scale);
                self.sequence_backward(trace, &dlogits)
            })
            .collect();
        let mut total = Gradients::zeros_like(self);
        for g in &per_sequence {
            total.add_assign(g);
        }
        Ok(total)
    }

    fn sequence_backward(&self, trace: &SequenceTrace, dlogits: &Matrix) -> Gradients {
        let mut grads = Gradients::zeros_like(self);
        let dhidden = match (&self.head, &mut grads.head) {
            (Head::Linear(l), HeadGrads::Linear(g)) => {
                *g = Linear::backward_params(&trace.final_hidden, dlogits);
                l.backward_input(dlogits)
            }
            (Head::Mlp { hidden, output }, HeadGrads::Mlp { hidden: gh, output: go }) => {
                let pre = trace.head_pre.as_ref().expect("mlp head records its pre-activation");
                *go = Linear::backward_params(&pre.mapv(gelu), dlogits);
                let mut dact = output.backward_input(dlogits);
                Zip::from(&mut dact).and(pre).for_each(|g, &u| *g *= gelu_grad(u));
                *gh = Linear::backward_params(&trace.final_hidden, &dact);
                hidden.backward_input(&dact)
            }
            _ => unreachable!("gradient layout follows the head"),
        };
        let Some(lowest) = self.layers.iter().position(|l| l.adapter.is_some()) else {
            return grads;
        };
        let mut d = dhidden;
        for i in (lowest..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let (dx, g) = layer_backward(&layer.base, layer.adapter.as_ref(), &trace.layers[i], &d, i > lowest);
            grads.adapters[i] = g;
            match dx {
                Some(dx) => d = dx,
                None => break,
            }
        }
        grads
    }

    /// Names of trainable tensors, in optimizer order.
    pub fn trainable_names(&self) -> Vec<String> {
        self.tensors().into_iter().filter(|t| t.trainable).map(|t| t.name).collect()
    }

    /// Mutable flat views of the trainable tensors: adapters (by layer), then the head.
    pub fn trainable_slices_mut(&mut self) -> Vec<&mut [f64]> {
        trainable_slices(&mut self.layers, &mut self.head)
    }

    pub fn n_trainable(&self) -> usize {
        self.tensors().iter().filter(|t| t.trainable).map(|t| t.data.len()).sum()
    }

    /// Every parameter tensor with its name and trainable flag.
    pub fn tensors(&self) -> Vec<TensorView<'_>> {
        let mut out = Vec::new();
        fn view<'a>(name: String, shape: &[usize], data: &'a [f64], trainable: bool) -> TensorView<'a> {
            TensorView { name, shape: shape.to_vec(), data, trainable }
        }
        fn linear<'a>(out: &mut Vec<TensorView<'a>>, prefix: &str, l: &'a Linear, trainable: bool) {
            out.push(view(format!("{prefix}.weight"), l.weight.shape(), l.weight.as_slice().unwrap(), trainable));
            out.push(view(format!("{prefix}.bias"), l.bias.shape(), l.bias.as_slice().unwrap(), trainable));
        }
        out.push(view("embeddings".into(), self.embeddings.shape(), self.embeddings.as_slice().unwrap(), false));
        for (i, layer) in self.layers.iter().enumerate() {
            let b = &layer.base;
            let p = format!("layers.{i}");
            linear(&mut out, &format!("{p}.attention.query"), &b.attention.query, false);
            linear(&mut out, &format!("{p}.attention.key"), &b.attention.key, false);
            linear(&mut out, &format!("{p}.attention.value"), &b.attention.value, false);
            linear(&mut out, &format!("{p}.attention.output"), &b.attention.output, false);
            out.push(view(format!("{p}.norm1.gain"), b.norm1.gain.shape(), b.norm1.gain.as_slice().unwrap(), false));
            out.push(view(format!("{p}.norm1.shift"), b.norm1.shift.shape(), b.norm1.shift.as_slice().unwrap(), false));
            linear(&mut out, &format!("{p}.ffn.expand"), &b.ffn.expand, false);
            linear(&mut out, &format!("{p}.ffn.contract"), &b.ffn.contract, false);
            out.push(view(format!("{p}.norm2.gain"), b.norm2.gain.shape(), b.norm2.gain.as_slice().unwrap(), false));
            out.push(view(format!("{p}.norm2.shift"), b.norm2.shift.shape(), b.norm2.shift.as_slice().unwrap(), false));
            if let Some(a) = &layer.adapter {
                let p = format!("{p}.adapter");
                linear(&mut out, &format!("{p}.query"), &a.attention.query, true);
                linear(&mut out, &format!("{p}.key"), &a.attention.key, true);
                linear(&mut out, &format!("{p}.value"), &a.attention.value, true);
                linear(&mut out, &format!("{p}.output"), &a.attention.output, true);
            }
        }
        match &self.head {
            Head::Linear(l) => linear(&mut out, "head", l, true),
            Head::Mlp { hidden, output } => {
                linear(&mut out, "head.hidden", hidden, true);
                linear(&mut out, "head.output", output, true);
            }
        }
        out
    }

    /// Mutable access to every tensor by name, in [`Model::tensors`] order.
    pub(crate) fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let names: Vec<String> = self.tensors().into_iter().map(|t| t.name).collect();
        let mut slices: Vec<&mut [f64]> = Vec::new();
        slices.push(self.embeddings.as_slice_mut().unwrap());
        for layer in &mut self.layers {
            let b = &mut layer.base;
            for l in [&mut b.attention.query, &mut b.attention.key, &mut b.attention.value, &mut b.attention.output] {
                slices.push(l.weight.as_slice_mut().unwrap());
                slices.push(l.bias.as_slice_mut().unwrap());
            }
            slices.push(b.norm1.gain.as_slice_mut().unwrap());
            slices.push(b.norm1.shift.as_slice_mut().unwrap());
            for l in [&mut b.ffn.expand, &mut b.ffn.contract] {
                slices.push(l.weight.as_slice_mut().unwrap());
                slices.push(l.bias.as_slice_mut().unwrap());
            }
            slices.push(b.norm2.gain.as_slice_mut().unwrap());
            slices.push(b.norm2.shift.as_slice_mut().unwrap());
            if let Some(a) = &mut layer.adapter {
                slices.extend(adapter_slices(a));
            }
        }
        slices.extend(head_slices(&mut self.head));
        names.into_iter().zip(slices).collect()
    }
}

fn trainable_slices<'a>(layers: &'a mut [Layer], head: &'a mut Head) -> Vec<&'a mut [f64]> {
    let mut out: Vec<&mut [f64]> =
        layers.iter_mut().filter_map(|l| l.adapter.as_mut()).flat_map(adapter_slices).collect();
    out.extend(head_slices(head));
    out
}

fn linear_slices(l: &mut Linear) -> [&mut [f64]; 2] {
    [
        l.weight.as_slice_mut().expect("standard layout"),
        l.bias.as_slice_mut().expect("standard layout"),
    ]
}

fn adapter_slices(a: &mut AdapterParams) -> Vec<&mut [f64]> {
    let att = &mut a.attention;
    [&mut att.query, &mut att.key, &mut att.value, &mut att.output]
        .into_iter()
        .flat_map(linear_slices)
        .collect()
}

fn head_slices(head: &mut Head) -> Vec<&mut [f64]> {
    match head {
        Head::Linear(l) => linear_slices(l).into(),
        Head::Mlp { hidden, output } => [hidden, output].into_iter().flat_map(linear_slices).collect(),
    }
}

/// Mean of `-log softmax(logits)[label]` over supervised, unpadded positions.
pub fn cross_entropy(logits: &Array3<f64>, batch: &Batch) -> Result<f64, ModelError> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (b, (labels, mask)) in batch.labels.iter().zip(&batch.mask).enumerate() {
        for (s, (&label, &real)) in labels.iter().zip(mask).enumerate() {
            if !real || label == IGNORE {
                continue;
            }
            let row = logits.slice(ndarray::s![b, s, ..]);
            let max = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[label];
            count += 1;
        }
    }
    if count == 0 {
        return Err(ModelError::AllIgnored);
    }
    Ok(total / count as f64)
}

fn cross_entropy_grad(logits: &Matrix, labels: &[usize], mask: &[bool], scale: f64) -> Matrix {
    let mut d = Matrix::zeros(logits.raw_dim());
    for (s, (&label, &real)) in labels.iter().zip(mask).enumerate() {
        if !real || label == IGNORE {
            continue;
        }
        let row = logits.row(s);
        let max = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        for (k, e) in exps.iter().enumerate() {
            d[[s, k]] = scale * (e / total - if k == label { 1.0 } else { 0.0 });
        }
    }
    d
}
