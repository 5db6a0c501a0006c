use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::conv::{max_pool_time, Conv1dBank};
use crate::rng::SeededRng;
use crate::{Error, Result};

/// Padding token. Its input row is all zeros and it may only trail a sequence.
pub const PAD: u32 = u32::MAX;

/// How event indices become input rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingInputMode {
    /// Pretrained table, frozen.
    W2vFixed,
    /// Pretrained table, trained with the network.
    W2vFinetune,
    /// Random table, trained with the network.
    Rand,
    /// One-hot input times a trainable `V × D` projection, done as a row lookup.
    Raw,
    /// Frozen and trainable copies of the pretrained table side by side (`2D` columns).
    Both,
}

impl EmbeddingInputMode {
    pub const ALL: [EmbeddingInputMode; 5] = [
        EmbeddingInputMode::W2vFixed,
        EmbeddingInputMode::W2vFinetune,
        EmbeddingInputMode::Rand,
        EmbeddingInputMode::Raw,
        EmbeddingInputMode::Both,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EmbeddingInputMode::W2vFixed => "w2v-fixed",
            EmbeddingInputMode::W2vFinetune => "w2v-finetune",
            EmbeddingInputMode::Rand => "rand",
            EmbeddingInputMode::Raw => "raw",
            EmbeddingInputMode::Both => "both",
        }
    }

    pub fn needs_pretrained(self) -> bool {
        matches!(self, EmbeddingInputMode::W2vFixed | EmbeddingInputMode::W2vFinetune | EmbeddingInputMode::Both)
    }

    pub fn table_trainable(self) -> bool {
        self != EmbeddingInputMode::W2vFixed
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            EmbeddingInputMode::W2vFixed => 0,
            EmbeddingInputMode::W2vFinetune => 1,
            EmbeddingInputMode::Rand => 2,
            EmbeddingInputMode::Raw => 3,
            EmbeddingInputMode::Both => 4,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }
}

/// Architecture and initialization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_mode: EmbeddingInputMode,
    /// Table width for `Rand` and `Raw`; pretrained modes take it from the table.
    pub dim: usize,
    pub filter_sizes: Vec<usize>,
    pub filter_count: usize,
    /// `Rand` tables start uniform in `±rand_scale`.
    pub rand_scale: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_mode: EmbeddingInputMode::W2vFinetune,
            dim: 200,
            filter_sizes: vec![3, 4, 5],
            filter_count: 100,
            rand_scale: 0.25,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.filter_sizes.is_empty() || self.filter_sizes.contains(&0) {
            return Err(Error::config("filter sizes must be a non-empty list of positive widths"));
        }
        if self.filter_count == 0 {
            return Err(Error::config("filter_count must be at least 1"));
        }
        if !self.input_mode.needs_pretrained() && self.dim == 0 {
            return Err(Error::config("dim must be at least 1"));
        }
        if !(self.rand_scale.is_finite() && self.rand_scale > 0.0) {
            return Err(Error::config("rand_scale must be positive"));
        }
        Ok(())
    }
}

/// One convolutional layer of several filter widths, tanh, max-over-time
/// pooling and a two-way softmax head.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    pub input_mode: EmbeddingInputMode,
    /// The trainable table, or the frozen one in `W2vFixed` mode.
    pub table: Array2<f64>,
    /// `Both` mode only: the frozen copy, feeding the first `D` input columns.
    pub frozen: Option<Array2<f64>>,
    pub banks: Vec<Conv1dBank>,
    /// `ΣK × 2`, row-major.
    pub dense_weights: Vec<f64>,
    pub dense_bias: [f64; 2],
}

/// Values from one forward pass that backward needs.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Tokens with trailing pads removed.
    pub tokens: Vec<u32>,
    /// Input rows, `padded_len × D_in`.
    pub x: Vec<f64>,
    /// Pooled tanh activations, length `ΣK`.
    pub pooled: Vec<f64>,
    /// Window start that won the pooling, per pooled unit.
    pub argmax: Vec<usize>,
    pub logits: [f64; 2],
    pub probs: [f64; 2],
}

impl ForwardCache {
    /// Cross-entropy of `label` computed from the logits.
    pub fn loss(&self, label: u8) -> f64 {
        let m = self.logits[0].max(self.logits[1]);
        let lse = m + ((self.logits[0] - m).exp() + (self.logits[1] - m).exp()).ln();
        lse - self.logits[label as usize]
    }
}

/// Gradient buffers shaped like the trainable parameters of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    /// Absent when the table is frozen.
    pub table: Option<Array2<f64>>,
    pub banks: Vec<Conv1dBank>,
    pub dense_weights: Vec<f64>,
    pub dense_bias: [f64; 2],
}

impl Gradients {
    pub fn zeros(model: &CnnModel) -> Self {
        Gradients {
            table: model.input_mode.table_trainable().then(|| Array2::zeros(model.table.dim())),
            banks: model.banks.iter().map(|b| Conv1dBank::zeros(b.filter_size, b.filter_count, b.input_dim)).collect(),
            dense_weights: vec![0.0; model.dense_weights.len()],
            dense_bias: [0.0; 2],
        }
    }

    pub fn clear(&mut self) {
        if let Some(t) = self.table.as_mut() {
            t.fill(0.0);
        }
        for b in &mut self.banks {
            b.weights.fill(0.0);
            b.bias.fill(0.0);
        }
        self.dense_weights.fill(0.0);
        self.dense_bias = [0.0; 2];
    }

    /// Same order as [`CnnModel::param_groups_mut`].
    pub fn groups(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        if let Some(t) = &self.table {
            out.push(t.as_slice().expect("standard layout"));
        }
        for b in &self.banks {
            out.push(&b.weights);
            out.push(&b.bias);
        }
        out.push(&self.dense_weights);
        out.push(&self.dense_bias);
        out
    }

    pub fn norm(&self) -> f64 {
        self.groups().iter().flat_map(|g| g.iter()).map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// Padded sequences with labels and per-example weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// Every row has the batch's maximum length; shorter ones end in [`PAD`].
    pub tokens: Vec<Vec<u32>>,
    pub labels: Vec<u8>,
    pub weights: Vec<f64>,
}

impl Batch {
    pub fn new<S: AsRef<[u32]>>(seqs: &[S], labels: &[u8]) -> Result<Self> {
        if seqs.is_empty() || seqs.len() != labels.len() {
            return Err(Error::data(format!("batch of {} sequences with {} labels", seqs.len(), labels.len())));
        }
        if let Some(l) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::data(format!("label {l} is not 0/1")));
        }
        let width = seqs.iter().map(|s| s.as_ref().len()).max().unwrap_or(0);
        let tokens = seqs
            .iter()
            .map(|s| {
                let mut row = s.as_ref().to_vec();
                row.resize(width, PAD);
                row
            })
            .collect();
        Ok(Batch { tokens, labels: labels.to_vec(), weights: vec![1.0; seqs.len()] })
    }

    pub fn with_weights(mut self, weights: &[f64]) -> Result<Self> {
        if weights.len() != self.labels.len() || weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::data("example weights must be finite, non-negative and one per example"));
        }
        if weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::data("example weights sum to zero"));
        }
        self.weights = weights.to_vec();
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// True at real positions of example `i`, false at padding.
    pub fn mask(&self, i: usize) -> Vec<bool> {
        self.tokens[i].iter().map(|&t| t != PAD).collect()
    }
}

fn row(a: &Array2<f64>, i: usize) -> &[f64] {
    let d = a.ncols();
    &a.as_slice().expect("standard layout")[i * d..(i + 1) * d]
}

fn standard(a: &Array2<f64>) -> Array2<f64> {
    a.as_standard_layout().into_owned()
}

impl CnnModel {
    /// `pretrained` is required for the W2v modes and `Both`, ignored otherwise.
    pub fn new(config: &ModelConfig, vocab_size: usize, pretrained: Option<&Array2<f64>>) -> Result<Self> {
        config.validate()?;
        if vocab_size == 0 {
            return Err(Error::config("vocabulary is empty"));
        }
        let mode = config.input_mode;
        let mut rng = SeededRng::new(config.seed);
        let (table, frozen) = if mode.needs_pretrained() {
            let p = pretrained.ok_or_else(|| Error::config(format!("input mode {} needs pretrained embeddings", mode.name())))?;
            if p.nrows() != vocab_size || p.ncols() == 0 {
                return Err(Error::config(format!(
                    "pretrained table is {}x{}, vocabulary has {vocab_size} codes",
                    p.nrows(),
                    p.ncols()
                )));
            }
            let frozen = (mode == EmbeddingInputMode::Both).then(|| standard(p));
            (standard(p), frozen)
        } else {
            let scale = match mode {
                EmbeddingInputMode::Rand => config.rand_scale,
                _ => (6.0 / (vocab_size + config.dim) as f64).sqrt(),
            };
            (Array2::from_shape_simple_fn((vocab_size, config.dim), || rng.uniform_range(-scale, scale)), None)
        };
        let input_dim = table.ncols() * if frozen.is_some() { 2 } else { 1 };
        let banks: Vec<Conv1dBank> =
            config.filter_sizes.iter().map(|&f| Conv1dBank::glorot(f, config.filter_count, input_dim, &mut rng)).collect();
        let pooled = config.filter_count * banks.len();
        let limit = (6.0 / (pooled + 2) as f64).sqrt();
        let dense_weights = (0..pooled * 2).map(|_| rng.uniform_range(-limit, limit)).collect();
        Ok(CnnModel { input_mode: mode, table, frozen, banks, dense_weights, dense_bias: [0.0; 2] })
    }

    pub fn vocab_size(&self) -> usize {
        self.table.nrows()
    }

    /// Width of one table.
    pub fn dim(&self) -> usize {
        self.table.ncols()
    }

    /// Width of an input row: `2D` in `Both` mode, `D` otherwise.
    pub fn input_dim(&self) -> usize {
        self.dim() * if self.frozen.is_some() { 2 } else { 1 }
    }

    pub fn max_filter(&self) -> usize {
        self.banks.iter().map(|b| b.filter_size).max().unwrap_or(1)
    }

    /// Length of the pooled feature vector.
    pub fn pooled_width(&self) -> usize {
        self.banks.iter().map(|b| b.filter_count).sum()
    }

    pub fn parameter_count(&self) -> usize {
        self.param_groups().iter().map(|g| g.len()).sum()
    }

    /// Names of the trainable groups, in [`Self::param_groups_mut`] order.
    pub fn group_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.input_mode.table_trainable() {
            out.push("embedding".to_string());
        }
        for b in &self.banks {
            out.push(format!("conv{}.weight", b.filter_size));
            out.push(format!("conv{}.bias", b.filter_size));
        }
        out.push("dense.weight".to_string());
        out.push("dense.bias".to_string());
        out
    }

    pub fn param_groups(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        if self.input_mode.table_trainable() {
            out.push(self.table.as_slice().expect("standard layout"));
        }
        for b in &self.banks {
            out.push(&b.weights);
            out.push(&b.bias);
        }
        out.push(&self.dense_weights);
        out.push(&self.dense_bias);
        out
    }

    /// Trainable parameters as flat slices. Frozen tables are not included.
    pub fn param_groups_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        if self.input_mode.table_trainable() {
            out.push(self.table.as_slice_mut().expect("standard layout"));
        }
        for b in &mut self.banks {
            out.push(&mut b.weights);
            out.push(&mut b.bias);
        }
        out.push(&mut self.dense_weights);
        out.push(&mut self.dense_bias);
        out
    }

    /// Input rows for a sequence that may end in pads, padded with zero rows
    /// up to the widest filter.
    fn encode(&self, tokens: &[u32]) -> Result<(Vec<u32>, Vec<f64>, usize)> {
        let real = tokens.iter().position(|&t| t == PAD).unwrap_or(tokens.len());
        if real == 0 {
            return Err(Error::data("cannot score an empty sequence"));
        }
        if tokens[real..].iter().any(|&t| t != PAD) {
            return Err(Error::data("pad tokens must trail the sequence"));
        }
        let v = self.vocab_size();
        if let Some(bad) = tokens[..real].iter().find(|&&t| t as usize >= v) {
            return Err(Error::data(format!("index {bad} outside vocabulary of {v}")));
        }
        let padded = tokens.len().max(self.max_filter());
        let (d, din) = (self.dim(), self.input_dim());
        let mut x = vec![0.0; padded * din];
        for (t, &tok) in tokens[..real].iter().enumerate() {
            let dst = &mut x[t * din..(t + 1) * din];
            match &self.frozen {
                Some(fz) => {
                    dst[..d].copy_from_slice(row(fz, tok as usize));
                    dst[d..].copy_from_slice(row(&self.table, tok as usize));
                }
                None => dst.copy_from_slice(row(&self.table, tok as usize)),
            }
        }
        Ok((tokens[..real].to_vec(), x, padded))
    }

    pub fn forward_cached(&self, tokens: &[u32]) -> Result<ForwardCache> {
        let (tokens, x, padded) = self.encode(tokens)?;
        // A window is pooled when it lies inside the real events, or inside
        // the minimal zero-padded input for sequences shorter than a filter.
        let effective = tokens.len().max(self.max_filter());
        let mut pooled = Vec::with_capacity(self.pooled_width());
        let mut argmax = Vec::with_capacity(self.pooled_width());
        for bank in &self.banks {
            let (f, k) = (bank.filter_size, bank.filter_count);
            let positions = padded - f + 1;
            let valid = effective - f + 1;
            let mut y = vec![0.0; positions * k];
            let mut mask = vec![false; positions];
            for t in 0..valid {
                let out = &mut y[t * k..(t + 1) * k];
                bank.window(&x, t, out);
                out.iter_mut().for_each(|v| *v = v.tanh());
                mask[t] = true;
            }
            let (p, a) = max_pool_time(&y, k, &mask)?;
            pooled.extend(p);
            argmax.extend(a);
        }
        let mut logits = self.dense_bias;
        for (h, w) in pooled.iter().zip(self.dense_weights.chunks_exact(2)) {
            logits[0] += h * w[0];
            logits[1] += h * w[1];
        }
        let m = logits[0].max(logits[1]);
        let e = [(logits[0] - m).exp(), (logits[1] - m).exp()];
        let s = e[0] + e[1];
        Ok(ForwardCache { tokens, x, pooled, argmax, logits, probs: [e[0] / s, e[1] / s] })
    }

    /// Class probabilities `[p(0), p(1)]`.
    pub fn forward(&self, tokens: &[u32]) -> Result<[f64; 2]> {
        Ok(self.forward_cached(tokens)?.probs)
    }

    /// Adds `scale * dL/dθ` of one example's cross-entropy to `grads`.
    pub fn accumulate(&self, cache: &ForwardCache, label: u8, scale: f64, grads: &mut Gradients) {
        let mut dz = [cache.probs[0] * scale, cache.probs[1] * scale];
        dz[label as usize] -= scale;
        grads.dense_bias[0] += dz[0];
        grads.dense_bias[1] += dz[1];
        for (h, g) in cache.pooled.iter().zip(grads.dense_weights.chunks_exact_mut(2)) {
            g[0] += h * dz[0];
            g[1] += h * dz[1];
        }
        let (d, din) = (self.dim(), self.input_dim());
        let col0 = din - d;
        let mut table_grad = grads.table.as_mut().map(|t| t.as_slice_mut().expect("standard layout"));
        let mut j = 0;
        for (bank, gb) in self.banks.iter().zip(grads.banks.iter_mut()) {
            let span = bank.span();
            for k in 0..bank.filter_count {
                let h = cache.pooled[j];
                let w = &self.dense_weights[2 * j..2 * j + 2];
                let g = (w[0] * dz[0] + w[1] * dz[1]) * (1.0 - h * h);
                let t = cache.argmax[j];
                j += 1;
                gb.bias[k] += g;
                let window = &cache.x[t * din..t * din + span];
                for (a, &xv) in gb.weights[k * span..(k + 1) * span].iter_mut().zip(window) {
                    *a += g * xv;
                }
                if let Some(tg) = table_grad.as_deref_mut() {
                    let filter = bank.filter(k);
                    for f in 0..bank.filter_size {
                        // positions past the real events are zero padding
                        let Some(&tok) = cache.tokens.get(t + f) else { break };
                        let dst = &mut tg[tok as usize * d..(tok as usize + 1) * d];
                        let wseg = &filter[f * din + col0..f * din + col0 + d];
                        for (a, &wv) in dst.iter_mut().zip(wseg) {
                            *a += g * wv;
                        }
                    }
                }
            }
        }
    }

    /// Weighted mean cross-entropy over the batch; gradients are written
    /// into `grads`, which is cleared first.
    pub fn backward_into(&self, batch: &Batch, grads: &mut Gradients) -> Result<f64> {
        let total: f64 = batch.weights.iter().sum();
        if batch.is_empty() || total <= 0.0 {
            return Err(Error::data("batch has no weight"));
        }
        grads.clear();
        let mut loss = 0.0;
        for ((tokens, &label), &w) in batch.tokens.iter().zip(&batch.labels).zip(&batch.weights) {
            let cache = self.forward_cached(tokens)?;
            loss += w * cache.loss(label);
            self.accumulate(&cache, label, w / total, grads);
        }
        Ok(loss / total)
    }

    /// Weighted mean cross-entropy without gradients.
    pub fn batch_loss(&self, batch: &Batch) -> Result<f64> {
        let total: f64 = batch.weights.iter().sum();
        let mut loss = 0.0;
        for ((tokens, &label), &w) in batch.tokens.iter().zip(&batch.labels).zip(&batch.weights) {
            loss += w * self.forward_cached(tokens)?.loss(label);
        }
        Ok(loss / total)
    }
}

/// Class probabilities for one sequence.
pub fn forward(model: &CnnModel, seq: &[u32]) -> Result<[f64; 2]> {
    model.forward(seq)
}

/// Mean loss and exact gradients of every trainable parameter.
pub fn backward(model: &CnnModel, batch: &Batch) -> Result<(f64, Gradients)> {
    let mut grads = Gradients::zeros(model);
    let loss = model.backward_into(batch, &mut grads)?;
    Ok((loss, grads))
}
