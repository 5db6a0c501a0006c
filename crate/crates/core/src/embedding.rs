//! CBOW event embeddings with negative sampling.
//!
//! Each patient's full index sequence is one training sentence. For every
//! center position the context is every position within `window` on either
//! side (clipped at the sequence ends, never the center itself); the hidden
//! vector is the mean of the context input vectors. One positive and
//! `negatives` noise targets are scored against the output vectors with the
//! log-sigmoid objective, and the accumulated hidden-layer error is added to
//! every context input vector, as in the reference word2vec trainer.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::data::{EventCode, EventKind, Vocabulary};
use crate::rng::SeededRng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CbowConfig {
    pub dim: usize,
    /// Context positions on each side of the center.
    pub window: usize,
    pub min_count: u64,
    pub negatives: usize,
    pub epochs: usize,
    pub lr_start: f64,
    pub lr_min: f64,
    /// Frequent-event subsampling threshold; `None` disables it.
    pub subsample: Option<f64>,
    /// `1` is the deterministic mode. More workers share the weight
    /// matrices without locking.
    pub workers: usize,
    pub seed: u64,
}

impl Default for CbowConfig {
    fn default() -> Self {
        CbowConfig {
            dim: 200,
            window: 20,
            min_count: 5,
            negatives: 5,
            epochs: 5,
            lr_start: 0.025,
            lr_min: 1e-4,
            subsample: None,
            workers: 1,
            seed: 0,
        }
    }
}

impl CbowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.window == 0 || self.negatives == 0 || self.workers == 0 {
            return Err(Error::config("dim, window, negatives and workers must be at least 1"));
        }
        if !(self.lr_start > self.lr_min && self.lr_min > 0.0) {
            return Err(Error::config("need lr_start > lr_min > 0"));
        }
        if let Some(t) = self.subsample {
            if t.is_nan() || t <= 0.0 {
                return Err(Error::config("subsample threshold must be positive"));
            }
        }
        Ok(())
    }
}

/// Published input vectors plus the context (output) weights, one row per
/// vocabulary index.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub input: Array2<f64>,
    pub output: Array2<f64>,
    pub codes: Vec<EventCode>,
}

impl EmbeddingMatrix {
    /// Input vectors ~ U(-0.5/D, 0.5/D), output vectors zero.
    pub fn initialize(vocab: &Vocabulary, dim: usize, seed: u64) -> Self {
        EmbeddingMatrix {
            input: random_table(vocab.len(), dim, seed),
            output: Array2::zeros((vocab.len(), dim)),
            codes: vocab.codes().to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.input.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.input.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.input.ncols()
    }

    pub fn vector(&self, index: usize) -> ArrayView1<'_, f64> {
        self.input.row(index)
    }

    pub fn index_of(&self, code: &EventCode) -> Option<usize> {
        self.codes.iter().position(|c| c == code)
    }

    pub fn cosine(&self, a: usize, b: usize) -> f64 {
        cosine(self.input.row(a).as_slice().unwrap(), self.input.row(b).as_slice().unwrap())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    /// Text format: `V D`, then `code kind v1 .. vD` per index with six
    /// decimals. Only the input vectors are written.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "{} {}", self.len(), self.dim())?;
        for (code, row) in self.codes.iter().zip(self.input.rows()) {
            if code.code.contains(char::is_whitespace) {
                return Err(Error::format(format!("code {:?} contains whitespace", code.code)));
            }
            write!(w, "{} {}", code.code, code.kind)?;
            for v in row {
                write!(w, " {v:.6}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Loaded matrices carry zero output vectors.
    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::format("empty embedding file"))??;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::format("embedding header must be `V D`")))
            .collect::<Result<_>>()?;
        let [v, d] = dims[..] else {
            return Err(Error::format("embedding header must be `V D`"));
        };
        let mut data = Vec::with_capacity(v * d);
        let mut codes = Vec::with_capacity(v);
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let lineno = i + 2;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != d + 2 {
                return Err(Error::Parse { line: lineno, message: format!("expected code, kind and {d} values") });
            }
            let kind: EventKind =
                fields[1].parse().map_err(|e: Error| Error::Parse { line: lineno, message: e.to_string() })?;
            codes.push(EventCode::new(fields[0], kind)?);
            for f in &fields[2..] {
                let x: f64 = f.parse().map_err(|_| Error::Parse { line: lineno, message: format!("bad value {f:?}") })?;
                data.push(x);
            }
        }
        if codes.len() != v {
            return Err(Error::format(format!("header declares {v} rows but file has {}", codes.len())));
        }
        let input = Array2::from_shape_vec((v, d), data).map_err(|e| Error::format(e.to_string()))?;
        Ok(EmbeddingMatrix { output: Array2::zeros((v, d)), input, codes })
    }
}

/// `rows × dim` table with entries ~ U(-0.5/dim, 0.5/dim).
pub fn random_table(rows: usize, dim: usize, seed: u64) -> Array2<f64> {
    let mut rng = SeededRng::new(seed);
    let half = 0.5 / dim as f64;
    Array2::from_shape_simple_fn((rows, dim), || rng.uniform_range(-half, half))
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return 0.0;
    }
    (ab / (aa * bb).sqrt()).clamp(-1.0, 1.0)
}

/// Top-`k` rows by cosine to `query`, excluding the query itself. Ties go
/// to the lower index.
pub fn nearest_neighbors(emb: &EmbeddingMatrix, query: usize, k: usize) -> Result<Vec<(usize, f64)>> {
    let v = emb.len();
    if query >= v {
        return Err(Error::data(format!("query index {query} outside vocabulary of {v}")));
    }
    if k >= v {
        return Err(Error::config(format!("k = {k} must be below the vocabulary size {v}")));
    }
    let mut scored: Vec<(usize, f64)> = (0..v).filter(|&i| i != query).map(|i| (i, emb.cosine(query, i))).collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(scored)
}

/// Noise distribution proportional to `count^0.75`.
#[derive(Debug, Clone)]
pub struct NegativeSampler {
    cumulative: Vec<f64>,
}

impl NegativeSampler {
    pub const POWER: f64 = 0.75;

    pub fn new(counts: &[u64]) -> Self {
        let mut acc = 0.0;
        let cumulative = counts
            .iter()
            .map(|&c| {
                acc += (c as f64).powf(Self::POWER);
                acc
            })
            .collect();
        NegativeSampler { cumulative }
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let total = *self.cumulative.last().unwrap_or(&1.0);
        let mut prev = 0.0;
        self.cumulative
            .iter()
            .map(|&c| {
                let p = (c - prev) / total;
                prev = c;
                p
            })
            .collect()
    }

    pub fn sample(&self, rng: &mut SeededRng) -> u32 {
        let total = *self.cumulative.last().unwrap();
        let u = rng.uniform() * total;
        let i = self.cumulative.partition_point(|&c| c <= u);
        i.min(self.cumulative.len() - 1) as u32
    }
}

/// Row-addressed weight storage shared by the single- and multi-worker paths.
trait Rows {
    fn read(&mut self, row: usize, out: &mut [f64]);
    fn dot(&mut self, row: usize, x: &[f64]) -> f64;
    /// `row += scale * x`
    fn axpy(&mut self, row: usize, scale: f64, x: &[f64]);
}

struct DenseRows<'a> {
    data: &'a mut [f64],
    dim: usize,
}

impl Rows for DenseRows<'_> {
    fn read(&mut self, row: usize, out: &mut [f64]) {
        out.copy_from_slice(&self.data[row * self.dim..(row + 1) * self.dim]);
    }

    fn dot(&mut self, row: usize, x: &[f64]) -> f64 {
        self.data[row * self.dim..(row + 1) * self.dim].iter().zip(x).map(|(a, b)| a * b).sum()
    }

    fn axpy(&mut self, row: usize, scale: f64, x: &[f64]) {
        for (a, b) in self.data[row * self.dim..(row + 1) * self.dim].iter_mut().zip(x) {
            *a += scale * b;
        }
    }
}

/// f64 bit patterns behind relaxed atomics: racing updates may be lost but
/// never torn.
struct SharedRows<'a> {
    data: &'a [AtomicU64],
    dim: usize,
}

impl Rows for SharedRows<'_> {
    fn read(&mut self, row: usize, out: &mut [f64]) {
        for (o, a) in out.iter_mut().zip(&self.data[row * self.dim..(row + 1) * self.dim]) {
            *o = f64::from_bits(a.load(Ordering::Relaxed));
        }
    }

    fn dot(&mut self, row: usize, x: &[f64]) -> f64 {
        self.data[row * self.dim..(row + 1) * self.dim]
            .iter()
            .zip(x)
            .map(|(a, b)| f64::from_bits(a.load(Ordering::Relaxed)) * b)
            .sum()
    }

    fn axpy(&mut self, row: usize, scale: f64, x: &[f64]) {
        for (a, b) in self.data[row * self.dim..(row + 1) * self.dim].iter().zip(x) {
            let v = f64::from_bits(a.load(Ordering::Relaxed)) + scale * b;
            a.store(v.to_bits(), Ordering::Relaxed);
        }
    }
}

struct Schedule<'a> {
    lr_start: f64,
    lr_min: f64,
    total: f64,
    processed: &'a AtomicU64,
}

impl Schedule<'_> {
    fn next_lr(&self) -> f64 {
        let done = self.processed.fetch_add(1, Ordering::Relaxed) as f64;
        let frac = (done / self.total).min(1.0);
        self.lr_start + (self.lr_min - self.lr_start) * frac
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct Trainer<'a> {
    config: &'a CbowConfig,
    sampler: &'a NegativeSampler,
    keep_prob: Option<Vec<f64>>,
}

impl Trainer<'_> {
    fn run<R: Rows>(
        &self,
        input: &mut R,
        output: &mut R,
        sequences: &[&[u32]],
        schedule: &Schedule<'_>,
        rng: &mut SeededRng,
    ) {
        let dim = self.config.dim;
        let window = self.config.window;
        let mut hidden = vec![0.0; dim];
        let mut err = vec![0.0; dim];
        let mut row = vec![0.0; dim];
        let mut kept: Vec<u32> = Vec::new();
        for &seq in sequences {
            let seq: &[u32] = match &self.keep_prob {
                None => seq,
                Some(keep) => {
                    kept.clear();
                    kept.extend(seq.iter().copied().filter(|&w| rng.uniform() < keep[w as usize]));
                    &kept
                }
            };
            for t in 0..seq.len() {
                let lr = schedule.next_lr();
                let lo = t.saturating_sub(window);
                let hi = (t + window + 1).min(seq.len());
                let n_ctx = hi - lo - 1;
                if n_ctx == 0 {
                    continue;
                }
                hidden.fill(0.0);
                for c in (lo..hi).filter(|&c| c != t) {
                    input.read(seq[c] as usize, &mut row);
                    for (h, r) in hidden.iter_mut().zip(&row) {
                        *h += r;
                    }
                }
                let inv = 1.0 / n_ctx as f64;
                hidden.iter_mut().for_each(|h| *h *= inv);
                err.fill(0.0);
                let center = seq[t];
                for d in 0..=self.config.negatives {
                    let (target, label) = if d == 0 {
                        (center, 1.0)
                    } else {
                        let s = self.sampler.sample(rng);
                        if s == center {
                            continue;
                        }
                        (s, 0.0)
                    };
                    let target = target as usize;
                    let g = (label - sigmoid(output.dot(target, &hidden))) * lr;
                    output.read(target, &mut row);
                    for (e, r) in err.iter_mut().zip(&row) {
                        *e += g * r;
                    }
                    output.axpy(target, g, &hidden);
                }
                for c in (lo..hi).filter(|&c| c != t) {
                    input.axpy(seq[c] as usize, 1.0, &err);
                }
            }
        }
    }
}

fn keep_probabilities(vocab: &Vocabulary, threshold: f64) -> Vec<f64> {
    let total: u64 = vocab.counts().iter().sum();
    vocab
        .counts()
        .iter()
        .map(|&c| {
            let f = c as f64 / total as f64;
            ((f / threshold).sqrt() + 1.0) * threshold / f
        })
        .collect()
}

fn check_sequences(sequences: &[Vec<u32>], vocab: &Vocabulary) -> Result<()> {
    if vocab.is_empty() {
        return Err(Error::EmptyVocabulary { min_count: vocab.min_count() });
    }
    let v = vocab.len() as u32;
    for (i, s) in sequences.iter().enumerate() {
        if let Some(bad) = s.iter().find(|&&x| x >= v) {
            return Err(Error::data(format!("sequence {i} holds index {bad} outside vocabulary of {v}")));
        }
    }
    if !sequences.iter().any(|s| s.len() >= 2) {
        return Err(Error::data("CBOW needs at least one sequence of two or more events"));
    }
    Ok(())
}

/// Trains CBOW embeddings over per-patient index sequences.
pub fn train_cbow(sequences: &[Vec<u32>], vocab: &Vocabulary, config: &CbowConfig) -> Result<EmbeddingMatrix> {
    config.validate()?;
    check_sequences(sequences, vocab)?;
    let mut emb = EmbeddingMatrix::initialize(vocab, config.dim, config.seed);
    if config.epochs == 0 {
        return Ok(emb);
    }
    let sampler = NegativeSampler::new(vocab.counts());
    let trainer = Trainer { config, sampler: &sampler, keep_prob: config.subsample.map(|t| keep_probabilities(vocab, t)) };
    let positions: usize = sequences.iter().map(Vec::len).sum();
    let processed = AtomicU64::new(0);
    let schedule = Schedule {
        lr_start: config.lr_start,
        lr_min: config.lr_min,
        total: (positions * config.epochs) as f64,
        processed: &processed,
    };
    let seqs: Vec<&[u32]> = sequences.iter().map(Vec::as_slice).collect();
    let dim = config.dim;

    if config.workers == 1 {
        let mut rng = SeededRng::new(SeededRng::derive_seed(config.seed, 1));
        let mut input = DenseRows { data: emb.input.as_slice_mut().unwrap(), dim };
        let mut output = DenseRows { data: emb.output.as_slice_mut().unwrap(), dim };
        for _ in 0..config.epochs {
            trainer.run(&mut input, &mut output, &seqs, &schedule, &mut rng);
        }
        return Ok(emb);
    }

    let to_atomic = |a: &Array2<f64>| a.iter().map(|x| AtomicU64::new(x.to_bits())).collect::<Vec<_>>();
    let input = to_atomic(&emb.input);
    let output = to_atomic(&emb.output);
    let chunk = seqs.len().div_ceil(config.workers);
    std::thread::scope(|scope| {
        for (w, part) in seqs.chunks(chunk).enumerate() {
            let (input, output, trainer, schedule) = (&input, &output, &trainer, &schedule);
            scope.spawn(move || {
                let mut rng = SeededRng::new(SeededRng::derive_seed(config.seed, 1 + w as u64));
                let mut inp = SharedRows { data: input, dim };
                let mut out = SharedRows { data: output, dim };
                for _ in 0..config.epochs {
                    trainer.run(&mut inp, &mut out, part, schedule, &mut rng);
                }
            });
        }
    });
    let from_atomic = |v: Vec<AtomicU64>, a: &mut Array2<f64>| {
        for (dst, src) in a.iter_mut().zip(v) {
            *dst = f64::from_bits(src.into_inner());
        }
    };
    from_atomic(input, &mut emb.input);
    from_atomic(output, &mut emb.output);
    Ok(emb)
}

/// Mean negative-sampling loss per scored center position, with noise drawn
/// from `seed` so that successive calls are comparable.
pub fn cbow_loss(emb: &EmbeddingMatrix, sequences: &[Vec<u32>], counts: &[u64], config: &CbowConfig, seed: u64) -> f64 {
    let sampler = NegativeSampler::new(counts);
    let mut rng = SeededRng::new(seed);
    let dim = emb.dim();
    let mut hidden = vec![0.0; dim];
    let (mut loss, mut n) = (0.0, 0usize);
    let ln_sigmoid = |x: f64| -(1.0 + (-x).exp()).ln();
    for seq in sequences {
        for t in 0..seq.len() {
            let lo = t.saturating_sub(config.window);
            let hi = (t + config.window + 1).min(seq.len());
            if hi - lo < 2 {
                continue;
            }
            hidden.fill(0.0);
            for c in (lo..hi).filter(|&c| c != t) {
                for (h, x) in hidden.iter_mut().zip(emb.input.row(seq[c] as usize)) {
                    *h += x;
                }
            }
            let inv = 1.0 / (hi - lo - 1) as f64;
            let score = |w: u32| hidden.iter().zip(emb.output.row(w as usize)).map(|(h, o)| h * inv * o).sum::<f64>();
            loss -= ln_sigmoid(score(seq[t]));
            for _ in 0..config.negatives {
                let s = sampler.sample(&mut rng);
                if s != seq[t] {
                    loss -= ln_sigmoid(-score(s));
                }
            }
            n += 1;
        }
    }
    loss / n.max(1) as f64
}
