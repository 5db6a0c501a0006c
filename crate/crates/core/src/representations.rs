//! Fixed-length features for the baseline classifiers.
//!
//! Every mode here ignores event order.

use std::io::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AggregationMode {
    BofW,
    W2vAve,
    W2vSum,
    W2vMax,
    W2vAll,
    RandSum,
}

impl AggregationMode {
    pub const ALL: [AggregationMode; 6] = [
        AggregationMode::BofW,
        AggregationMode::W2vAve,
        AggregationMode::W2vSum,
        AggregationMode::W2vMax,
        AggregationMode::W2vAll,
        AggregationMode::RandSum,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AggregationMode::BofW => "BofW",
            AggregationMode::W2vAve => "W2v-Ave",
            AggregationMode::W2vSum => "W2v-Sum",
            AggregationMode::W2vMax => "W2v-Max",
            AggregationMode::W2vAll => "W2v-All",
            AggregationMode::RandSum => "Rand-Sum",
        }
    }

    /// Whether the mode reads the learned embedding table.
    pub fn needs_embeddings(self) -> bool {
        matches!(self, AggregationMode::W2vAve | AggregationMode::W2vSum | AggregationMode::W2vMax | AggregationMode::W2vAll)
    }
}

/// Occurrence counts per vocabulary index.
pub fn bag_of_words(seq: &[u32], vocab_size: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; vocab_size];
    for &i in seq {
        *out.get_mut(i as usize).ok_or_else(|| Error::data(format!("index {i} outside vocabulary of {vocab_size}")))? += 1.0;
    }
    Ok(out)
}

/// Columnwise reduction of the looked-up rows of `table`.
///
/// `W2vAll` concatenates `[sum | min | max]`. `RandSum` sums rows exactly
/// like `W2vSum`; the caller supplies the random table. `BofW` is not an
/// aggregation and is rejected.
pub fn aggregate_embeddings(seq: &[u32], table: &Array2<f64>, mode: AggregationMode) -> Result<Vec<f64>> {
    if seq.is_empty() {
        return Err(Error::data("cannot aggregate an empty sequence"));
    }
    let (v, d) = table.dim();
    if let Some(bad) = seq.iter().find(|&&i| i as usize >= v) {
        return Err(Error::data(format!("index {bad} outside embedding table of {v} rows")));
    }
    let rows = || seq.iter().map(|&i| table.row(i as usize));
    let fold = |init: f64, f: fn(f64, f64) -> f64| {
        let mut acc = vec![init; d];
        for row in rows() {
            for (a, &x) in acc.iter_mut().zip(row) {
                *a = f(*a, x);
            }
        }
        acc
    };
    let sum = || fold(0.0, |a, x| a + x);
    Ok(match mode {
        AggregationMode::W2vSum | AggregationMode::RandSum => sum(),
        AggregationMode::W2vAve => {
            let n = seq.len() as f64;
            sum().into_iter().map(|x| x / n).collect()
        }
        AggregationMode::W2vMax => fold(f64::NEG_INFINITY, f64::max),
        AggregationMode::W2vAll => {
            let mut out = sum();
            out.extend(fold(f64::INFINITY, f64::min));
            out.extend(fold(f64::NEG_INFINITY, f64::max));
            out
        }
        AggregationMode::BofW => return Err(Error::config("BofW is not an embedding aggregation")),
    })
}

/// A representation bound to the table it reads from.
#[derive(Debug, Clone)]
pub struct FeatureMap<'a> {
    mode: AggregationMode,
    vocab_size: usize,
    table: Option<&'a Array2<f64>>,
}

impl<'a> FeatureMap<'a> {
    /// `table` must be the learned embeddings for W2v modes and the random
    /// table for `RandSum`; it is ignored for `BofW`.
    pub fn new(mode: AggregationMode, vocab_size: usize, table: Option<&'a Array2<f64>>) -> Result<Self> {
        if mode != AggregationMode::BofW {
            let t = table.ok_or_else(|| Error::config(format!("{} needs an embedding table", mode.name())))?;
            if t.nrows() != vocab_size {
                return Err(Error::config(format!("table has {} rows for vocabulary of {vocab_size}", t.nrows())));
            }
        }
        Ok(FeatureMap { mode, vocab_size, table })
    }

    pub fn mode(&self) -> AggregationMode {
        self.mode
    }

    pub fn width(&self) -> usize {
        match (self.mode, self.table) {
            (AggregationMode::BofW, _) => self.vocab_size,
            (AggregationMode::W2vAll, Some(t)) => 3 * t.ncols(),
            (_, Some(t)) => t.ncols(),
            (_, None) => unreachable!("checked in new"),
        }
    }

    pub fn features(&self, seq: &[u32]) -> Result<Vec<f64>> {
        match self.mode {
            AggregationMode::BofW => bag_of_words(seq, self.vocab_size),
            mode => aggregate_embeddings(seq, self.table.expect("checked in new"), mode),
        }
    }

    /// One row per sequence.
    pub fn matrix(&self, seqs: &[&[u32]]) -> Result<Array2<f64>> {
        let width = self.width();
        let mut data = Vec::with_capacity(seqs.len() * width);
        for s in seqs {
            data.extend(self.features(s)?);
        }
        Array2::from_shape_vec((seqs.len(), width), data).map_err(|e| Error::data(e.to_string()))
    }
}

/// CSV with header `patient_id,label,f0,...,fK`.
pub fn write_feature_csv(
    w: &mut impl Write,
    rows: impl IntoIterator<Item = (String, u8, Vec<f64>)>,
    width: usize,
) -> Result<()> {
    write!(w, "patient_id,label")?;
    for k in 0..width {
        write!(w, ",f{k}")?;
    }
    writeln!(w)?;
    for (id, label, feats) in rows {
        if feats.len() != width {
            return Err(Error::data(format!("row {id} has {} features, expected {width}", feats.len())));
        }
        write!(w, "{id},{label}")?;
        for x in feats {
            write!(w, ",{x}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}
