use std::io::Write;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::forest::{train_forest, ForestConfig};
use super::linear::{train_linear, LinearConfig, LossKind};
use crate::cohort::{CohortDataset, LabeledSequence};
use crate::embedding::random_table;
use crate::metrics::{self, MetricSet};
use crate::representations::{AggregationMode, FeatureMap};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Classifier {
    #[serde(rename = "LR")]
    Lr,
    #[serde(rename = "SVM")]
    Svm,
    #[serde(rename = "RF")]
    Rf,
}

impl Classifier {
    pub const ALL: [Classifier; 3] = [Classifier::Lr, Classifier::Svm, Classifier::Rf];

    pub fn name(self) -> &'static str {
        match self {
            Classifier::Lr => "LR",
            Classifier::Svm => "SVM",
            Classifier::Rf => "RF",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub classifiers: Vec<Classifier>,
    pub representations: Vec<AggregationMode>,
    /// L2 strengths tried for LR and SVM; the best validation AUROC wins.
    pub lambdas: Vec<f64>,
    /// Z-score every feature with training-split statistics.
    pub standardize: bool,
    pub linear: LinearConfig,
    pub forest: ForestConfig,
    /// Width of the `Rand-Sum` table when no embeddings are given.
    pub rand_dim: usize,
    pub rand_seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            classifiers: Classifier::ALL.to_vec(),
            representations: AggregationMode::ALL.to_vec(),
            lambdas: vec![1e-4, 1e-3, 1e-2, 1e-1, 1.0],
            standardize: true,
            linear: LinearConfig::default(),
            forest: ForestConfig::default(),
            rand_dim: 200,
            rand_seed: 0,
        }
    }
}

/// Test-split metrics of one classifier on one representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteRow {
    pub classifier: String,
    pub representation: String,
    pub accuracy: f64,
    pub auroc: f64,
    pub auprc: f64,
    pub max_f1: f64,
}

impl SuiteRow {
    fn new(classifier: Classifier, mode: AggregationMode, m: MetricSet) -> Self {
        SuiteRow {
            classifier: classifier.name().to_string(),
            representation: mode.name().to_string(),
            accuracy: m.accuracy,
            auroc: m.auroc,
            auprc: m.auprc,
            max_f1: m.max_f1,
        }
    }
}

struct Split {
    x: Array2<f64>,
    y: Vec<u8>,
}

fn features(map: &FeatureMap<'_>, seqs: &[LabeledSequence]) -> Result<Split> {
    let rows: Vec<&[u32]> = seqs.iter().map(|s| s.indices.as_slice()).collect();
    Ok(Split { x: map.matrix(&rows)?, y: seqs.iter().map(|s| s.label).collect() })
}

/// Applies the training split's column mean and standard deviation to all
/// three splits. Constant columns are only centred.
fn standardize(splits: &mut [Split; 3]) {
    let train = &splits[0].x;
    let mean = train.mean_axis(Axis(0)).expect("non-empty train split");
    let std = train.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
    for s in splits.iter_mut() {
        s.x -= &mean;
        s.x /= &std;
    }
}

fn check_unique<T: PartialEq + Copy>(items: &[T], what: &str) -> Result<()> {
    for (i, a) in items.iter().enumerate() {
        if items[..i].contains(a) {
            return Err(Error::config(format!("duplicate {what} in suite configuration")));
        }
    }
    Ok(())
}

fn run_cell(classifier: Classifier, splits: &[Split; 3], config: &SuiteConfig) -> Result<MetricSet> {
    let [train, val, test] = splits;
    let scores = match classifier {
        Classifier::Lr | Classifier::Svm => {
            let kind = if classifier == Classifier::Lr { LossKind::Logistic } else { LossKind::Hinge };
            let mut best = None;
            for &lambda in &config.lambdas {
                let model = train_linear(&train.x, &train.y, kind, lambda, &config.linear)?;
                let auroc = metrics::auroc(&model.predict(&val.x)?, &val.y)?;
                if best.as_ref().is_none_or(|(a, _)| auroc > *a) {
                    best = Some((auroc, model));
                }
            }
            best.expect("lambda grid is non-empty").1.predict(&test.x)?
        }
        Classifier::Rf => train_forest(&train.x, &train.y, &val.x, &val.y, &config.forest)?.predict(&test.x)?,
    };
    metrics::evaluate(&scores, &test.y)
}

/// Trains every requested (classifier, representation) cell on the train
/// split, tunes on val and reports test metrics, classifier-major in the
/// requested order. `embeddings` is required by the W2v representations.
pub fn run_baseline_suite(
    dataset: &CohortDataset,
    vocab_size: usize,
    embeddings: Option<&Array2<f64>>,
    config: &SuiteConfig,
) -> Result<Vec<SuiteRow>> {
    if config.classifiers.is_empty() || config.representations.is_empty() {
        return Err(Error::config("suite needs at least one classifier and one representation"));
    }
    if config.lambdas.is_empty() || config.lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
        return Err(Error::config("lambda grid must be non-empty, finite and non-negative"));
    }
    check_unique(&config.classifiers, "classifier")?;
    check_unique(&config.representations, "representation")?;
    if let Some(e) = embeddings {
        if e.nrows() != vocab_size {
            return Err(Error::config(format!("embedding table has {} rows for vocabulary of {vocab_size}", e.nrows())));
        }
    }
    let rand_dim = embeddings.map_or(config.rand_dim, |e| e.ncols());
    let rand = config
        .representations
        .contains(&AggregationMode::RandSum)
        .then(|| random_table(vocab_size, rand_dim, config.rand_seed));

    let mut cells: Vec<(Classifier, AggregationMode, MetricSet)> = Vec::new();
    for &mode in &config.representations {
        let table = if mode == AggregationMode::RandSum { rand.as_ref() } else { embeddings };
        let map = FeatureMap::new(mode, vocab_size, table).map_err(|e| e.context(mode.name()))?;
        let mut splits = [features(&map, &dataset.train)?, features(&map, &dataset.val)?, features(&map, &dataset.test)?];
        if config.standardize {
            standardize(&mut splits);
        }
        for &clf in &config.classifiers {
            let m = run_cell(clf, &splits, config).map_err(|e| e.context(format!("{} on {}", clf.name(), mode.name())))?;
            cells.push((clf, mode, m));
        }
    }
    let mut rows = Vec::with_capacity(cells.len());
    for &clf in &config.classifiers {
        for &(c, mode, m) in &cells {
            if c == clf {
                rows.push(SuiteRow::new(clf, mode, m));
            }
        }
    }
    Ok(rows)
}

pub fn write_suite_json(rows: &[SuiteRow], w: &mut impl Write) -> Result<()> {
    serde_json::to_writer_pretty(&mut *w, rows).map_err(|e| Error::format(e.to_string()))?;
    writeln!(w)?;
    Ok(())
}

pub fn write_suite_csv(rows: &[SuiteRow], w: &mut impl Write) -> Result<()> {
    writeln!(w, "classifier,representation,accuracy,auroc,auprc,max_f1")?;
    for r in rows {
        writeln!(w, "{},{},{},{},{},{}", r.classifier, r.representation, r.accuracy, r.auroc, r.auprc, r.max_f1)?;
    }
    Ok(())
}
