use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::adadelta::{AdaDelta, AdaDeltaState};
use super::model::{Batch, CnnModel, Gradients, ModelConfig};
use crate::cohort::{CohortDataset, LabeledSequence};
use crate::metrics;
use crate::rng::SeededRng;
use crate::{Error, Result};

/// Mini-batch schedule and optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation AUROC improvement before stopping.
    pub patience: usize,
    pub rho: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { batch_size: 32, max_epochs: 100, patience: 10, rho: 0.95, eps: 1e-6, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::config("batch_size and max_epochs must be at least 1"));
        }
        if self.patience == 0 || self.patience > self.max_epochs {
            return Err(Error::config("patience must be between 1 and max_epochs"));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) || self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::config("AdaDelta needs 0 < rho < 1 and eps > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_auroc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_auroc: f64,
}

/// Probability of the positive class for each sequence.
pub fn predict<S: AsRef<[u32]>>(model: &CnnModel, seqs: &[S]) -> Result<Vec<f64>> {
    seqs.iter().map(|s| Ok(model.forward(s.as_ref())?[1])).collect()
}

/// Builds a model and trains it on the train split, selecting on val.
pub fn train_cnn(
    dataset: &CohortDataset,
    model_config: &ModelConfig,
    vocab_size: usize,
    pretrained: Option<&Array2<f64>>,
    train_config: &TrainConfig,
) -> Result<(CnnModel, TrainingHistory)> {
    let model = CnnModel::new(model_config, vocab_size, pretrained)?;
    train_model(model, &dataset.train, &dataset.val, train_config)
}

/// Trains `model` with AdaDelta and keeps the parameters of the epoch with
/// the best validation AUROC, ties going to the lower validation loss.
pub fn train_model(
    mut model: CnnModel,
    train: &[LabeledSequence],
    val: &[LabeledSequence],
    config: &TrainConfig,
) -> Result<(CnnModel, TrainingHistory)> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::data("training needs non-empty train and val splits"));
    }
    let val_seqs: Vec<&[u32]> = val.iter().map(|s| s.indices.as_slice()).collect();
    let val_labels: Vec<u8> = val.iter().map(|s| s.label).collect();
    let optimizer = AdaDelta { rho: config.rho, eps: config.eps };
    let mut state = AdaDeltaState::for_model(optimizer, &model);
    let mut grads = Gradients::zeros(&model);
    let mut rng = SeededRng::new(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut history = Vec::new();
    let mut best: Option<(CnnModel, usize, f64, f64)> = None;
    let mut stale = 0;
    for epoch in 1..=config.max_epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let seqs: Vec<&[u32]> = chunk.iter().map(|&i| train[i].indices.as_slice()).collect();
            let labels: Vec<u8> = chunk.iter().map(|&i| train[i].label).collect();
            let batch = Batch::new(&seqs, &labels)?;
            let loss = model.backward_into(&batch, &mut grads)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("training loss became {loss} in epoch {epoch}")));
            }
            state
                .apply(&mut model, &grads)
                .map_err(|e| Error::Numeric(format!("epoch {epoch}: {e}")))?;
            loss_sum += loss * chunk.len() as f64;
        }
        let mut scores = Vec::with_capacity(val.len());
        let mut val_loss = 0.0;
        for (s, &label) in val_seqs.iter().zip(&val_labels) {
            let cache = model.forward_cached(s)?;
            val_loss += cache.loss(label) / val.len() as f64;
            scores.push(cache.probs[1]);
        }
        let val_auroc = metrics::auroc(&scores, &val_labels)?;
        history.push(EpochRecord { epoch, train_loss: loss_sum / train.len() as f64, val_loss, val_auroc });
        // AUROC saturates on easy data; equal AUROC with lower loss still counts.
        let improved = best.as_ref().is_none_or(|b| val_auroc > b.2 || (val_auroc == b.2 && val_loss < b.3));
        if improved {
            best = Some((model.clone(), epoch, val_auroc, val_loss));
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    let (model, best_epoch, best_val_auroc, _) = best.expect("at least one epoch ran");
    Ok((model, TrainingHistory { epochs: history, best_epoch, best_val_auroc }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::EmbeddingInputMode;

    fn seq(id: usize, label: u8, indices: Vec<u32>) -> LabeledSequence {
        LabeledSequence { patient_id: format!("P{id}"), label, days: (0..indices.len() as u32).collect(), indices }
    }

    /// Label is whether code 0 appears anywhere.
    fn toy(n: usize, seed: u64) -> Vec<LabeledSequence> {
        let mut rng = SeededRng::new(seed);
        (0..n)
            .map(|i| {
                let len = 6 + rng.index(10);
                let mut s: Vec<u32> = (0..len).map(|_| 1 + rng.index(9) as u32).collect();
                let label = (i % 2) as u8;
                if label == 1 {
                    let at = rng.index(len);
                    s[at] = 0;
                }
                seq(i, label, s)
            })
            .collect()
    }

    fn rand_config(seed: u64) -> ModelConfig {
        ModelConfig { input_mode: EmbeddingInputMode::Rand, dim: 8, filter_sizes: vec![2, 3], filter_count: 6, seed, ..Default::default() }
    }

    #[test]
    fn separable_toy_is_learned() {
        let (train, val) = (toy(80, 1), toy(40, 2));
        let cfg = TrainConfig { max_epochs: 20, patience: 20, batch_size: 8, ..Default::default() };
        let (model, history) = train_model(CnnModel::new(&rand_config(3), 10, None).unwrap(), &train, &val, &cfg).unwrap();
        let scores = predict(&model, &train.iter().map(|s| s.indices.clone()).collect::<Vec<_>>()).unwrap();
        let labels: Vec<u8> = train.iter().map(|s| s.label).collect();
        assert_eq!(metrics::accuracy(&scores, &labels, 0.5).unwrap(), 1.0);
        assert!(history.epochs.len() <= 20);
        assert_eq!(history.best_val_auroc, history.epochs[history.best_epoch - 1].val_auroc);
    }

    #[test]
    fn deterministic_given_seeds() {
        let (train, val) = (toy(40, 4), toy(20, 5));
        let cfg = TrainConfig { max_epochs: 3, patience: 3, batch_size: 7, seed: 11, ..Default::default() };
        let run = || train_model(CnnModel::new(&rand_config(6), 10, None).unwrap(), &train, &val, &cfg).unwrap();
        let (a, ha) = run();
        let (b, hb) = run();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
    }

    #[test]
    fn stops_after_patience() {
        // val labels unrelated to the inputs: AUROC wanders, patience ends it
        let train = toy(20, 7);
        let val: Vec<_> = (0..10).map(|i| seq(i, (i % 2) as u8, vec![3, 4, 5])).collect();
        let cfg = TrainConfig { max_epochs: 50, patience: 2, batch_size: 10, ..Default::default() };
        let (_, h) = train_model(CnnModel::new(&rand_config(8), 10, None).unwrap(), &train, &val, &cfg).unwrap();
        assert_eq!(h.epochs.len(), h.best_epoch + 2);
    }

    #[test]
    fn gradient_vanishes_at_the_optimum() {
        let data = [seq(0, 1, vec![0, 1, 2, 3]), seq(1, 0, vec![4, 1, 2, 3])];
        let mut model = CnnModel::new(&rand_config(9), 10, None).unwrap();
        let batch = Batch::new(&[&data[0].indices, &data[1].indices], &[1, 0]).unwrap();
        let mut state = AdaDeltaState::for_model(AdaDelta::default(), &model);
        let mut grads = Gradients::zeros(&model);
        let mut norm = f64::INFINITY;
        for _ in 0..1_000_000 {
            model.backward_into(&batch, &mut grads).unwrap();
            norm = grads.norm();
            if norm < 1e-6 {
                break;
            }
            state.apply(&mut model, &grads).unwrap();
        }
        assert!(norm < 1e-6, "gradient norm {norm}");
    }

    #[test]
    fn config_errors() {
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { patience: 101, ..Default::default() }.validate().is_err());
        let model = CnnModel::new(&rand_config(1), 10, None).unwrap();
        assert!(train_model(model, &[], &toy(4, 1), &TrainConfig::default()).is_err());
    }
}
