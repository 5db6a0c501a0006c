use serde::Serialize;

use super::model::{backward, Batch, CnnModel, PAD};
use crate::rng::SeededRng;
use crate::{Error, Result};

/// Coordinates checked per parameter group at most.
const MAX_COORDS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub groups: Vec<GroupCheck>,
}

/// Compares analytic gradients of one example's loss against central
/// differences, over a seeded sample of each trainable group. Embedding
/// coordinates are drawn from rows the example uses; frozen tables are not
/// trainable and are skipped.
pub fn gradient_check(model: &CnnModel, tokens: &[u32], label: u8, step: f64, seed: u64) -> Result<GradCheckReport> {
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::config(format!("finite-difference step must be positive, got {step}")));
    }
    let (_, grads) = backward(model, &Batch::new(&[tokens], &[label])?)?;
    let analytic: Vec<Vec<f64>> = grads.groups().iter().map(|g| g.to_vec()).collect();
    let names = model.group_names();
    let mut rows: Vec<usize> = tokens.iter().filter(|&&t| t != PAD).map(|&t| t as usize).collect();
    rows.sort_unstable();
    rows.dedup();

    let mut probe = model.clone();
    let mut rng = SeededRng::new(seed);
    let loss = |m: &CnnModel| -> Result<f64> { Ok(m.forward_cached(tokens)?.loss(label)) };
    let mut groups = Vec::new();
    for (g, name) in names.into_iter().enumerate() {
        let candidates: Vec<usize> = if name == "embedding" {
            let d = model.dim();
            rows.iter().flat_map(|&r| r * d..(r + 1) * d).collect()
        } else {
            (0..analytic[g].len()).collect()
        };
        let picked: Vec<usize> = if candidates.len() > MAX_COORDS {
            rng.sample_indices(candidates.len(), MAX_COORDS).into_iter().map(|i| candidates[i]).collect()
        } else {
            candidates
        };
        let mut worst: f64 = 0.0;
        for &i in &picked {
            let original = probe.param_groups()[g][i];
            probe.param_groups_mut()[g][i] = original + step;
            let plus = loss(&probe)?;
            probe.param_groups_mut()[g][i] = original - step;
            let minus = loss(&probe)?;
            probe.param_groups_mut()[g][i] = original;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[g][i];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8));
        }
        groups.push(GroupCheck { name, checked: picked.len(), max_rel_error: worst });
    }
    let max_rel_error = groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport { max_rel_error, groups })
}
