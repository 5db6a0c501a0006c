use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// `log(1 + exp(-y s))`
    Logistic,
    /// `max(0, 1 - y s)`
    Hinge,
}

/// Stopping rule for the full-batch optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearConfig {
    pub max_iter: usize,
    /// Stop once the gradient norm falls below this.
    pub grad_tol: f64,
    /// Sufficient-decrease constant of the backtracking line search.
    pub armijo: f64,
}

impl Default for LinearConfig {
    fn default() -> Self {
        LinearConfig { max_iter: 10_000, grad_tol: 1e-6, armijo: 1e-4 }
    }
}

/// An L2-regularized linear classifier, `s = w·x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub loss_kind: LossKind,
    pub l2_lambda: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Regularized objective after each accepted step, starting at `w = 0, b = 0`.
    pub objective_trace: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(-z))` without overflow.
fn logistic_loss(z: f64) -> f64 {
    if z > 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

struct Problem<'a> {
    x: &'a [f64],
    n: usize,
    signs: Vec<f64>,
    kind: LossKind,
    lambda: f64,
}

impl Problem<'_> {
    fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.x.chunks_exact(self.n)
    }

    fn objective(&self, w: &[f64], b: f64) -> f64 {
        let m = self.signs.len() as f64;
        let data: f64 = self
            .rows()
            .zip(&self.signs)
            .map(|(row, &y)| {
                let z = y * (b + dot(row, w));
                match self.kind {
                    LossKind::Logistic => logistic_loss(z),
                    LossKind::Hinge => (1.0 - z).max(0.0),
                }
            })
            .sum();
        data / m + 0.5 * self.lambda * dot(w, w)
    }

    /// Objective and (sub)gradient; the last gradient entry is the bias.
    fn gradient(&self, w: &[f64], b: f64, g: &mut [f64]) -> f64 {
        let m = self.signs.len() as f64;
        g.fill(0.0);
        let mut data = 0.0;
        for (row, &y) in self.rows().zip(&self.signs) {
            let z = y * (b + dot(row, w));
            let c = match self.kind {
                LossKind::Logistic => {
                    data += logistic_loss(z);
                    -y * sigmoid(-z)
                }
                LossKind::Hinge => {
                    data += (1.0 - z).max(0.0);
                    if z < 1.0 { -y } else { 0.0 }
                }
            };
            if c != 0.0 {
                for (gj, &xj) in g[..self.n].iter_mut().zip(row) {
                    *gj += c * xj;
                }
                g[self.n] += c;
            }
        }
        for (gj, &wj) in g[..self.n].iter_mut().zip(w) {
            *gj = *gj / m + self.lambda * wj;
        }
        g[self.n] /= m;
        data / m + 0.5 * self.lambda * dot(w, w)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_xy(x: &Array2<f64>, y: &[u8]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::data(format!("{} rows for {} labels", x.nrows(), y.len())));
    }
    if let Some(l) = y.iter().find(|&&l| l > 1) {
        return Err(Error::data(format!("label {l} is not 0/1")));
    }
    if !(y.contains(&0) && y.contains(&1)) {
        return Err(Error::data("training labels contain a single class"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite feature value".into()));
    }
    Ok(())
}

/// Minimizes mean loss + (λ/2)‖w‖² by gradient descent. Each step starts
/// from a Barzilai–Borwein trial length and backtracks by halving until the
/// Armijo condition holds, so every accepted step strictly lowers the
/// objective. Stops on a small gradient, the iteration cap, or when no
/// step length gives a decrease.
pub fn train_linear(x: &Array2<f64>, y: &[u8], loss_kind: LossKind, l2_lambda: f64, config: &LinearConfig) -> Result<LinearModel> {
    check_xy(x, y)?;
    if !(l2_lambda.is_finite() && l2_lambda >= 0.0) {
        return Err(Error::config(format!("l2_lambda must be finite and non-negative, got {l2_lambda}")));
    }
    let x = x.as_standard_layout();
    let n = x.ncols();
    let problem = Problem {
        x: x.as_slice().expect("standard layout"),
        n,
        signs: y.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect(),
        kind: loss_kind,
        lambda: l2_lambda,
    };

    let mut theta = vec![0.0; n + 1];
    let mut grad = vec![0.0; n + 1];
    let mut f = problem.gradient(&theta[..n], theta[n], &mut grad);
    let mut trace = vec![f];
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut alpha = 1.0;
    let mut trial = vec![0.0; n + 1];
    let mut new_grad = vec![0.0; n + 1];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iter {
        let g2 = dot(&grad, &grad);
        if g2.sqrt() < config.grad_tol {
            converged = true;
            break;
        }
        if let Some((t0, g0)) = &prev {
            let s: Vec<f64> = theta.iter().zip(t0).map(|(a, b)| a - b).collect();
            let yv: Vec<f64> = grad.iter().zip(g0).map(|(a, b)| a - b).collect();
            let (ss, sy) = (dot(&s, &s), dot(&s, &yv));
            if sy > 0.0 && (ss / sy).is_finite() {
                alpha = ss / sy;
            }
        } else {
            alpha = 1.0 / g2.sqrt().max(1.0);
        }
        alpha = alpha.clamp(1e-12, 1e12);
        let mut accepted = None;
        for _ in 0..80 {
            for ((t, &th), &g) in trial.iter_mut().zip(&theta).zip(&grad) {
                *t = th - alpha * g;
            }
            let ft = problem.objective(&trial[..n], trial[n]);
            if ft <= f - config.armijo * alpha * g2 && ft < f {
                accepted = Some(ft);
                break;
            }
            alpha *= 0.5;
        }
        if accepted.is_none() {
            break;
        }
        let ft = problem.gradient(&trial[..n], trial[n], &mut new_grad);
        prev = Some((theta.clone(), grad.clone()));
        std::mem::swap(&mut theta, &mut trial);
        std::mem::swap(&mut grad, &mut new_grad);
        f = ft;
        trace.push(f);
        iterations += 1;
    }
    if !f.is_finite() || theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("linear model diverged".into()));
    }
    let bias = theta.pop().expect("bias slot");
    Ok(LinearModel { weights: theta, bias, loss_kind, l2_lambda, iterations, converged, objective_trace: trace })
}

impl LinearModel {
    pub fn margin(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.weights.len() {
            return Err(Error::data(format!("feature vector of {} for a model of {}", x.len(), self.weights.len())));
        }
        Ok(self.bias + dot(&self.weights, x))
    }

    /// One score per row.
    pub fn predict(&self, x: &Array2<f64>) -> Result<Vec<f64>> {
        x.rows().into_iter().map(|r| predict_linear(self, r.as_slice().expect("row-major rows"))).collect()
    }

    /// Regularized training objective at the current parameters.
    pub fn objective(&self, x: &Array2<f64>, y: &[u8]) -> Result<f64> {
        check_xy(x, y)?;
        let x = x.as_standard_layout();
        let p = Problem {
            x: x.as_slice().expect("standard layout"),
            n: x.ncols(),
            signs: y.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect(),
            kind: self.loss_kind,
            lambda: self.l2_lambda,
        };
        Ok(p.objective(&self.weights, self.bias))
    }
}

/// `sigmoid(w·x + b)` for both loss kinds; for the SVM this is just a
/// monotone map of the margin.
pub fn predict_linear(model: &LinearModel, x: &[f64]) -> Result<f64> {
    Ok(sigmoid(model.margin(x)?))
}

/// Objective and gradient `(dw, db)` at arbitrary parameters.
pub fn objective_and_gradient(
    x: &Array2<f64>,
    y: &[u8],
    loss_kind: LossKind,
    l2_lambda: f64,
    w: &[f64],
    b: f64,
) -> Result<(f64, Vec<f64>, f64)> {
    check_xy(x, y)?;
    let x = x.as_standard_layout();
    let n = x.ncols();
    let p = Problem {
        x: x.as_slice().expect("standard layout"),
        n,
        signs: y.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect(),
        kind: loss_kind,
        lambda: l2_lambda,
    };
    let mut g = vec![0.0; n + 1];
    let f = p.gradient(w, b, &mut g);
    let gb = g.pop().expect("bias slot");
    Ok((f, g, gb))
}
