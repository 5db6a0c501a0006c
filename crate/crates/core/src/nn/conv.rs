use crate::rng::SeededRng;
use crate::{Error, Result};

/// `K` filters of width `F` over `D_in` input columns.
///
/// `weights` is laid out `[k][f][d]`, so each filter is one contiguous
/// `F * D_in` slice that lines up with a window of consecutive input rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1dBank {
    pub filter_size: usize,
    pub filter_count: usize,
    pub input_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv1dBank {
    pub fn zeros(filter_size: usize, filter_count: usize, input_dim: usize) -> Self {
        Conv1dBank {
            filter_size,
            filter_count,
            input_dim,
            weights: vec![0.0; filter_count * filter_size * input_dim],
            bias: vec![0.0; filter_count],
        }
    }

    /// Weights ~ U(±sqrt(6 / (F*D_in + K))), zero bias.
    pub fn glorot(filter_size: usize, filter_count: usize, input_dim: usize, rng: &mut SeededRng) -> Self {
        let mut bank = Self::zeros(filter_size, filter_count, input_dim);
        let limit = (6.0 / (filter_size * input_dim + filter_count) as f64).sqrt();
        bank.weights.iter_mut().for_each(|w| *w = rng.uniform_range(-limit, limit));
        bank
    }

    #[inline]
    pub fn span(&self) -> usize {
        self.filter_size * self.input_dim
    }

    #[inline]
    pub fn filter(&self, k: usize) -> &[f64] {
        &self.weights[k * self.span()..(k + 1) * self.span()]
    }

    /// Pre-activations for the window starting at input row `t`.
    #[inline]
    pub(crate) fn window(&self, x: &[f64], t: usize, out: &mut [f64]) {
        let w = &x[t * self.input_dim..t * self.input_dim + self.span()];
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.bias[k] + dot(self.filter(k), w);
        }
    }
}

/// Fixed-order dot product. Every caller sees the same summation order, so
/// a window gives bit-identical results wherever it is evaluated.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        s += x * y;
    }
    s
}

/// Valid convolution over the rows of the `t × D_in` matrix `x`, giving a
/// `(t - F + 1) × K` pre-activation matrix.
pub fn conv1d_forward(x: &[f64], t: usize, bank: &Conv1dBank) -> Result<Vec<f64>> {
    if x.len() != t * bank.input_dim {
        return Err(Error::data(format!("input holds {} values, expected {t} x {}", x.len(), bank.input_dim)));
    }
    if t < bank.filter_size {
        return Err(Error::Geometry { len: t, filter: bank.filter_size });
    }
    let positions = t - bank.filter_size + 1;
    let mut out = vec![0.0; positions * bank.filter_count];
    for (p, row) in out.chunks_exact_mut(bank.filter_count).enumerate() {
        bank.window(x, p, row);
    }
    Ok(out)
}

/// Column maxima of the `L × K` matrix `y` over unmasked rows (`mask[t]`
/// true means row `t` takes part). Returns the maxima and, per column, the
/// earliest row attaining it.
pub fn max_pool_time(y: &[f64], k: usize, mask: &[bool]) -> Result<(Vec<f64>, Vec<usize>)> {
    if k == 0 || y.len() != mask.len() * k {
        return Err(Error::data(format!("pooling input of {} values does not match {} rows x {k}", y.len(), mask.len())));
    }
    let mut pooled = vec![f64::NEG_INFINITY; k];
    let mut argmax = vec![usize::MAX; k];
    for (t, row) in y.chunks_exact(k).enumerate().filter(|&(t, _)| mask[t]) {
        for j in 0..k {
            if row[j] > pooled[j] || argmax[j] == usize::MAX {
                pooled[j] = row[j];
                argmax[j] = t;
            }
        }
    }
    if argmax.first() == Some(&usize::MAX) {
        return Err(Error::data("every pooling position is masked"));
    }
    Ok((pooled, argmax))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn scalar_filter() {
        let mut bank = Conv1dBank::zeros(1, 1, 1);
        bank.weights[0] = 2.0;
        assert_eq!(conv1d_forward(&[1.0, 2.0, 3.0], 3, &bank).unwrap(), vec![2.0, 4.0, 6.0]);
    }

    #[test]
    fn zero_bank_gives_zeros() {
        let bank = Conv1dBank::zeros(3, 4, 2);
        let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let y = conv1d_forward(&x, 10, &bank).unwrap();
        assert_eq!(y.len(), 8 * 4);
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn length_250_filter_3() {
        let bank = Conv1dBank::zeros(3, 2, 1);
        assert_eq!(conv1d_forward(&vec![0.0; 250], 250, &bank).unwrap().len(), 248 * 2);
    }

    #[test]
    fn explicit_sum() {
        // two input columns, width 2: out[t] = b + sum_f sum_d w[f][d] * x[t+f][d]
        let mut bank = Conv1dBank::zeros(2, 1, 2);
        bank.weights = vec![1.0, 2.0, 3.0, 4.0];
        bank.bias = vec![0.5];
        let x = [1.0, 0.0, 0.0, 1.0, 2.0, 2.0];
        assert_eq!(conv1d_forward(&x, 3, &bank).unwrap(), vec![0.5 + 1.0 + 4.0, 0.5 + 2.0 + 6.0 + 8.0]);
    }

    #[test]
    fn too_short_is_geometry_error() {
        let bank = Conv1dBank::zeros(5, 1, 1);
        assert!(matches!(conv1d_forward(&[0.0; 4], 4, &bank), Err(Error::Geometry { len: 4, filter: 5 })));
    }

    #[test]
    fn pooling_cases() {
        assert_eq!(max_pool_time(&[1.0, 5.0, 3.0, 2.0], 2, &[true, true]).unwrap(), (vec![3.0, 5.0], vec![1, 0]));
        assert_eq!(max_pool_time(&[1.0, 5.0, 3.0, 2.0], 2, &[true, false]).unwrap(), (vec![1.0, 5.0], vec![0, 0]));
        let (p, a) = max_pool_time(&[0.7; 6], 2, &[true; 3]).unwrap();
        assert_eq!(p, vec![0.7, 0.7]);
        assert_eq!(a, vec![0, 0]);
        assert!(max_pool_time(&[1.0, 2.0], 2, &[false]).is_err());
    }

    proptest! {
        #[test]
        fn output_length_is_t_minus_f_plus_1(t in 1usize..300, f in 1usize..12) {
            prop_assume!(t >= f);
            let bank = Conv1dBank::zeros(f, 3, 2);
            let y = conv1d_forward(&vec![0.0; t * 2], t, &bank).unwrap();
            prop_assert_eq!(y.len(), (t - f + 1) * 3);
        }

        #[test]
        fn raising_one_activation_moves_only_its_column(
            vals in prop::collection::vec(-3.0f64..3.0, 12), row in 0usize..4, col in 0usize..3
        ) {
            let (before, _) = max_pool_time(&vals, 3, &[true; 4]).unwrap();
            let mut bumped = vals.clone();
            bumped[row * 3 + col] = before[col] + 1.0;
            let (after, arg) = max_pool_time(&bumped, 3, &[true; 4]).unwrap();
            for j in 0..3 {
                if j == col {
                    prop_assert_eq!(after[j], before[j] + 1.0);
                    prop_assert_eq!(arg[j], row);
                } else {
                    prop_assert_eq!(after[j], before[j]);
                }
            }
        }
    }
}
