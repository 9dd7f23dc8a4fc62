//! Softmax-linear multiclass model fit by full-batch gradient descent with
//! backtracking line search on the multinomial log-loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Options for the softmax-linear fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearOptions {
    /// Polynomial basis degree applied to every raw feature.
    pub degree: usize,
    pub max_iters: usize,
    /// Convergence threshold on the gradient max-norm.
    pub tolerance: f64,
    /// L2 penalty on the weights (0 = none).
    pub ridge: f64,
}

impl Default for LinearOptions {
    fn default() -> Self {
        LinearOptions {
            degree: 3,
            max_iters: 500,
            tolerance: 1e-6,
            ridge: 0.0,
        }
    }
}

/// Fitted softmax-linear model over an expanded, standardized basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub degree: usize,
    /// Per-basis-column means and scales used for standardization.
    pub feature_means: Vec<f64>,
    pub feature_scales: Vec<f64>,
    /// Row-major (n_classes x (1 + n_basis)) weights; column 0 is the intercept.
    pub weights: Vec<f64>,
    pub n_classes: usize,
    pub converged: bool,
    pub iterations: usize,
}

/// Expand raw features into the polynomial basis: x, x^2, ..., x^degree for
/// every raw feature, preserving feature order.
pub fn polynomial_basis(row: &[f64], degree: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(row.len() * degree);
    for &x in row {
        let mut pow = 1.0;
        for _ in 0..degree {
            pow *= x;
            out.push(pow);
        }
    }
    out
}

fn standardize(columns: usize, rows: &mut [Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let mut means = vec![0.0; columns];
    for row in rows.iter() {
        for (j, &v) in row.iter().enumerate() {
            means[j] += v;
        }
    }
    for m in &mut means {
        *m /= n;
    }
    let mut scales = vec![0.0; columns];
    for row in rows.iter() {
        for (j, &v) in row.iter().enumerate() {
            scales[j] += (v - means[j]).powi(2);
        }
    }
    for s in &mut scales {
        *s = (*s / n).sqrt();
        if *s < 1e-12 {
            *s = 1.0; // constant column: leave centered values at zero
        }
    }
    for row in rows.iter_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - means[j]) / scales[j];
        }
    }
    (means, scales)
}

/// Row-wise softmax of the linear scores for one design row.
fn scores_to_probs(scores: &mut [f64]) {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        total += *s;
    }
    for s in scores.iter_mut() {
        *s /= total;
    }
}

/// Mean multinomial log-loss and its gradient at `weights`.
///
/// `design` rows carry an implicit leading 1 for the intercept; `weights` is
/// row-major (n_classes x (1 + n_cols)).
pub fn multinomial_loss_and_grad(
    design: &[Vec<f64>],
    labels: &[usize],
    n_classes: usize,
    weights: &[f64],
    ridge: f64,
) -> (f64, Vec<f64>) {
    let n = design.len();
    let n_cols = design.first().map_or(0, |r| r.len()) + 1;
    debug_assert_eq!(weights.len(), n_classes * n_cols);
    let mut grad = vec![0.0; weights.len()];
    let mut loss = 0.0;
    let mut probs = vec![0.0; n_classes];
    for (row, &label) in design.iter().zip(labels) {
        for (c, p) in probs.iter_mut().enumerate() {
            let w = &weights[c * n_cols..(c + 1) * n_cols];
            let mut s = w[0];
            for (j, &v) in row.iter().enumerate() {
                s += w[j + 1] * v;
            }
            *p = s;
        }
        scores_to_probs(&mut probs);
        loss -= probs[label].max(1e-300).ln();
        for (c, &p) in probs.iter().enumerate() {
            let indicator = f64::from(c == label);
            let delta = p - indicator;
            let g = &mut grad[c * n_cols..(c + 1) * n_cols];
            g[0] += delta;
            for (j, &v) in row.iter().enumerate() {
                g[j + 1] += delta * v;
            }
        }
    }
    let inv_n = 1.0 / n as f64;
    loss *= inv_n;
    for g in &mut grad {
        *g *= inv_n;
    }
    if ridge > 0.0 {
        for (w, g) in weights.iter().zip(grad.iter_mut()) {
            *g += ridge * w;
        }
        loss += 0.5 * ridge * weights.iter().map(|w| w * w).sum::<f64>();
    }
    (loss, grad)
}

/// Fit the model. `features` are raw rows; basis expansion and
/// standardization happen inside and are baked into the returned model.
pub fn fit(
    features: &[Vec<f64>],
    labels: &[usize],
    n_classes: usize,
    options: &LinearOptions,
) -> Result<LinearModel> {
    if options.degree == 0 {
        return Err(Error::config("basis degree must be >= 1"));
    }
    let mut design: Vec<Vec<f64>> = features
        .iter()
        .map(|row| polynomial_basis(row, options.degree))
        .collect();
    let n_basis = design.first().map_or(0, |r| r.len());
    let (means, scales) = standardize(n_basis, &mut design);

    let n_cols = n_basis + 1;
    let mut weights = vec![0.0; n_classes * n_cols];
    let mut iterations = 0;
    let mut converged = false;
    let (mut loss, mut grad) =
        multinomial_loss_and_grad(&design, labels, n_classes, &weights, options.ridge);
    let mut step = 1.0f64;
    while iterations < options.max_iters {
        let grad_norm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if grad_norm < options.tolerance {
            converged = true;
            break;
        }
        // Backtracking line search: halve until the Armijo condition holds,
        // so the loss is non-increasing across iterations.
        let grad_sq: f64 = grad.iter().map(|g| g * g).sum();
        let mut accepted = false;
        for _ in 0..60 {
            let candidate: Vec<f64> = weights
                .iter()
                .zip(&grad)
                .map(|(w, g)| w - step * g)
                .collect();
            let (new_loss, new_grad) =
                multinomial_loss_and_grad(&design, labels, n_classes, &candidate, options.ridge);
            if new_loss <= loss - 1e-4 * step * grad_sq {
                weights = candidate;
                loss = new_loss;
                grad = new_grad;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break; // step underflow: no further descent possible
        }
        step = (step * 2.0).min(1024.0);
        iterations += 1;
    }

    Ok(LinearModel {
        degree: options.degree,
        feature_means: means,
        feature_scales: scales,
        weights,
        n_classes,
        converged,
        iterations,
    })
}

impl LinearModel {
    /// Class-probability row for one raw feature row.
    pub fn predict_row(&self, row: &[f64]) -> Vec<f64> {
        let basis = polynomial_basis(row, self.degree);
        let n_cols = basis.len() + 1;
        let mut probs = vec![0.0; self.n_classes];
        for (c, p) in probs.iter_mut().enumerate() {
            let w = &self.weights[c * n_cols..(c + 1) * n_cols];
            let mut s = w[0];
            for (j, &v) in basis.iter().enumerate() {
                s += w[j + 1] * (v - self.feature_means[j]) / self.feature_scales[j];
            }
            *p = s;
        }
        scores_to_probs(&mut probs);
        probs
    }

    pub fn n_raw_features(&self) -> usize {
        self.feature_means.len() / self.degree
    }
}
