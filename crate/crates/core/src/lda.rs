//! Linear discriminant analysis with a shared, ridge-regularized covariance.
//!
//! Each class gets a linear score `delta_c(x) = w_c' x + w0_c` with
//! `w_c = S^-1 mu_c` and `w0_c = -1/2 mu_c' S^-1 mu_c + ln pi_c`, where `S` is
//! the pooled within-class covariance. For two classes the decision direction
//! `w_1 - w_2` is `S^-1 (mu_1 - mu_2)`.

use nalgebra::{DMatrix, DVector};

use crate::data::PostureLabel;
use crate::error::{Error, Result};

pub const DEFAULT_RIDGE: f64 = 1e-6;
/// Relative tolerance under which two discriminant scores count as tied.
pub const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct LdaModel {
    /// Class indices with a discriminant, ascending.
    pub classes: Vec<usize>,
    pub means: Vec<Vec<f64>>,
    pub priors: Vec<f64>,
    /// Regularized pooled covariance, row-major `d x d`.
    pub scatter: Vec<f64>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
}

impl LdaModel {
    pub fn dims(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    /// `delta_c(x)` for each class in [`LdaModel::classes`].
    pub fn discriminants(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| crate::svm::dot(w, x) + b)
            .collect()
    }

    pub fn predict_index(&self, x: &[f64]) -> usize {
        let scores = self.discriminants(x);
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let cut = max - TIE_TOLERANCE * max.abs().max(1.0);
        let pos = scores.iter().position(|&s| s >= cut).expect("at least one class");
        self.classes[pos]
    }

    pub fn predict(&self, x: &[f64]) -> PostureLabel {
        PostureLabel::from_index(self.predict_index(x))
    }
}

/// Fits the model. `labels` are class indices in `0..3`.
pub fn fit_lda(x: &[Vec<f64>], labels: &[usize], ridge: f64) -> Result<LdaModel> {
    if x.len() != labels.len() {
        return Err(Error::Dimension {
            expected: x.len(),
            actual: labels.len(),
        });
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::Precondition(format!("ridge must be >= 0, got {ridge}")));
    }
    let d = x.first().map_or(0, Vec::len);
    let mut counts = [0usize; PostureLabel::COUNT];
    for (row, &l) in x.iter().zip(labels) {
        if l >= PostureLabel::COUNT {
            return Err(Error::Precondition(format!("class index {l} out of range")));
        }
        if row.len() != d {
            return Err(Error::Dimension {
                expected: d,
                actual: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite feature".into()));
        }
        counts[l] += 1;
    }
    let classes: Vec<usize> = (0..PostureLabel::COUNT).filter(|&c| counts[c] > 0).collect();
    if classes.len() < 2 {
        return Err(Error::DegenerateData("LDA needs at least two classes".into()));
    }
    if let Some(&c) = classes.iter().find(|&&c| counts[c] < 2) {
        return Err(Error::DegenerateData(format!("class {c} has fewer than 2 samples")));
    }

    let mut means = vec![vec![0.0; d]; PostureLabel::COUNT];
    for (row, &l) in x.iter().zip(labels) {
        for (m, v) in means[l].iter_mut().zip(row) {
            *m += v;
        }
    }
    for &c in &classes {
        means[c].iter_mut().for_each(|m| *m /= counts[c] as f64);
    }

    // Pooled within-class covariance, accumulated on centered rows.
    let mut centered = DMatrix::<f64>::zeros(x.len(), d);
    for (i, (row, &l)) in x.iter().zip(labels).enumerate() {
        for j in 0..d {
            centered[(i, j)] = row[j] - means[l][j];
        }
    }
    let dof = (x.len() - classes.len()) as f64;
    let mut s = centered.tr_mul(&centered) / dof;
    let mean_diag = s.trace() / d as f64;
    let shift = ridge * if mean_diag > 0.0 { mean_diag } else { 1.0 };
    for j in 0..d {
        s[(j, j)] += shift;
    }
    s = (&s + s.transpose()) * 0.5;

    let chol = s
        .clone()
        .cholesky()
        .ok_or_else(|| Error::DegenerateData("pooled covariance is not positive definite; raise the ridge".into()))?;

    let n = x.len() as f64;
    let mut weights = Vec::with_capacity(classes.len());
    let mut biases = Vec::with_capacity(classes.len());
    let mut priors = Vec::with_capacity(classes.len());
    for &c in &classes {
        let mu = DVector::from_column_slice(&means[c]);
        let w = chol.solve(&mu);
        let prior = counts[c] as f64 / n;
        biases.push(-0.5 * mu.dot(&w) + prior.ln());
        weights.push(w.as_slice().to_vec());
        priors.push(prior);
    }
    let scatter = s.transpose().as_slice().to_vec();
    Ok(LdaModel {
        means: classes.iter().map(|&c| means[c].clone()).collect(),
        classes,
        priors,
        scatter,
        weights,
        biases,
    })
}
