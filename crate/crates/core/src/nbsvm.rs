//! Naive-Bayes feature preprocessing followed by a linear SVM.
//!
//! A Gaussian naive Bayes model is fitted per feature and class; every input
//! feature is then replaced by its three per-class log-likelihoods (shifted so
//! the largest is zero) and the expanded vector is classified by a one-vs-one
//! linear SVM.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::data::PostureLabel;
use crate::error::{Error, Result};
use crate::svm::{train_multiclass, KernelSpec, MulticlassSvm, SvmParams};

const K: usize = PostureLabel::COUNT;
/// Variance floor relative to the largest per-feature variance.
pub const VAR_SMOOTHING: f64 = 1e-9;
const ABSOLUTE_VAR_FLOOR: f64 = 1e-12;
/// Log densities are clamped here so far-off inputs stay finite.
const MIN_LOG_DENSITY: f64 = -1e100;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianNb {
    pub priors: [f64; K],
    /// `means[k][f]`
    pub means: Vec<Vec<f64>>,
    /// `vars[k][f]`, each at least `var_floor`.
    pub vars: Vec<Vec<f64>>,
    pub var_floor: f64,
}

impl GaussianNb {
    pub fn dims(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    #[inline]
    fn log_density(&self, k: usize, f: usize, v: f64) -> f64 {
        let var = self.vars[k][f];
        let d = v - self.means[k][f];
        (-0.5 * ((2.0 * PI * var).ln() + d * d / var)).max(MIN_LOG_DENSITY)
    }

    /// Joint log score `ln P(x|C_k) + ln P(C_k)` per class.
    pub fn log_joint(&self, x: &[f64]) -> [f64; K] {
        let mut out = [0.0; K];
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.priors[k].ln() + x.iter().enumerate().map(|(f, &v)| self.log_density(k, f, v)).sum::<f64>();
        }
        out
    }
}

/// Maximum-likelihood Gaussian per feature and class. `labels` are class
/// indices in `0..3`; every class needs at least two samples.
pub fn fit_nb(x: &[Vec<f64>], labels: &[usize]) -> Result<GaussianNb> {
    if x.len() != labels.len() {
        return Err(Error::Dimension {
            expected: x.len(),
            actual: labels.len(),
        });
    }
    let d = x.first().map_or(0, Vec::len);
    let mut counts = [0usize; K];
    let mut means = vec![vec![0.0; d]; K];
    for (row, &l) in x.iter().zip(labels) {
        if l >= K {
            return Err(Error::Precondition(format!("class index {l} out of range")));
        }
        if row.len() != d {
            return Err(Error::Dimension {
                expected: d,
                actual: row.len(),
            });
        }
        counts[l] += 1;
        for (m, v) in means[l].iter_mut().zip(row) {
            *m += v;
        }
    }
    if let Some(c) = (0..K).find(|&c| counts[c] < 2) {
        return Err(Error::DegenerateData(format!("class {c} has {} samples, need 2", counts[c])));
    }
    for k in 0..K {
        means[k].iter_mut().for_each(|m| *m /= counts[k] as f64);
    }
    let mut vars = vec![vec![0.0; d]; K];
    for (row, &l) in x.iter().zip(labels) {
        for ((s, v), m) in vars[l].iter_mut().zip(row).zip(&means[l]) {
            *s += (v - m) * (v - m);
        }
    }
    for k in 0..K {
        vars[k].iter_mut().for_each(|s| *s /= counts[k] as f64);
    }

    let n = x.len() as f64;
    let mut max_var: f64 = 0.0;
    for f in 0..d {
        let mean = x.iter().map(|r| r[f]).sum::<f64>() / n;
        let var = x.iter().map(|r| (r[f] - mean).powi(2)).sum::<f64>() / n;
        max_var = max_var.max(var);
    }
    let var_floor = if max_var > 0.0 {
        VAR_SMOOTHING * max_var
    } else {
        ABSOLUTE_VAR_FLOOR
    };
    for row in &mut vars {
        row.iter_mut().for_each(|v| *v = v.max(var_floor));
    }
    let mut priors = [0.0; K];
    for k in 0..K {
        priors[k] = counts[k] as f64 / n;
    }
    Ok(GaussianNb {
        priors,
        means,
        vars,
        var_floor,
    })
}

/// Posterior `P(C_k | x)`, normalized in log space.
pub fn nb_posterior(nb: &GaussianNb, x: &[f64]) -> [f64; K] {
    let lj = nb.log_joint(x);
    let max = lj.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + lj.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    let mut out = [0.0; K];
    for (o, v) in out.iter_mut().zip(lj) {
        *o = (v - lse).exp();
    }
    out
}

/// Per-feature, per-class log-likelihoods shifted so the largest of each
/// triple is zero; entry `f * 3 + k`.
pub fn nb_transform(nb: &GaussianNb, x: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len() * K);
    for (f, &v) in x.iter().enumerate() {
        let mut z = [0.0; K];
        for (k, zk) in z.iter_mut().enumerate() {
            *zk = nb.log_density(k, f, v);
        }
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        out.extend(z.iter().map(|zk| zk - max));
    }
    out
}

/// What the SVM stage sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NbFeatures {
    /// `3 * d` shifted per-feature log-likelihoods.
    Likelihoods,
    /// The three class posteriors.
    Posteriors,
    /// Raw input, bypassing naive Bayes.
    Identity,
}

impl NbFeatures {
    pub fn code(self) -> u8 {
        match self {
            NbFeatures::Likelihoods => 0,
            NbFeatures::Posteriors => 1,
            NbFeatures::Identity => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(NbFeatures::Likelihoods),
            1 => Some(NbFeatures::Posteriors),
            2 => Some(NbFeatures::Identity),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NbSvmModel {
    pub nb: GaussianNb,
    pub svm: MulticlassSvm,
    pub features: NbFeatures,
}

impl NbSvmModel {
    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        apply(&self.nb, self.features, x)
    }

    pub fn predict_index(&self, x: &[f64]) -> usize {
        self.svm.predict(&self.transform(x))
    }

    pub fn predict(&self, x: &[f64]) -> PostureLabel {
        PostureLabel::from_index(self.predict_index(x))
    }
}

fn apply(nb: &GaussianNb, features: NbFeatures, x: &[f64]) -> Vec<f64> {
    match features {
        NbFeatures::Likelihoods => nb_transform(nb, x),
        NbFeatures::Posteriors => nb_posterior(nb, x).to_vec(),
        NbFeatures::Identity => x.to_vec(),
    }
}

pub fn fit_nbsvm(x: &[Vec<f64>], labels: &[usize], features: NbFeatures, params: &SvmParams) -> Result<NbSvmModel> {
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite feature".into()));
    }
    let nb = fit_nb(x, labels)?;
    let z: Vec<Vec<f64>> = x.iter().map(|r| apply(&nb, features, r)).collect();
    let svm = train_multiclass(&z, labels, &KernelSpec::linear(), params)?;
    Ok(NbSvmModel { nb, svm, features })
}
