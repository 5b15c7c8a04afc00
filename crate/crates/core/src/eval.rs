//! Validation split, nested training sets, metrics and the two experiments.
//!
//! Each class is shuffled once; its first 200 samples are validation and the
//! next 1800 form an ordered pool whose prefixes are Sets A to F. Metrics use
//! the convention that a zero denominator yields 0.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CsiSample, Dataset, PostureLabel};
use crate::error::{Error, Result};
use crate::model::{train_model, ModelKind, ModelSpec, TrainedModel};
use crate::rng::derived_rng;

const K: usize = PostureLabel::COUNT;
pub const VALIDATION_PER_CLASS: usize = 200;
pub const SET_NAMES: [&str; 6] = ["A", "B", "C", "D", "E", "F"];
pub const SET_SIZES: [usize; 6] = [300, 600, 900, 1200, 1500, 1800];
pub const REPORT_SCHEMA: u32 = 1;

/// Index of a set name (`"A"` to `"F"`, any case).
pub fn set_index(name: &str) -> Option<usize> {
    SET_NAMES.iter().position(|s| s.eq_ignore_ascii_case(name))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    /// Dataset indices, class-major.
    pub validation: Vec<usize>,
    /// Per class, the ordered training pool; Set `s` is its first
    /// `SET_SIZES[s]` entries.
    pub pools: [Vec<usize>; K],
}

impl SplitPlan {
    /// Dataset indices of training set `set` (0 = A), class-major.
    pub fn training(&self, set: usize) -> Vec<usize> {
        let n = SET_SIZES[set];
        self.pools.iter().flat_map(|p| p[..n].iter().copied()).collect()
    }
}

/// Shuffles each class with a stream derived from `seed`, holds out 200 per
/// class and keeps the next 1800 as the nested training pool.
pub fn make_split(data: &Dataset, seed: u64) -> Result<SplitPlan> {
    let need = VALIDATION_PER_CLASS + SET_SIZES[SET_SIZES.len() - 1];
    let mut by_class: [Vec<usize>; K] = Default::default();
    for (i, s) in data.samples.iter().enumerate() {
        by_class[s.label().index()].push(i);
    }
    let mut validation = Vec::with_capacity(K * VALIDATION_PER_CLASS);
    let mut pools: [Vec<usize>; K] = Default::default();
    for (c, idx) in by_class.iter_mut().enumerate() {
        if idx.len() < need {
            return Err(Error::Protocol(format!(
                "class '{}' has {} samples, the protocol needs {need}",
                PostureLabel::from_index(c),
                idx.len()
            )));
        }
        idx.shuffle(&mut derived_rng(seed, c as u64));
        validation.extend_from_slice(&idx[..VALIDATION_PER_CLASS]);
        pools[c] = idx[VALIDATION_PER_CLASS..need].to_vec();
    }
    Ok(SplitPlan { seed, validation, pools })
}

/// Content hash of a sample's stored bits and label (FNV-1a).
pub fn sample_id(s: &CsiSample) -> u64 {
    let mut h = 0xCBF2_9CE4_8422_2325u64;
    let mut eat = |b: u8| h = (h ^ b as u64).wrapping_mul(0x0100_0000_01B3);
    eat(s.label().code());
    for v in s.raw() {
        v.to_bits().to_le_bytes().into_iter().for_each(&mut eat);
    }
    h
}

/// Fails if any validation sample, by index or by content, also appears in
/// a training set.
pub fn check_no_leakage(data: &Dataset, plan: &SplitPlan) -> Result<()> {
    let val_idx: HashSet<usize> = plan.validation.iter().copied().collect();
    let val_ids: HashSet<u64> = plan.validation.iter().map(|&i| sample_id(&data.samples[i])).collect();
    for (set, name) in SET_NAMES.iter().enumerate() {
        for i in plan.training(set) {
            if val_idx.contains(&i) || val_ids.contains(&sample_id(&data.samples[i])) {
                return Err(Error::Protocol(format!("sample {i} of Set {name} is also a validation sample")));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub dataset: String,
    /// `confusion[truth][predicted]`
    pub confusion: [[u64; K]; K],
    pub accuracy: f64,
    /// Indexed by posture: stand, sit, liedown.
    pub per_class: [ClassMetrics; K],
    pub macro_f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl EvalReport {
    pub fn from_confusion(model: impl Into<String>, dataset: impl Into<String>, confusion: [[u64; K]; K]) -> Self {
        let total: u64 = confusion.iter().flatten().sum();
        let trace: u64 = (0..K).map(|c| confusion[c][c]).sum();
        let mut per_class = [ClassMetrics {
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
            support: 0,
        }; K];
        for (c, m) in per_class.iter_mut().enumerate() {
            let tp = confusion[c][c];
            let predicted: u64 = (0..K).map(|t| confusion[t][c]).sum();
            let actual: u64 = confusion[c].iter().sum();
            m.precision = ratio(tp, predicted);
            m.recall = ratio(tp, actual);
            m.f1 = if m.precision + m.recall == 0.0 {
                0.0
            } else {
                2.0 * m.precision * m.recall / (m.precision + m.recall)
            };
            m.support = actual;
        }
        let macro_f1 = per_class.iter().map(|m| m.f1).sum::<f64>() / K as f64;
        Self {
            model: model.into(),
            dataset: dataset.into(),
            confusion,
            accuracy: ratio(trace, total),
            per_class,
            macro_f1,
        }
    }

    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }
}

/// Confusion counts, rows are the truth.
pub fn confusion_matrix(truth: &[PostureLabel], predicted: &[PostureLabel]) -> [[u64; K]; K] {
    let mut m = [[0u64; K]; K];
    for (t, p) in truth.iter().zip(predicted) {
        m[t.index()][p.index()] += 1;
    }
    m
}

pub fn evaluate(model: &TrainedModel, data: &Dataset) -> EvalReport {
    let predicted = model.predict_all(&data.samples);
    EvalReport::from_confusion(model.kind().name(), data.env_id.clone(), confusion_matrix(&data.labels(), &predicted))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveCell {
    pub model: String,
    pub set: String,
    pub train_per_class: usize,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveReport {
    pub schema: u32,
    pub env: String,
    pub seed: u64,
    pub validation_size: usize,
    /// Model-major, then Set A to F.
    pub cells: Vec<CurveCell>,
}

impl CurveReport {
    pub fn cell(&self, model: ModelKind, set: usize) -> Option<&CurveCell> {
        self.cells.iter().find(|c| c.model == model.name() && c.set == SET_NAMES[set])
    }
}

/// Trains every spec on every set and scores it on the shared validation
/// split. Returns the report and the Set-F models in spec order.
pub fn learning_curve(data: &Dataset, specs: &[ModelSpec], seed: u64) -> Result<(CurveReport, Vec<TrainedModel>)> {
    let plan = make_split(data, seed)?;
    check_no_leakage(data, &plan)?;
    let validation = data.subset(&plan.validation);
    let last = SET_SIZES.len() - 1;
    let jobs: Vec<(usize, usize)> = (0..specs.len()).flat_map(|m| (0..SET_SIZES.len()).map(move |s| (m, s))).collect();
    let results: Vec<Result<(CurveCell, Option<TrainedModel>)>> = jobs
        .par_iter()
        .map(|&(m, s)| {
            let train = data.subset(&plan.training(s));
            let model = train_model(&specs[m], &train)?;
            let cell = CurveCell {
                model: specs[m].kind.name().to_string(),
                set: SET_NAMES[s].to_string(),
                train_per_class: SET_SIZES[s],
                report: evaluate(&model, &validation),
            };
            Ok((cell, (s == last).then_some(model)))
        })
        .collect();
    let mut cells = Vec::with_capacity(jobs.len());
    let mut finals = Vec::with_capacity(specs.len());
    for r in results {
        let (cell, model) = r?;
        cells.push(cell);
        finals.extend(model);
    }
    let report = CurveReport {
        schema: REPORT_SCHEMA,
        env: data.env_id.clone(),
        seed,
        validation_size: validation.len(),
        cells,
    };
    Ok((report, finals))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossEnvReport {
    pub schema: u32,
    pub env: String,
    pub samples: usize,
    pub reports: Vec<EvalReport>,
    /// LDA trained on permuted labels; should sit at chance.
    pub control: Option<EvalReport>,
}

/// Scores each model on the other room's data.
pub fn cross_env(models: &[TrainedModel], env_b: &Dataset, control: Option<&TrainedModel>) -> CrossEnvReport {
    let reports = models.par_iter().map(|m| evaluate(m, env_b)).collect();
    CrossEnvReport {
        schema: REPORT_SCHEMA,
        env: env_b.env_id.clone(),
        samples: env_b.len(),
        reports,
        control: control.map(|m| {
            let mut r = evaluate(m, env_b);
            r.model = "control".into();
            r
        }),
    }
}

/// LDA on `train` with its labels randomly permuted.
pub fn shuffled_control(train: &Dataset, seed: u64) -> Result<TrainedModel> {
    let mut labels = train.labels();
    labels.shuffle(&mut derived_rng(seed, 0xC0_47_01));
    let samples = train.samples.iter().zip(labels).map(|(s, l)| s.clone().with_label(l)).collect();
    train_model(&ModelSpec::new(ModelKind::Lda, seed), &Dataset::new(train.env_id.clone(), samples))
}

pub const CSV_HEADER: &str = "model,set,train_per_class,dataset,samples,accuracy,macro_f1,precision_stand,recall_stand,f1_stand,precision_sit,recall_sit,f1_sit,precision_liedown,recall_liedown,f1_liedown";

pub fn csv_row(set: &str, train_per_class: usize, r: &EvalReport) -> String {
    let mut row = format!("{},{set},{train_per_class},{},{},{},{}", r.model, r.dataset, r.total(), r.accuracy, r.macro_f1);
    for m in &r.per_class {
        row.push_str(&format!(",{},{},{}", m.precision, m.recall, m.f1));
    }
    row
}

pub fn curve_csv(report: &CurveReport) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for c in &report.cells {
        out.push_str(&csv_row(&c.set, c.train_per_class, &c.report));
        out.push('\n');
    }
    out
}

/// One row per model plus the control when present; `set` names the
/// training set the models came from.
pub fn cross_env_csv(report: &CrossEnvReport, set: &str, train_per_class: usize) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in report.reports.iter().chain(&report.control) {
        out.push_str(&csv_row(set, train_per_class, r));
        out.push('\n');
    }
    out
}
