//! Tensor transformations feeding the classifiers.

use serde::{Deserialize, Serialize};

use crate::data::{amp_offset, CsiSample, ANTENNA_PAIRS, RX_ANTENNAS, SUBCARRIERS, TENSOR_LEN, TIME_SLOTS};
use crate::error::{Error, Result};

pub const CLASSICAL_LEN: usize = SUBCARRIERS * ANTENNA_PAIRS;
pub const RAW_LEN: usize = TENSOR_LEN;
pub const CNN_INPUT_LEN: usize = ANTENNA_PAIRS * SUBCARRIERS * TIME_SLOTS;
/// Lower bound applied to per-dimension standard deviations.
pub const STD_FLOOR: f64 = 1e-8;

/// Which extractor produced a feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureKind {
    /// Time-averaged amplitude per (subcarrier, antenna pair), 270 values.
    Classical,
    /// Full tensor flatten including phase, 2700 values.
    Raw,
}

impl FeatureKind {
    pub fn len(self) -> usize {
        match self {
            FeatureKind::Classical => CLASSICAL_LEN,
            FeatureKind::Raw => RAW_LEN,
        }
    }

    pub fn extract(self, sample: &CsiSample) -> FeatureVector {
        match self {
            FeatureKind::Classical => extract_classical(sample),
            FeatureKind::Raw => extract_raw(sample),
        }
    }

    pub fn code(self) -> u8 {
        match self {
            FeatureKind::Classical => 0,
            FeatureKind::Raw => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(FeatureKind::Classical),
            1 => Some(FeatureKind::Raw),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub kind: FeatureKind,
}

/// Amplitude-only CNN input laid out as `[pair][subcarrier][time]`, where
/// `pair = tx * 3 + rx`.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnInput {
    pub data: Vec<f64>,
}

impl CnnInput {
    #[inline]
    pub fn at(&self, pair: usize, k: usize, t: usize) -> f64 {
        self.data[(pair * SUBCARRIERS + k) * TIME_SLOTS + t]
    }
}

pub fn to_cnn_input(sample: &CsiSample) -> CnnInput {
    let mut data = vec![0.0; CNN_INPUT_LEN];
    for pair in 0..ANTENNA_PAIRS {
        let (tx, rx) = (pair / RX_ANTENNAS, pair % RX_ANTENNAS);
        for k in 0..SUBCARRIERS {
            for t in 0..TIME_SLOTS {
                data[(pair * SUBCARRIERS + k) * TIME_SLOTS + t] = sample.amplitude(t, k, tx, rx);
            }
        }
    }
    CnnInput { data }
}

/// `feature[k * 9 + pair]` is the mean amplitude over the time slots.
pub fn extract_classical(sample: &CsiSample) -> FeatureVector {
    let mut values = vec![0.0; CLASSICAL_LEN];
    for t in 0..TIME_SLOTS {
        for k in 0..SUBCARRIERS {
            for pair in 0..ANTENNA_PAIRS {
                values[k * ANTENNA_PAIRS + pair] += sample.amplitude(t, k, pair / RX_ANTENNAS, pair % RX_ANTENNAS);
            }
        }
    }
    for v in &mut values {
        *v /= TIME_SLOTS as f64;
    }
    FeatureVector {
        values,
        kind: FeatureKind::Classical,
    }
}

pub fn extract_raw(sample: &CsiSample) -> FeatureVector {
    FeatureVector {
        values: sample.raw().iter().map(|&v| f64::from(v)).collect(),
        kind: FeatureKind::Raw,
    }
}

/// Inverse of [`extract_raw`]: reshapes a flat vector into `[t][k][tx][rx][2]`.
pub fn unflatten_raw(values: &[f64]) -> Result<Vec<[[[[f64; 2]; 3]; 3]; SUBCARRIERS]>> {
    if values.len() != RAW_LEN {
        return Err(Error::Dimension {
            expected: RAW_LEN,
            actual: values.len(),
        });
    }
    let mut out = vec![[[[[0.0; 2]; 3]; 3]; SUBCARRIERS]; TIME_SLOTS];
    for (t, slot) in out.iter_mut().enumerate() {
        for (k, sub) in slot.iter_mut().enumerate() {
            for (tx, row) in sub.iter_mut().enumerate() {
                for (rx, cell) in row.iter_mut().enumerate() {
                    let o = amp_offset(t, k, tx, rx);
                    *cell = [values[o], values[o + 1]];
                }
            }
        }
    }
    Ok(out)
}

/// Per-dimension z-score fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    pub fn fit(train: &[Vec<f64>]) -> Result<Self> {
        let first = train
            .first()
            .ok_or_else(|| Error::Precondition("cannot standardize an empty training set".into()))?;
        let d = first.len();
        let n = train.len() as f64;
        let mut mean = vec![0.0; d];
        for row in train {
            if row.len() != d {
                return Err(Error::Dimension {
                    expected: d,
                    actual: row.len(),
                });
            }
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for row in train {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect();
        Ok(Self { mean, std })
    }

    pub fn dims(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn transform_all(&self, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        xs.iter().map(|x| self.transform(x)).collect()
    }
}

/// Fits a [`Scaler`] on `train` and returns it with the transformed vectors.
pub fn standardize(train: &[FeatureVector]) -> Result<(Scaler, Vec<FeatureVector>)> {
    let rows: Vec<Vec<f64>> = train.iter().map(|f| f.values.clone()).collect();
    let scaler = Scaler::fit(&rows)?;
    let out = train
        .iter()
        .map(|f| FeatureVector {
            values: scaler.transform(&f.values),
            kind: f.kind,
        })
        .collect();
    Ok((scaler, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{PostureLabel, TX_ANTENNAS};
    use proptest::prelude::*;

    fn sample_from(f: impl Fn(usize, usize, usize, usize) -> f64) -> CsiSample {
        CsiSample::from_fn(PostureLabel::Sit, |t, k, tx, rx| (f(t, k, tx, rx), 0.25)).unwrap()
    }

    #[test]
    fn zero_tensor_gives_zero_cnn_input() {
        let x = to_cnn_input(&sample_from(|_, _, _, _| 0.0));
        assert!(x.data.iter().all(|&v| v == 0.0));
        assert_eq!(x.data.len(), 1350);
    }

    #[test]
    fn single_hot_cell_maps_to_pair_five() {
        let x = to_cnn_input(&sample_from(|t, k, tx, rx| if (t, k, tx, rx) == (0, 0, 1, 2) { 1.0 } else { 0.0 }));
        // Brute force over the whole input: exactly one nonzero at [5][0][0].
        let mut hits = vec![];
        for p in 0..9 {
            for k in 0..30 {
                for t in 0..5 {
                    if x.at(p, k, t) != 0.0 {
                        hits.push((p, k, t));
                    }
                }
            }
        }
        assert_eq!(hits, vec![(5, 0, 0)]);
    }

    #[test]
    fn cnn_input_inverse_map_recovers_every_amplitude() {
        let s = sample_from(|t, k, tx, rx| (t * 1000 + k * 10 + tx * 3 + rx) as f64);
        let x = to_cnn_input(&s);
        let total: f64 = x.data.iter().sum();
        let mut expect = 0.0;
        for t in 0..TIME_SLOTS {
            for k in 0..SUBCARRIERS {
                for tx in 0..TX_ANTENNAS {
                    for rx in 0..RX_ANTENNAS {
                        assert_eq!(x.at(tx * 3 + rx, k, t), s.amplitude(t, k, tx, rx));
                        expect += s.amplitude(t, k, tx, rx);
                    }
                }
            }
        }
        assert_eq!(total, expect);
    }

    #[test]
    fn classical_constant_and_mean() {
        let f = extract_classical(&sample_from(|_, _, _, _| 2.5));
        assert_eq!(f.values.len(), 270);
        assert!(f.values.iter().all(|&v| v == 2.5));

        let f = extract_classical(&sample_from(|t, k, tx, rx| if (k, tx, rx) == (7, 2, 0) { (t + 1) as f64 } else { 0.0 }));
        assert_eq!(f.values[7 * 9 + 6], 3.0);
        assert_eq!(f.values.iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn classical_matches_independent_loop_order() {
        let s = sample_from(|t, k, tx, rx| ((t * 7 + k * 13 + tx * 5 + rx * 11) % 17) as f64 * 0.37);
        let f = extract_classical(&s);
        for pair in 0..9 {
            for k in 0..30 {
                let mut acc = 0.0;
                for t in 0..5 {
                    acc += s.amplitude(t, k, pair / 3, pair % 3);
                }
                assert!((f.values[k * 9 + pair] - acc / 5.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn raw_matches_storage_order_and_unflattens() {
        let s = sample_from(|t, k, tx, rx| (t + k + tx + rx) as f64);
        let f = extract_raw(&s);
        assert_eq!(f.values.len(), 2700);
        let bytes = crate::data::csd::to_bytes(&crate::data::Dataset::new("", vec![s.clone()])).unwrap();
        let body = &bytes[crate::data::csd::FIXED_HEADER_LEN + 1..];
        for (i, v) in f.values.iter().enumerate() {
            let b = &body[i * 4..i * 4 + 4];
            assert_eq!(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64, *v);
        }
        let cube = unflatten_raw(&f.values).unwrap();
        assert_eq!(cube[3][17][1][2], [s.amplitude(3, 17, 1, 2), s.phase(3, 17, 1, 2)]);
    }

    #[test]
    fn amplitude_extractors_never_read_phase() {
        let mut v: Vec<f32> = (0..TENSOR_LEN).map(|i| (i % 11) as f32).collect();
        for i in (1..TENSOR_LEN).step_by(2) {
            v[i] = f32::NAN;
        }
        let s = CsiSample::new_unchecked(v, PostureLabel::Stand);
        assert!(extract_classical(&s).values.iter().all(|v| v.is_finite()));
        assert!(to_cnn_input(&s).data.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn standardize_cases() {
        let fv = |v: Vec<f64>| FeatureVector {
            values: v,
            kind: FeatureKind::Classical,
        };
        let (_, out) = standardize(&[fv(vec![3.0, -1.0])]).unwrap();
        assert_eq!(out[0].values, vec![0.0, 0.0]);

        let (_, out) = standardize(&[fv(vec![0.0, 0.0]), fv(vec![2.0, 2.0])]).unwrap();
        assert_eq!(out[0].values, vec![-1.0, -1.0]);
        assert_eq!(out[1].values, vec![1.0, 1.0]);

        assert!(matches!(standardize(&[]), Err(Error::Precondition(_))));
    }

    proptest! {
        #[test]
        fn standardized_training_mean_is_zero(rows in prop::collection::vec(prop::collection::vec(-100.0f64..100.0, 4), 2..30)) {
            let scaler = Scaler::fit(&rows).unwrap();
            let t = scaler.transform_all(&rows);
            for j in 0..4 {
                let m: f64 = t.iter().map(|r| r[j]).sum::<f64>() / t.len() as f64;
                prop_assert!(m.abs() < 1e-10);
            }
            // Same scaler, same output: the transform holds no state.
            prop_assert_eq!(t, scaler.transform_all(&rows));
        }
    }
}
