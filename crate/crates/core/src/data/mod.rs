//! CSI sample model and on-disk formats.
//!
//! A sample is a `(5, 30, 3, 3, 2)` tensor indexed by time slot, subcarrier,
//! transmit antenna, receive antenna and `{amplitude, phase}`. Values are held
//! at `f32` storage precision so that every in-memory sample survives a file
//! round trip bit for bit; numeric code reads them back as `f64`.

pub mod csd;
pub mod npy;

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TIME_SLOTS: usize = 5;
pub const SUBCARRIERS: usize = 30;
pub const TX_ANTENNAS: usize = 3;
pub const RX_ANTENNAS: usize = 3;
pub const ANTENNA_PAIRS: usize = TX_ANTENNAS * RX_ANTENNAS;
pub const TENSOR_SHAPE: [usize; 5] = [TIME_SLOTS, SUBCARRIERS, TX_ANTENNAS, RX_ANTENNAS, 2];
pub const TENSOR_LEN: usize = TIME_SLOTS * SUBCARRIERS * ANTENNA_PAIRS * 2;

/// Flat row-major offset of the amplitude entry at `(t, k, tx, rx)`; the phase
/// sits at the next offset.
#[inline]
pub fn amp_offset(t: usize, k: usize, tx: usize, rx: usize) -> usize {
    (((t * SUBCARRIERS + k) * TX_ANTENNAS + tx) * RX_ANTENNAS + rx) * 2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PostureLabel {
    Stand = 0,
    Sit = 1,
    LieDown = 2,
}

impl PostureLabel {
    pub const ALL: [PostureLabel; 3] = [PostureLabel::Stand, PostureLabel::Sit, PostureLabel::LieDown];
    pub const COUNT: usize = 3;

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(PostureLabel::Stand),
            1 => Some(PostureLabel::Sit),
            2 => Some(PostureLabel::LieDown),
            _ => None,
        }
    }

    pub fn from_index(index: usize) -> Self {
        Self::ALL[index]
    }

    pub fn name(self) -> &'static str {
        match self {
            PostureLabel::Stand => "stand",
            PostureLabel::Sit => "sit",
            PostureLabel::LieDown => "liedown",
        }
    }
}

impl fmt::Display for PostureLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PostureLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "stand" | "standing" | "0" => Ok(PostureLabel::Stand),
            "sit" | "sitting" | "1" => Ok(PostureLabel::Sit),
            "liedown" | "lie" | "lying" | "sleep" | "2" => Ok(PostureLabel::LieDown),
            other => Err(Error::Format(format!("unknown posture {other:?}"))),
        }
    }
}

/// Wraps a phase into `[-pi, pi)` and rounds it to the nearest `f32` that
/// still lies inside the interval when read back as `f64`.
pub fn canonical_phase(phase: f64) -> f32 {
    let mut p = (phase + PI).rem_euclid(2.0 * PI) - PI;
    if p >= PI {
        p -= 2.0 * PI;
    }
    let mut q = p as f32;
    // Rounding can land just outside; one step toward zero brings it back.
    if !(-PI..PI).contains(&f64::from(q)) {
        q = f32::from_bits(q.to_bits() - 1);
    }
    q
}

fn phase_in_range(p: f32) -> bool {
    let p = f64::from(p);
    (-PI..PI).contains(&p)
}

/// One labeled CSI capture.
#[derive(Clone, PartialEq)]
pub struct CsiSample {
    tensor: Box<[f32]>,
    label: PostureLabel,
}

impl fmt::Debug for CsiSample {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CsiSample")
            .field("label", &self.label)
            .field("len", &self.tensor.len())
            .finish()
    }
}

impl CsiSample {
    /// Builds a sample from stored values, validating every entry. Phases in
    /// `(-2pi, 2pi)` are wrapped into `[-pi, pi)`; anything else is rejected.
    pub fn from_f32(mut tensor: Vec<f32>, label: PostureLabel) -> Result<Self> {
        if tensor.len() != TENSOR_LEN {
            return Err(Error::Shape(format!(
                "sample tensor has {} entries, expected {TENSOR_LEN}",
                tensor.len()
            )));
        }
        for (i, pair) in tensor.chunks_exact_mut(2).enumerate() {
            let (amp, phase) = (pair[0], pair[1]);
            if !amp.is_finite() || !phase.is_finite() {
                return Err(Error::Data(format!("non-finite value at cell {i}")));
            }
            if amp < 0.0 {
                return Err(Error::Data(format!("negative amplitude {amp} at cell {i}")));
            }
            if !phase_in_range(phase) {
                let p = f64::from(phase);
                if p.abs() >= 2.0 * PI {
                    return Err(Error::Data(format!("phase {p} out of range at cell {i}")));
                }
                pair[1] = canonical_phase(p);
            }
        }
        Ok(Self {
            tensor: tensor.into_boxed_slice(),
            label,
        })
    }

    /// Builds a sample from `f64` values, rounding to storage precision.
    pub fn from_f64(tensor: &[f64], label: PostureLabel) -> Result<Self> {
        if tensor.len() != TENSOR_LEN {
            return Err(Error::Shape(format!(
                "sample tensor has {} entries, expected {TENSOR_LEN}",
                tensor.len()
            )));
        }
        let mut out = Vec::with_capacity(TENSOR_LEN);
        for pair in tensor.chunks_exact(2) {
            out.push(pair[0] as f32);
            out.push(if pair[1].is_finite() && pair[1].abs() < 2.0 * PI {
                canonical_phase(pair[1])
            } else {
                pair[1] as f32
            });
        }
        Self::from_f32(out, label)
    }

    /// Builds a sample from `(amplitude, phase)` closures over `(t, k, tx, rx)`.
    pub fn from_fn(label: PostureLabel, mut cell: impl FnMut(usize, usize, usize, usize) -> (f64, f64)) -> Result<Self> {
        let mut values = vec![0.0; TENSOR_LEN];
        for t in 0..TIME_SLOTS {
            for k in 0..SUBCARRIERS {
                for tx in 0..TX_ANTENNAS {
                    for rx in 0..RX_ANTENNAS {
                        let (a, p) = cell(t, k, tx, rx);
                        let o = amp_offset(t, k, tx, rx);
                        values[o] = a;
                        values[o + 1] = p;
                    }
                }
            }
        }
        Self::from_f64(&values, label)
    }

    /// Skips validation. Used to probe extractors with poisoned inputs.
    pub fn new_unchecked(tensor: Vec<f32>, label: PostureLabel) -> Self {
        assert_eq!(tensor.len(), TENSOR_LEN);
        Self {
            tensor: tensor.into_boxed_slice(),
            label,
        }
    }

    pub fn label(&self) -> PostureLabel {
        self.label
    }

    pub fn with_label(mut self, label: PostureLabel) -> Self {
        self.label = label;
        self
    }

    /// Row-major stored values.
    pub fn raw(&self) -> &[f32] {
        &self.tensor
    }

    #[inline]
    pub fn amplitude(&self, t: usize, k: usize, tx: usize, rx: usize) -> f64 {
        f64::from(self.tensor[amp_offset(t, k, tx, rx)])
    }

    #[inline]
    pub fn phase(&self, t: usize, k: usize, tx: usize, rx: usize) -> f64 {
        f64::from(self.tensor[amp_offset(t, k, tx, rx) + 1])
    }

    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.label == other.label
            && self
                .tensor
                .iter()
                .zip(other.tensor.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Ordered samples from one environment.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<CsiSample>,
    pub env_id: String,
}

impl Dataset {
    pub fn new(env_id: impl Into<String>, samples: Vec<CsiSample>) -> Self {
        Self {
            samples,
            env_id: env_id.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_counts(&self) -> [usize; PostureLabel::COUNT] {
        let mut counts = [0; PostureLabel::COUNT];
        for s in &self.samples {
            counts[s.label().index()] += 1;
        }
        counts
    }

    pub fn labels(&self) -> Vec<PostureLabel> {
        self.samples.iter().map(CsiSample::label).collect()
    }

    /// New dataset holding the samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            env_id: self.env_id.clone(),
        }
    }

    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.env_id == other.env_id
            && self.samples.len() == other.samples.len()
            && self
                .samples
                .iter()
                .zip(&other.samples)
                .all(|(a, b)| a.bitwise_eq(b))
    }
}
