//! Synthetic multipath CSI.
//!
//! Each environment is a rectangular room whose walls produce image-method
//! reflection taps around a fixed line-of-sight link. A posture attenuates the
//! line-of-sight tap per receive antenna and subcarrier band; the reflections
//! are untouched. Posture is therefore learnable inside one room, while the
//! room-specific reflections dominate the amplitude pattern across rooms.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CsiSample, Dataset, PostureLabel, RX_ANTENNAS, SUBCARRIERS, TIME_SLOTS, TX_ANTENNAS};
use crate::rng::{derive_seed, mix64, rng_from_seed, Rng};

pub const CARRIER_HZ: f64 = 2.437e9;
pub const SUBCARRIER_SPACING_HZ: f64 = 312.5e3;
/// OFDM subcarrier indices reported per antenna pair in a 20 MHz channel.
pub const SUBCARRIER_INDICES: [i32; SUBCARRIERS] = [
    -28, -26, -24, -22, -20, -18, -16, -14, -12, -10, -8, -6, -4, -2, -1, 1, 3, 5, 7, 9, 11, 13, 15, 17, 19, 21, 23, 25, 27, 28,
];
/// Subcarrier bands used by the shadowing profiles.
pub const BANDS: usize = 5;
const SPEED_OF_LIGHT: f64 = 299_792_458.0;

pub fn subcarrier_hz(k: usize) -> f64 {
    CARRIER_HZ + SUBCARRIER_INDICES[k] as f64 * SUBCARRIER_SPACING_HZ
}

pub fn band_of(k: usize) -> usize {
    k * BANDS / SUBCARRIERS
}

/// One propagation path. `phase[tx * 3 + rx]` is the array phase offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tap {
    pub gain: f64,
    pub delay_ns: f64,
    pub phase: [f64; TX_ANTENNAS * RX_ANTENNAS],
}

/// Line-of-sight attenuation per posture, receive antenna and band; row 0 is
/// the upper antenna.
pub type ShadowProfile = [[f64; BANDS]; RX_ANTENNAS];

pub const UNSHADOWED: ShadowProfile = [[1.0; BANDS]; RX_ANTENNAS];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostureEffect {
    /// Indexed by posture index.
    pub profiles: [ShadowProfile; PostureLabel::COUNT],
}

impl PostureEffect {
    pub fn profile(&self, posture: PostureLabel) -> &ShadowProfile {
        &self.profiles[posture.index()]
    }
}

impl Default for PostureEffect {
    /// Standing blocks the upper antenna across the band, sitting the middle
    /// one, and lying down clips the low antenna in a narrow band.
    fn default() -> Self {
        Self {
            profiles: [
                [[0.45; BANDS], [0.75; BANDS], [0.95; BANDS]],
                [[0.75; BANDS], [0.45; BANDS], [0.8; BANDS]],
                [[1.0; BANDS], [0.95; BANDS], [1.0, 0.7, 0.45, 0.7, 1.0]],
            ],
        }
    }
}

/// Random variation between samples and between time slots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jitter {
    /// Log-normal spread of each shadowing factor per sample.
    pub shadow_sd: f64,
    /// Relative spread of each reflection gain per sample.
    pub gain_sd: f64,
    /// Relative spread of each reflection gain per time slot.
    pub slot_gain_sd: f64,
    /// Phase wobble (radians) of each reflection per time slot.
    pub slot_phase_sd: f64,
}

impl Default for Jitter {
    fn default() -> Self {
        Self {
            shadow_sd: 0.05,
            gain_sd: 0.02,
            slot_gain_sd: 0.02,
            slot_phase_sd: 0.03,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvProfile {
    pub env_id: String,
    /// Width, length, height in meters.
    pub dims: [f64; 3],
    /// First tap is line of sight and carries the largest gain.
    pub taps: Vec<Tap>,
    pub snr_db: f64,
    pub posture: PostureEffect,
    pub jitter: Jitter,
}

/// Wall reflection coefficient magnitude used for the image taps.
pub const WALL_REFLECTION: f64 = 0.85;
/// Transmitter to receiver separation, kept fixed across rooms.
pub const LINK_DISTANCE_M: f64 = 3.0;
pub const ANTENNA_HEIGHT_M: f64 = 1.0;
const TX_WALL_OFFSET_M: f64 = 1.0;

type P3 = [f64; 3];

fn norm(v: P3) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn sub(a: P3, b: P3) -> P3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Mirror of `p` across wall `w`: axis `w / 2`, low side when `w` is even.
fn mirror(p: P3, w: usize, dims: &P3) -> P3 {
    let axis = w / 2;
    let plane = if w.is_multiple_of(2) { 0.0 } else { dims[axis] };
    let mut q = p;
    q[axis] = 2.0 * plane - p[axis];
    q
}

/// Line-of-sight plus first- and second-order image reflections for a link
/// along the width axis at mid length. Arrays are half-wavelength linear
/// arrays along the length axis, so a path's array phase is
/// `pi * (tx * sin(departure) + rx * sin(arrival))`.
pub fn image_taps(dims: [f64; 3], reflection: f64) -> Vec<Tap> {
    let tx = [TX_WALL_OFFSET_M, dims[1] / 2.0, ANTENNA_HEIGHT_M];
    let rx = [TX_WALL_OFFSET_M + LINK_DISTANCE_M, dims[1] / 2.0, ANTENNA_HEIGHT_M];
    let d0 = norm(sub(rx, tx));

    // (image of tx, image of rx under the reversed wall sequence, order)
    let mut images: Vec<(P3, P3, i32)> = vec![(tx, rx, 0)];
    for a in 0..6 {
        images.push((mirror(tx, a, &dims), mirror(rx, a, &dims), 1));
        for b in 0..6 {
            if b != a {
                images.push((mirror(mirror(tx, a, &dims), b, &dims), mirror(mirror(rx, b, &dims), a, &dims), 2));
            }
        }
    }
    let mut taps: Vec<Tap> = Vec::new();
    let mut seen: Vec<P3> = Vec::new();
    for (src, dst_img, order) in images {
        if seen.iter().any(|s| norm(sub(*s, src)) < 1e-9) {
            continue;
        }
        seen.push(src);
        let arrive = sub(rx, src);
        let depart = sub(dst_img, tx);
        let d = norm(arrive);
        let sin_a = arrive[1] / d;
        let sin_d = depart[1] / norm(depart);
        let mut phase = [0.0; TX_ANTENNAS * RX_ANTENNAS];
        for (i, p) in phase.iter_mut().enumerate() {
            let (t, r) = ((i / RX_ANTENNAS) as f64, (i % RX_ANTENNAS) as f64);
            // Each wall bounce flips the sign of the field.
            *p = PI * (t * sin_d + r * sin_a) + PI * order as f64;
        }
        taps.push(Tap {
            gain: reflection.powi(order) * d0 / d,
            delay_ns: d / SPEED_OF_LIGHT * 1e9,
            phase,
        });
    }
    taps
}

pub fn env_profile(env_id: &str, dims: [f64; 3]) -> EnvProfile {
    EnvProfile {
        env_id: env_id.to_string(),
        dims,
        taps: image_taps(dims, WALL_REFLECTION),
        snr_db: 30.0,
        posture: PostureEffect::default(),
        jitter: Jitter::default(),
    }
}

/// The two rooms: A is 5 x 3 x 2.5 m, B is 6.6 x 4.7 x 2.6 m.
pub fn default_envs() -> (EnvProfile, EnvProfile) {
    (env_profile("A", [5.0, 3.0, 2.5]), env_profile("B", [6.6, 4.7, 2.6]))
}

fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// One sample in `posture`.
pub fn gen_sample(env: &EnvProfile, posture: PostureLabel, rng: &mut Rng) -> CsiSample {
    gen_shadowed(env, env.posture.profile(posture), posture, rng)
}

/// One sample with an explicit line-of-sight shadowing profile; `label` is
/// only attached, not used.
pub fn gen_shadowed(env: &EnvProfile, shadow: &ShadowProfile, label: PostureLabel, rng: &mut Rng) -> CsiSample {
    let j = &env.jitter;
    let common = rng.random_range(-PI..PI);
    let mut shade = [[0.0; BANDS]; RX_ANTENNAS];
    for (row, base) in shade.iter_mut().zip(shadow) {
        for (s, &b) in row.iter_mut().zip(base) {
            *s = if b < 1.0 {
                (b * (j.shadow_sd * normal(rng)).exp()).clamp(0.01, 1.0)
            } else {
                b
            };
        }
    }
    let taps = &env.taps;
    let gains: Vec<f64> = taps
        .iter()
        .enumerate()
        .map(|(p, tap)| if p == 0 { tap.gain } else { tap.gain * (1.0 + j.gain_sd * normal(rng)).max(0.0) })
        .collect();
    let power: f64 = taps.iter().map(|t| t.gain * t.gain).sum();
    let noise_sd = (power / 10f64.powf(env.snr_db / 10.0) / 2.0).sqrt();

    // Per-path, per-subcarrier delay rotation.
    let rot: Vec<[f64; SUBCARRIERS]> = taps
        .iter()
        .map(|tap| {
            let mut r = [0.0; SUBCARRIERS];
            for (k, v) in r.iter_mut().enumerate() {
                *v = -2.0 * PI * subcarrier_hz(k) * tap.delay_ns * 1e-9;
            }
            r
        })
        .collect();

    let mut cells = vec![(0.0, 0.0); TIME_SLOTS * SUBCARRIERS * TX_ANTENNAS * RX_ANTENNAS];
    for t in 0..TIME_SLOTS {
        let slot: Vec<(f64, f64)> = (0..taps.len())
            .map(|p| {
                if p == 0 {
                    (1.0, 0.0)
                } else {
                    (1.0 + j.slot_gain_sd * normal(rng), j.slot_phase_sd * normal(rng))
                }
            })
            .collect();
        for k in 0..SUBCARRIERS {
            for pair in 0..TX_ANTENNAS * RX_ANTENNAS {
                let rx = pair % RX_ANTENNAS;
                let (mut re, mut im) = (0.0, 0.0);
                for (p, tap) in taps.iter().enumerate() {
                    let mut g = gains[p] * slot[p].0;
                    if p == 0 {
                        g *= shade[rx][band_of(k)];
                    }
                    let ph = common + rot[p][k] + tap.phase[pair] + slot[p].1;
                    re += g * ph.cos();
                    im += g * ph.sin();
                }
                if noise_sd > 0.0 {
                    re += noise_sd * normal(rng);
                    im += noise_sd * normal(rng);
                }
                cells[(t * SUBCARRIERS + k) * 9 + pair] = (re.hypot(im), im.atan2(re));
            }
        }
    }
    CsiSample::from_fn(label, |t, k, tx, rx| cells[(t * SUBCARRIERS + k) * 9 + tx * RX_ANTENNAS + rx])
        .expect("generated values are finite with non-negative amplitude")
}

fn env_salt(env_id: &str) -> u64 {
    env_id.bytes().fold(0xCBF2_9CE4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01B3))
}

/// `counts[c]` samples of each posture. Sample `i` (class-major order) draws
/// from its own derived stream; the result is shuffled deterministically.
pub fn gen_dataset(env: &EnvProfile, counts: [usize; PostureLabel::COUNT], seed: u64) -> Dataset {
    let master = mix64(seed ^ env_salt(&env.env_id));
    let jobs: Vec<PostureLabel> = PostureLabel::ALL
        .iter()
        .zip(counts)
        .flat_map(|(&l, c)| std::iter::repeat_n(l, c))
        .collect();
    let mut samples: Vec<CsiSample> = jobs
        .par_iter()
        .enumerate()
        .map(|(i, &l)| gen_sample(env, l, &mut rng_from_seed(derive_seed(master, i as u64))))
        .collect();
    samples.shuffle(&mut rng_from_seed(derive_seed(master, u64::MAX)));
    Dataset::new(env.env_id.clone(), samples)
}

/// Isotropic Gaussian clusters, `n_per` points around each center, with class
/// index = center index. Points are emitted class by class.
pub fn gaussian_blobs(centers: &[Vec<f64>], sigma: f64, n_per: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = rng_from_seed(seed);
    let mut x = Vec::with_capacity(centers.len() * n_per);
    let mut y = Vec::with_capacity(centers.len() * n_per);
    for (class, c) in centers.iter().enumerate() {
        for _ in 0..n_per {
            x.push(c.iter().map(|&m| m + sigma * normal(&mut rng)).collect());
            y.push(class);
        }
    }
    (x, y)
}
