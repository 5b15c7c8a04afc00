//! Small convolutional network with hand-written forward and backward passes.
//!
//! Two conv blocks (3x3 cross-correlation, zero padding 1, ReLU, 2x1 max pool
//! over the subcarrier axis) feed two dense layers and a softmax. Activations
//! are kept channel-major across the batch, `[c][b][h][w]`, so each conv layer
//! is one im2col plus one GEMM for the whole batch.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::PostureLabel;
use crate::error::{Error, Result};
use crate::rng::derived_rng;

/// Layer sizes. Spatial axes are `height` (subcarriers, pooled) and `width`
/// (time slots, never pooled).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnnArch {
    pub in_ch: usize,
    pub height: usize,
    pub width: usize,
    pub conv1: usize,
    pub conv2: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl Default for CnnArch {
    fn default() -> Self {
        Self {
            in_ch: 9,
            height: 30,
            width: 5,
            conv1: 32,
            conv2: 64,
            hidden: 128,
            classes: PostureLabel::COUNT,
        }
    }
}

impl CnnArch {
    /// Two channels on a 6x3 grid; small enough for exhaustive finite
    /// differences.
    pub fn miniature() -> Self {
        Self {
            in_ch: 2,
            height: 6,
            width: 3,
            conv1: 2,
            conv2: 2,
            hidden: 4,
            classes: PostureLabel::COUNT,
        }
    }

    pub fn input_len(&self) -> usize {
        self.in_ch * self.height * self.width
    }

    fn h1(&self) -> usize {
        self.height / 2
    }

    fn h2(&self) -> usize {
        self.h1() / 2
    }

    pub fn flat_len(&self) -> usize {
        self.conv2 * self.h2() * self.width
    }

    fn validate(&self) -> Result<()> {
        let dims = [self.in_ch, self.height, self.width, self.conv1, self.conv2, self.hidden, self.classes];
        if dims.contains(&0) || self.h2() == 0 {
            return Err(Error::Precondition(format!("degenerate architecture {self:?}")));
        }
        Ok(())
    }

    /// Parameter tensor lengths in [`CnnParams::tensors`] order.
    pub fn param_lens(&self) -> [usize; 8] {
        [
            self.conv1 * self.in_ch * 9,
            self.conv1,
            self.conv2 * self.conv1 * 9,
            self.conv2,
            self.hidden * self.flat_len(),
            self.hidden,
            self.classes * self.hidden,
            self.classes,
        ]
    }
}

/// Weights, or gradients with the same layout. Conv kernels are
/// `[out][in][3][3]`, dense weights `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnParams {
    pub conv1_w: Vec<f64>,
    pub conv1_b: Vec<f64>,
    pub conv2_w: Vec<f64>,
    pub conv2_b: Vec<f64>,
    pub fc1_w: Vec<f64>,
    pub fc1_b: Vec<f64>,
    pub fc2_w: Vec<f64>,
    pub fc2_b: Vec<f64>,
}

pub const PARAM_NAMES: [&str; 8] = ["conv1_w", "conv1_b", "conv2_w", "conv2_b", "fc1_w", "fc1_b", "fc2_w", "fc2_b"];

impl CnnParams {
    pub fn zeros(arch: &CnnArch) -> Self {
        let l = arch.param_lens();
        Self {
            conv1_w: vec![0.0; l[0]],
            conv1_b: vec![0.0; l[1]],
            conv2_w: vec![0.0; l[2]],
            conv2_b: vec![0.0; l[3]],
            fc1_w: vec![0.0; l[4]],
            fc1_b: vec![0.0; l[5]],
            fc2_w: vec![0.0; l[6]],
            fc2_b: vec![0.0; l[7]],
        }
    }

    pub fn tensors(&self) -> [&Vec<f64>; 8] {
        [
            &self.conv1_w,
            &self.conv1_b,
            &self.conv2_w,
            &self.conv2_b,
            &self.fc1_w,
            &self.fc1_b,
            &self.fc2_w,
            &self.fc2_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 8] {
        [
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.fc1_w,
            &mut self.fc1_b,
            &mut self.fc2_w,
            &mut self.fc2_b,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    pub arch: CnnArch,
    pub params: CnnParams,
}

/// One 3x3 conv layer, stride 1, zero padding 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub in_ch: usize,
    pub out_ch: usize,
    /// `[out][in][3][3]`
    pub kernels: Vec<f64>,
    pub bias: Vec<f64>,
}

/// `C = A B + beta C` with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || (a.len() > (m - 1) * rsa + (k - 1) * csa && b.len() > (k - 1) * rsb + (n - 1) * csb));
    assert!(c.len() > (m - 1) * rsc + (n - 1) * csc);
    // SAFETY: the asserts above bound every element the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// `[c][b][h][w]` to `[(c, di, dj)][(b, y, x)]` patches for a padded 3x3 window.
fn im2col(input: &[f64], c: usize, b: usize, h: usize, w: usize, cols: &mut Vec<f64>) {
    let plane = h * w;
    let n = b * plane;
    cols.clear();
    cols.resize(c * 9 * n, 0.0);
    for ci in 0..c {
        for di in 0..3 {
            for dj in 0..3 {
                let row = &mut cols[((ci * 9) + di * 3 + dj) * n..][..n];
                for bb in 0..b {
                    let src = &input[(ci * b + bb) * plane..][..plane];
                    let dst = &mut row[bb * plane..][..plane];
                    for y in 0..h {
                        let sy = y + di;
                        if sy < 1 || sy > h {
                            continue;
                        }
                        let srow = &src[(sy - 1) * w..][..w];
                        let drow = &mut dst[y * w..][..w];
                        // x + dj - 1 within 0..w
                        let lo = 1usize.saturating_sub(dj);
                        let hi = (w + 1 - dj).min(w);
                        for x in lo..hi {
                            drow[x] = srow[x + dj - 1];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates patch gradients back onto the input.
fn col2im(cols: &[f64], c: usize, b: usize, h: usize, w: usize, out: &mut [f64]) {
    let plane = h * w;
    let n = b * plane;
    out.iter_mut().for_each(|v| *v = 0.0);
    for ci in 0..c {
        for di in 0..3 {
            for dj in 0..3 {
                let row = &cols[((ci * 9) + di * 3 + dj) * n..][..n];
                for bb in 0..b {
                    let src = &row[bb * plane..][..plane];
                    let dst = &mut out[(ci * b + bb) * plane..][..plane];
                    for y in 0..h {
                        let sy = y + di;
                        if sy < 1 || sy > h {
                            continue;
                        }
                        let lo = 1usize.saturating_sub(dj);
                        let hi = (w + 1 - dj).min(w);
                        for x in lo..hi {
                            dst[(sy - 1) * w + x + dj - 1] += src[y * w + x];
                        }
                    }
                }
            }
        }
    }
}

/// Batched conv: `out[co][n] = sum_r W[co][r] cols[r][n] + bias[co]`.
fn conv_gemm(weights: &[f64], bias: &[f64], cols: &[f64], out_ch: usize, rows: usize, n: usize, out: &mut Vec<f64>) {
    out.clear();
    out.resize(out_ch * n, 0.0);
    for (co, chunk) in out.chunks_exact_mut(n).enumerate() {
        chunk.iter_mut().for_each(|v| *v = bias[co]);
    }
    gemm(out_ch, rows, n, weights, (rows, 1), cols, (n, 1), 1.0, out, (n, 1));
}

/// Single-sample conv over a `[c][h][w]` input.
pub fn conv_forward(layer: &ConvLayer, input: &[f64], h: usize, w: usize) -> Result<Vec<f64>> {
    if layer.kernels.len() != layer.out_ch * layer.in_ch * 9 || layer.bias.len() != layer.out_ch {
        return Err(Error::Dimension {
            expected: layer.out_ch * layer.in_ch * 9,
            actual: layer.kernels.len(),
        });
    }
    if input.len() != layer.in_ch * h * w {
        return Err(Error::Dimension {
            expected: layer.in_ch * h * w,
            actual: input.len(),
        });
    }
    let mut cols = Vec::new();
    im2col(input, layer.in_ch, 1, h, w, &mut cols);
    let mut out = Vec::new();
    conv_gemm(&layer.kernels, &layer.bias, &cols, layer.out_ch, layer.in_ch * 9, h * w, &mut out);
    Ok(out)
}

/// 2x1 max pooling along `h` of a `[planes][h][w]` buffer. Odd `h` drops the
/// last row; ties keep the first element. Returns pooled values and the flat
/// input index each came from.
pub fn maxpool_forward(input: &[f64], planes: usize, h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    let ho = h / 2;
    let mut out = Vec::with_capacity(planes * ho * w);
    let mut arg = Vec::with_capacity(planes * ho * w);
    for p in 0..planes {
        let base = p * h * w;
        for y in 0..ho {
            for x in 0..w {
                let i0 = base + 2 * y * w + x;
                let i1 = i0 + w;
                let pick = if input[i1] > input[i0] { i1 } else { i0 };
                out.push(input[pick]);
                arg.push(pick);
            }
        }
    }
    (out, arg)
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

/// Intermediate activations kept for the backward pass.
struct Cache {
    b: usize,
    cols1: Vec<f64>,
    r1: Vec<f64>,
    arg1: Vec<usize>,
    cols2: Vec<f64>,
    r2: Vec<f64>,
    arg2: Vec<usize>,
    flat: Vec<f64>,
    h3: Vec<f64>,
    logits: Vec<f64>,
}

/// Deliberate defects for mutation-testing the gradient check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Negates the conv1 kernel gradient.
    FlipConv1Sign,
    /// Drops the ReLU mask after fc1.
    SkipFc1Relu,
}

impl CnnModel {
    pub fn zeros(arch: CnnArch) -> Result<Self> {
        arch.validate()?;
        Ok(Self {
            arch,
            params: CnnParams::zeros(&arch),
        })
    }

    /// He-normal weights (std `sqrt(2 / fan_in)`), zero biases.
    pub fn he_init(arch: CnnArch, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(arch)?;
        let mut rng = derived_rng(seed, 0);
        let fans = [arch.in_ch * 9, arch.conv1 * 9, arch.flat_len(), arch.hidden];
        let p = &mut m.params;
        for (w, fan) in [&mut p.conv1_w, &mut p.conv2_w, &mut p.fc1_w, &mut p.fc2_w].into_iter().zip(fans) {
            let dist = Normal::new(0.0, (2.0 / fan as f64).sqrt()).expect("positive std");
            w.iter_mut().for_each(|v| *v = dist.sample(&mut rng));
        }
        Ok(m)
    }

    fn check_batch(&self, x: &[f64], labels: Option<&[usize]>) -> Result<usize> {
        let len = self.arch.input_len();
        if !x.len().is_multiple_of(len) {
            return Err(Error::Dimension {
                expected: len,
                actual: x.len() % len,
            });
        }
        let b = x.len() / len;
        if let Some(l) = labels {
            if l.len() != b {
                return Err(Error::Dimension {
                    expected: b,
                    actual: l.len(),
                });
            }
            if let Some(bad) = l.iter().find(|&&c| c >= self.arch.classes) {
                return Err(Error::Precondition(format!("class index {bad} out of range")));
            }
        }
        Ok(b)
    }

    /// `x` holds `b` samples, each `[c][h][w]`.
    fn forward_cache(&self, x: &[f64], b: usize) -> Cache {
        let a = &self.arch;
        let p = &self.params;
        let (h, w) = (a.height, a.width);
        let (h1, h2) = (a.h1(), a.h2());
        let plane = h * w;

        // [b][c][hw] -> [c][b][hw]
        let mut x0 = vec![0.0; x.len()];
        for bb in 0..b {
            for c in 0..a.in_ch {
                x0[(c * b + bb) * plane..][..plane].copy_from_slice(&x[(bb * a.in_ch + c) * plane..][..plane]);
            }
        }

        let mut cols1 = Vec::new();
        im2col(&x0, a.in_ch, b, h, w, &mut cols1);
        let mut r1 = Vec::new();
        conv_gemm(&p.conv1_w, &p.conv1_b, &cols1, a.conv1, a.in_ch * 9, b * plane, &mut r1);
        r1.iter_mut().for_each(|v| *v = v.max(0.0));
        let (p1, arg1) = maxpool_forward(&r1, a.conv1 * b, h, w);
        debug_assert_eq!(p1.len(), a.conv1 * b * h1 * w);

        let mut cols2 = Vec::new();
        im2col(&p1, a.conv1, b, h1, w, &mut cols2);
        let mut r2 = Vec::new();
        conv_gemm(&p.conv2_w, &p.conv2_b, &cols2, a.conv2, a.conv1 * 9, b * h1 * w, &mut r2);
        r2.iter_mut().for_each(|v| *v = v.max(0.0));
        let (p2, arg2) = maxpool_forward(&r2, a.conv2 * b, h1, w);
        debug_assert_eq!(p2.len(), a.conv2 * b * h2 * w);

        // [c][b][hw] -> [b][c][hw]
        let plane2 = h2 * w;
        let fl = a.flat_len();
        let mut flat = vec![0.0; b * fl];
        for c in 0..a.conv2 {
            for bb in 0..b {
                flat[bb * fl + c * plane2..][..plane2].copy_from_slice(&p2[(c * b + bb) * plane2..][..plane2]);
            }
        }

        let mut h3 = vec![0.0; b * a.hidden];
        for row in h3.chunks_exact_mut(a.hidden) {
            row.copy_from_slice(&p.fc1_b);
        }
        gemm(b, fl, a.hidden, &flat, (fl, 1), &p.fc1_w, (1, fl), 1.0, &mut h3, (a.hidden, 1));
        h3.iter_mut().for_each(|v| *v = v.max(0.0));

        let mut logits = vec![0.0; b * a.classes];
        for row in logits.chunks_exact_mut(a.classes) {
            row.copy_from_slice(&p.fc2_b);
        }
        gemm(b, a.hidden, a.classes, &h3, (a.hidden, 1), &p.fc2_w, (1, a.hidden), 1.0, &mut logits, (a.classes, 1));

        Cache {
            b,
            cols1,
            r1,
            arg1,
            cols2,
            r2,
            arg2,
            flat,
            h3,
            logits,
        }
    }

    /// Class probabilities, one row per sample.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        let b = self.check_batch(x, None)?;
        let mut out = Vec::with_capacity(b);
        let len = self.arch.input_len();
        for chunk in x.chunks(len * 256) {
            let c = self.forward_cache(chunk, chunk.len() / len);
            out.extend(c.logits.chunks_exact(self.arch.classes).map(softmax));
        }
        Ok(out)
    }

    pub fn predict_index(&self, x: &[f64]) -> Result<usize> {
        let p = self.forward(x)?;
        let row = p.first().ok_or_else(|| Error::Precondition("empty input".into()))?;
        Ok(argmax(row))
    }

    pub fn predict_batch(&self, x: &[f64]) -> Result<Vec<usize>> {
        Ok(self.forward(x)?.iter().map(|r| argmax(r)).collect())
    }

    /// Mean cross-entropy over the batch.
    pub fn loss(&self, x: &[f64], labels: &[usize]) -> Result<f64> {
        let b = self.check_batch(x, Some(labels))?;
        if b == 0 {
            return Err(Error::Precondition("empty batch".into()));
        }
        let len = self.arch.input_len();
        let mut total = 0.0;
        for (chunk, lab) in x.chunks(len * 256).zip(labels.chunks(256)) {
            let c = self.forward_cache(chunk, lab.len());
            total += batch_nll(&c.logits, lab, self.arch.classes);
        }
        Ok(total / b as f64)
    }

    /// Gradient of the mean cross-entropy.
    pub fn backward(&self, x: &[f64], labels: &[usize]) -> Result<CnnParams> {
        self.backward_with(x, labels, 1.0, None).map(|(g, _)| g)
    }

    /// Gradient of `scale` times the mean cross-entropy, optionally with an
    /// injected defect. Also returns the unscaled loss.
    pub fn backward_with(&self, x: &[f64], labels: &[usize], scale: f64, fault: Option<Fault>) -> Result<(CnnParams, f64)> {
        let b = self.check_batch(x, Some(labels))?;
        if b == 0 {
            return Err(Error::Precondition("empty batch".into()));
        }
        let c = self.forward_cache(x, b);
        Ok(self.backprop(&c, labels, scale, fault))
    }

    fn backprop(&self, c: &Cache, labels: &[usize], scale: f64, fault: Option<Fault>) -> (CnnParams, f64) {
        let a = &self.arch;
        let p = &self.params;
        let b = c.b;
        let (h, w) = (a.height, a.width);
        let (h1, h2) = (a.h1(), a.h2());
        let fl = a.flat_len();
        let k = a.classes;
        let mut g = CnnParams::zeros(a);

        let loss = batch_nll(&c.logits, labels, k) / b as f64;
        let mut dz4 = vec![0.0; b * k];
        for ((row, z), &l) in dz4.chunks_exact_mut(k).zip(c.logits.chunks_exact(k)).zip(labels) {
            let s = softmax(z);
            for (j, (d, pj)) in row.iter_mut().zip(s).enumerate() {
                *d = scale * (pj - f64::from(u8::from(j == l))) / b as f64;
            }
        }

        // fc2
        gemm(k, b, a.hidden, &dz4, (1, k), &c.h3, (a.hidden, 1), 0.0, &mut g.fc2_w, (a.hidden, 1));
        col_sums(&dz4, k, &mut g.fc2_b);
        let mut dh3 = vec![0.0; b * a.hidden];
        gemm(b, k, a.hidden, &dz4, (k, 1), &p.fc2_w, (a.hidden, 1), 0.0, &mut dh3, (a.hidden, 1));
        if fault != Some(Fault::SkipFc1Relu) {
            for (d, &v) in dh3.iter_mut().zip(&c.h3) {
                if v <= 0.0 {
                    *d = 0.0;
                }
            }
        }

        // fc1
        gemm(a.hidden, b, fl, &dh3, (1, a.hidden), &c.flat, (fl, 1), 0.0, &mut g.fc1_w, (fl, 1));
        col_sums(&dh3, a.hidden, &mut g.fc1_b);
        let mut dflat = vec![0.0; b * fl];
        gemm(b, a.hidden, fl, &dh3, (a.hidden, 1), &p.fc1_w, (fl, 1), 0.0, &mut dflat, (fl, 1));

        // unflatten into pool2 output layout, then route through the argmax
        let plane2 = h2 * w;
        let mut dr2 = vec![0.0; a.conv2 * b * h1 * w];
        for cc in 0..a.conv2 {
            for bb in 0..b {
                let src = &dflat[bb * fl + cc * plane2..][..plane2];
                let arg = &c.arg2[(cc * b + bb) * plane2..][..plane2];
                for (&d, &i) in src.iter().zip(arg) {
                    dr2[i] += d;
                }
            }
        }
        for (d, &v) in dr2.iter_mut().zip(&c.r2) {
            if v <= 0.0 {
                *d = 0.0;
            }
        }

        // conv2
        let n2 = b * h1 * w;
        let rows2 = a.conv1 * 9;
        gemm(a.conv2, n2, rows2, &dr2, (n2, 1), &c.cols2, (1, n2), 0.0, &mut g.conv2_w, (rows2, 1));
        row_sums(&dr2, n2, &mut g.conv2_b);
        let mut dcols2 = vec![0.0; rows2 * n2];
        gemm(rows2, a.conv2, n2, &p.conv2_w, (1, rows2), &dr2, (n2, 1), 0.0, &mut dcols2, (n2, 1));
        let mut dp1 = vec![0.0; a.conv1 * n2];
        col2im(&dcols2, a.conv1, b, h1, w, &mut dp1);

        let mut dr1 = vec![0.0; a.conv1 * b * h * w];
        for (&d, &i) in dp1.iter().zip(&c.arg1) {
            dr1[i] += d;
        }
        for (d, &v) in dr1.iter_mut().zip(&c.r1) {
            if v <= 0.0 {
                *d = 0.0;
            }
        }

        // conv1
        let n1 = b * h * w;
        let rows1 = a.in_ch * 9;
        gemm(a.conv1, n1, rows1, &dr1, (n1, 1), &c.cols1, (1, n1), 0.0, &mut g.conv1_w, (rows1, 1));
        row_sums(&dr1, n1, &mut g.conv1_b);
        if fault == Some(Fault::FlipConv1Sign) {
            g.conv1_w.iter_mut().for_each(|v| *v = -*v);
        }
        (g, loss)
    }
}

fn batch_nll(logits: &[f64], labels: &[usize], k: usize) -> f64 {
    logits.chunks_exact(k).zip(labels).map(|(z, &l)| -log_softmax(z)[l]).sum()
}

fn col_sums(m: &[f64], cols: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for row in m.chunks_exact(cols) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

fn row_sums(m: &[f64], cols: usize, out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(m.chunks_exact(cols)) {
        *o = row.iter().sum();
    }
}

/// Highest probability, lowest index on ties.
fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Drives He initialization (stream 0) and epoch shuffles (stream 1 + epoch).
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            momentum: 0.9,
            seed: 42,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Precondition(format!("invalid training config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    /// Mean loss over the training set before the first update.
    pub initial_loss: f64,
    /// Mean mini-batch loss seen during each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Mini-batch SGD with momentum: `v = mu v - lr g`, `w += v`. `x` holds one
/// `[c][h][w]` sample per entry.
pub fn train(mut model: CnnModel, x: &[Vec<f64>], labels: &[usize], config: &TrainConfig) -> Result<(CnnModel, TrainHistory)> {
    config.validate()?;
    let len = model.arch.input_len();
    if x.is_empty() {
        return Err(Error::DegenerateData("no training samples".into()));
    }
    if let Some(r) = x.iter().find(|r| r.len() != len) {
        return Err(Error::Dimension {
            expected: len,
            actual: r.len(),
        });
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite input".into()));
    }
    let flat: Vec<f64> = x.iter().flatten().copied().collect();
    let initial_loss = model.loss(&flat, labels)?;

    let mut velocity = CnnParams::zeros(&model.arch);
    let mut order: Vec<usize> = (0..x.len()).collect();
    let mut batch = Vec::with_capacity(config.batch_size * len);
    let mut batch_labels = Vec::with_capacity(config.batch_size);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut rng = derived_rng(config.seed, 1 + epoch as u64);
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch_labels.clear();
            for &i in chunk {
                batch.extend_from_slice(&x[i]);
                batch_labels.push(labels[i]);
            }
            let (g, loss) = model.backward_with(&batch, &batch_labels, 1.0, None)?;
            sum += loss * chunk.len() as f64;
            for ((w, v), gr) in model.params.tensors_mut().into_iter().zip(velocity.tensors_mut()).zip(g.tensors()) {
                for ((wi, vi), gi) in w.iter_mut().zip(v.iter_mut()).zip(gr) {
                    *vi = config.momentum * *vi - config.learning_rate * gi;
                    *wi += *vi;
                }
            }
        }
        epoch_losses.push(sum / x.len() as f64);
    }
    Ok((model, TrainHistory { initial_loss, epoch_losses }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Worst relative error per tensor, in [`PARAM_NAMES`] order.
    pub per_tensor: [f64; 8],
    pub max_rel_error: f64,
    pub checked: usize,
    pub all_finite: bool,
    pub passed: bool,
}

/// Finite-difference step for [`grad_check`].
pub const FD_STEP: f64 = 1e-5;
/// Relative errors use `max(|analytic|, |numeric|, REL_FLOOR)` as the
/// denominator so vanishing gradients compare on an absolute scale.
pub const REL_FLOOR: f64 = 1e-6;

/// Compares every analytic gradient of `model` on `(x, labels)` with central
/// differences.
pub fn grad_check_model(model: &CnnModel, x: &[f64], labels: &[usize], tolerance: f64, fault: Option<Fault>) -> Result<GradCheckReport> {
    let (analytic, _) = model.backward_with(x, labels, 1.0, fault)?;
    let mut probe = model.clone();
    let mut per_tensor = [0.0f64; 8];
    let mut checked = 0;
    let mut all_finite = true;
    for t in 0..8 {
        for i in 0..analytic.tensors()[t].len() {
            let orig = probe.params.tensors()[t][i];
            probe.params.tensors_mut()[t][i] = orig + FD_STEP;
            let up = probe.loss(x, labels)?;
            probe.params.tensors_mut()[t][i] = orig - FD_STEP;
            let down = probe.loss(x, labels)?;
            probe.params.tensors_mut()[t][i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic.tensors()[t][i];
            all_finite &= a.is_finite() && numeric.is_finite();
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            per_tensor[t] = per_tensor[t].max(rel);
            checked += 1;
        }
    }
    let max_rel_error = per_tensor.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport {
        per_tensor,
        max_rel_error,
        checked,
        all_finite,
        passed: all_finite && max_rel_error < tolerance,
    })
}

/// Gradient check on a He-initialized miniature model with a seeded random
/// batch of four samples. Biases are drawn at random too: with zero biases an
/// all-dead layer puts the next pre-activation exactly on the ReLU kink, where
/// central differences are meaningless.
pub fn grad_check(arch: CnnArch, seed: u64, tolerance: f64, fault: Option<Fault>) -> Result<GradCheckReport> {
    let mut model = CnnModel::he_init(arch, seed)?;
    let mut rng = derived_rng(seed, u64::MAX);
    let dist = Normal::new(0.0, 1.0).expect("unit normal");
    let p = &mut model.params;
    for bias in [&mut p.conv1_b, &mut p.conv2_b, &mut p.fc1_b, &mut p.fc2_b] {
        bias.iter_mut().for_each(|v| *v = 0.1 * dist.sample(&mut rng));
    }
    let b = 4;
    let x: Vec<f64> = (0..b * arch.input_len()).map(|_| dist.sample(&mut rng)).collect();
    let labels: Vec<usize> = (0..b).map(|i| i % arch.classes).collect();
    grad_check_model(&model, &x, &labels, tolerance, fault)
}
