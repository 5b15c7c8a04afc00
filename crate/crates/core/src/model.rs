//! The five classifiers behind one interface, and the CSM1 model file.
//!
//! Every trained model carries its own feature pipeline so a model file alone
//! turns raw samples into predictions.
//!
//! CSM1 layout (little endian): `"CSM1" | u16 version | u8 kind | u8 reserved`
//! followed by the kind's section. Vectors are a `u32` length and then their
//! elements; reals are `f64`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cnn::{self, CnnArch, CnnModel, TrainConfig};
use crate::data::{CsiSample, Dataset, PostureLabel};
use crate::error::{Error, Result};
use crate::features::{extract_classical, to_cnn_input, Scaler, CLASSICAL_LEN, CNN_INPUT_LEN};
use crate::forest::{fit_forest, ForestModel, ForestParams, TreeNode};
use crate::lda::{fit_lda, LdaModel, DEFAULT_RIDGE};
use crate::nbsvm::{fit_nbsvm, GaussianNb, NbFeatures, NbSvmModel};
use crate::svm::{train_multiclass, BinarySvm, KernelKind, KernelSpec, MulticlassSvm, SvmParams};

pub const MODEL_MAGIC: &[u8; 4] = b"CSM1";
pub const MODEL_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Lda,
    NbSvm,
    Ksvm,
    Forest,
    Cnn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [ModelKind::Lda, ModelKind::NbSvm, ModelKind::Ksvm, ModelKind::Forest, ModelKind::Cnn];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Lda => "lda",
            ModelKind::NbSvm => "nbsvm",
            ModelKind::Ksvm => "ksvm",
            ModelKind::Forest => "forest",
            ModelKind::Cnn => "cnn",
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Precondition(format!("unknown model '{s}', expected one of lda, nbsvm, ksvm, forest, cnn")))
    }
}

/// Everything needed to train one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub seed: u64,
    /// Used by the NB-SVM and kernel SVM.
    pub svm: SvmParams,
    /// RBF width for the kernel SVM; `None` picks `1 / (d * mean variance)`.
    pub rbf_gamma: Option<f64>,
    pub lda_ridge: f64,
    pub nb_features: NbFeatures,
    pub forest: ForestParams,
    /// `cnn.seed` is replaced by `seed` at training time.
    pub cnn: TrainConfig,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, seed: u64) -> Self {
        Self {
            kind,
            seed,
            svm: SvmParams::default(),
            rbf_gamma: None,
            lda_ridge: DEFAULT_RIDGE,
            nb_features: NbFeatures::Likelihoods,
            forest: ForestParams::default(),
            cnn: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    /// Standardized classical features.
    Lda { scaler: Scaler, model: LdaModel },
    /// Raw classical features.
    NbSvm { model: NbSvmModel },
    /// Standardized classical features, RBF kernel.
    Ksvm { scaler: Scaler, model: MulticlassSvm },
    /// Raw classical features.
    Forest { model: ForestModel },
    /// Standardized amplitude grid.
    Cnn { scaler: Scaler, model: CnnModel },
}

fn class_indices(data: &Dataset) -> Vec<usize> {
    data.samples.iter().map(|s| s.label().index()).collect()
}

fn classical(data: &Dataset) -> Vec<Vec<f64>> {
    data.samples.iter().map(|s| extract_classical(s).values).collect()
}

fn cnn_rows(data: &Dataset) -> Vec<Vec<f64>> {
    data.samples.iter().map(|s| to_cnn_input(s).data).collect()
}

/// Trains `spec` on every sample of `data`.
pub fn train_model(spec: &ModelSpec, data: &Dataset) -> Result<TrainedModel> {
    if data.is_empty() {
        return Err(Error::DegenerateData("empty training set".into()));
    }
    let y = class_indices(data);
    Ok(match spec.kind {
        ModelKind::Lda => {
            let x = classical(data);
            let scaler = Scaler::fit(&x)?;
            let model = fit_lda(&scaler.transform_all(&x), &y, spec.lda_ridge)?;
            TrainedModel::Lda { scaler, model }
        }
        ModelKind::NbSvm => TrainedModel::NbSvm {
            model: fit_nbsvm(&classical(data), &y, spec.nb_features, &spec.svm)?,
        },
        ModelKind::Ksvm => {
            let x = classical(data);
            let scaler = Scaler::fit(&x)?;
            let z = scaler.transform_all(&x);
            let kernel = match spec.rbf_gamma {
                Some(g) => KernelSpec::rbf(g)?,
                None => KernelSpec::rbf_scale(&z)?,
            };
            TrainedModel::Ksvm {
                model: train_multiclass(&z, &y, &kernel, &spec.svm)?,
                scaler,
            }
        }
        ModelKind::Forest => TrainedModel::Forest {
            model: fit_forest(&classical(data), &y, &spec.forest, spec.seed)?,
        },
        ModelKind::Cnn => {
            let x = cnn_rows(data);
            let scaler = Scaler::fit(&x)?;
            let z = scaler.transform_all(&x);
            let init = CnnModel::he_init(CnnArch::default(), spec.seed)?;
            let config = TrainConfig {
                seed: spec.seed,
                ..spec.cnn
            };
            let (model, _) = cnn::train(init, &z, &y, &config)?;
            TrainedModel::Cnn { scaler, model }
        }
    })
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::Lda { .. } => ModelKind::Lda,
            TrainedModel::NbSvm { .. } => ModelKind::NbSvm,
            TrainedModel::Ksvm { .. } => ModelKind::Ksvm,
            TrainedModel::Forest { .. } => ModelKind::Forest,
            TrainedModel::Cnn { .. } => ModelKind::Cnn,
        }
    }

    pub fn predict(&self, sample: &CsiSample) -> PostureLabel {
        self.predict_all(std::slice::from_ref(sample))[0]
    }

    pub fn predict_all(&self, samples: &[CsiSample]) -> Vec<PostureLabel> {
        let feats = || samples.iter().map(|s| extract_classical(s).values);
        let idx: Vec<usize> = match self {
            TrainedModel::Lda { scaler, model } => feats().map(|x| model.predict_index(&scaler.transform(&x))).collect(),
            TrainedModel::NbSvm { model } => feats().map(|x| model.predict_index(&x)).collect(),
            TrainedModel::Ksvm { scaler, model } => feats().map(|x| model.predict(&scaler.transform(&x))).collect(),
            TrainedModel::Forest { model } => feats().map(|x| model.predict_index(&x)).collect(),
            TrainedModel::Cnn { scaler, model } => {
                let flat: Vec<f64> = samples.iter().flat_map(|s| scaler.transform(&to_cnn_input(s).data)).collect();
                model.predict_batch(&flat).expect("input length fixed by the tensor shape")
            }
        };
        idx.into_iter().map(PostureLabel::from_index).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.buf.extend_from_slice(MODEL_MAGIC);
        w.u16(MODEL_VERSION);
        w.u8(self.kind().code());
        w.u8(0);
        match self {
            TrainedModel::Lda { scaler, model } => {
                w.scaler(scaler);
                w.usizes(&model.classes);
                w.matrix(&model.means);
                w.reals(&model.priors);
                w.reals(&model.scatter);
                w.matrix(&model.weights);
                w.reals(&model.biases);
            }
            TrainedModel::NbSvm { model } => {
                let nb = &model.nb;
                w.reals(&nb.priors);
                w.matrix(&nb.means);
                w.matrix(&nb.vars);
                w.f64(nb.var_floor);
                w.u8(model.features.code());
                w.multiclass(&model.svm);
            }
            TrainedModel::Ksvm { scaler, model } => {
                w.scaler(scaler);
                w.multiclass(model);
            }
            TrainedModel::Forest { model } => {
                w.u32(model.max_features as u32);
                w.u64(model.seed);
                match model.oob_accuracy {
                    Some(a) => {
                        w.u8(1);
                        w.f64(a);
                    }
                    None => {
                        w.u8(0);
                        w.f64(0.0);
                    }
                }
                w.u32(model.trees.len() as u32);
                for t in &model.trees {
                    w.u32(t.node_count() as u32);
                    w.tree(t);
                }
            }
            TrainedModel::Cnn { scaler, model } => {
                w.scaler(scaler);
                let a = &model.arch;
                for v in [a.in_ch, a.height, a.width, a.conv1, a.conv2, a.hidden, a.classes] {
                    w.u32(v as u32);
                }
                let shapes = cnn_shapes(a);
                for (t, shape) in model.params.tensors().into_iter().zip(&shapes) {
                    w.u8(shape.len() as u8);
                    shape.iter().for_each(|&d| w.u32(d as u32));
                    t.iter().for_each(|&v| w.f64(v));
                }
            }
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MODEL_MAGIC {
            return Err(Error::Format("not a CSM1 model file".into()));
        }
        let version = r.u16()?;
        if version != MODEL_VERSION {
            return Err(Error::Unsupported(format!("model file version {version}")));
        }
        let kind = ModelKind::from_code(r.u8()?).ok_or_else(|| Error::Format("unknown model kind".into()))?;
        r.u8()?;
        let model = match kind {
            ModelKind::Lda => {
                let scaler = r.scaler()?;
                let model = LdaModel {
                    classes: r.usizes()?,
                    means: r.matrix()?,
                    priors: r.reals()?,
                    scatter: r.reals()?,
                    weights: r.matrix()?,
                    biases: r.reals()?,
                };
                let d = scaler.dims();
                let k = model.classes.len();
                if d != CLASSICAL_LEN
                    || model.classes.iter().any(|&c| c >= PostureLabel::COUNT)
                    || k == 0
                    || model.weights.len() != k
                    || model.biases.len() != k
                    || model.weights.iter().any(|w| w.len() != d)
                {
                    return Err(Error::Format("inconsistent LDA section".into()));
                }
                TrainedModel::Lda { scaler, model }
            }
            ModelKind::NbSvm => {
                let priors = r.reals()?;
                let means = r.matrix()?;
                let vars = r.matrix()?;
                let var_floor = r.f64()?;
                let features = NbFeatures::from_code(r.u8()?).ok_or_else(|| Error::Format("unknown NB feature mode".into()))?;
                let svm = r.multiclass()?;
                let d = means.first().map_or(0, Vec::len);
                if d != CLASSICAL_LEN
                    || priors.len() != PostureLabel::COUNT
                    || means.len() != PostureLabel::COUNT
                    || vars.len() != PostureLabel::COUNT
                    || means.iter().chain(&vars).any(|row| row.len() != d)
                {
                    return Err(Error::Format("inconsistent naive Bayes section".into()));
                }
                let svm_dims = match features {
                    NbFeatures::Likelihoods => 3 * d,
                    NbFeatures::Posteriors => 3,
                    NbFeatures::Identity => d,
                };
                check_svm_dims(&svm, svm_dims)?;
                let nb = GaussianNb {
                    priors: [priors[0], priors[1], priors[2]],
                    means,
                    vars,
                    var_floor,
                };
                TrainedModel::NbSvm {
                    model: NbSvmModel { nb, svm, features },
                }
            }
            ModelKind::Ksvm => {
                let scaler = r.scaler()?;
                let model = r.multiclass()?;
                if scaler.dims() != CLASSICAL_LEN {
                    return Err(Error::Format("kernel SVM scaler is not classical-sized".into()));
                }
                check_svm_dims(&model, scaler.dims())?;
                TrainedModel::Ksvm { scaler, model }
            }
            ModelKind::Forest => {
                let max_features = r.u32()? as usize;
                let seed = r.u64()?;
                let has_oob = r.u8()?;
                let oob = r.f64()?;
                let n = r.u32()? as usize;
                let mut trees = Vec::new();
                for _ in 0..n {
                    let nodes = r.u32()? as usize;
                    let mut budget = nodes;
                    let t = r.tree(&mut budget, 0)?;
                    if budget != 0 {
                        return Err(Error::Format("tree node count mismatch".into()));
                    }
                    trees.push(t);
                }
                if trees.is_empty() {
                    return Err(Error::Format("forest without trees".into()));
                }
                TrainedModel::Forest {
                    model: ForestModel {
                        trees,
                        max_features,
                        seed,
                        oob_accuracy: (has_oob == 1).then_some(oob),
                    },
                }
            }
            ModelKind::Cnn => {
                let scaler = r.scaler()?;
                let mut dims = [0usize; 7];
                for d in &mut dims {
                    *d = r.u32()? as usize;
                }
                let arch = CnnArch {
                    in_ch: dims[0],
                    height: dims[1],
                    width: dims[2],
                    conv1: dims[3],
                    conv2: dims[4],
                    hidden: dims[5],
                    classes: dims[6],
                };
                if arch.classes != PostureLabel::COUNT || arch.input_len() != CNN_INPUT_LEN || scaler.dims() != CNN_INPUT_LEN {
                    return Err(Error::Format("inconsistent CNN architecture".into()));
                }
                let mut model = CnnModel::zeros(arch).map_err(|_| Error::Format("degenerate CNN architecture".into()))?;
                let shapes = cnn_shapes(&arch);
                for (t, shape) in model.params.tensors_mut().into_iter().zip(&shapes) {
                    let ndim = r.u8()? as usize;
                    let mut got = Vec::with_capacity(ndim.min(8));
                    for _ in 0..ndim {
                        got.push(r.u32()? as usize);
                    }
                    if &got != shape {
                        return Err(Error::Format(format!("CNN tensor shape {got:?}, expected {shape:?}")));
                    }
                    r.need(t.len() * 8)?;
                    for v in t.iter_mut() {
                        *v = r.f64()?;
                    }
                }
                TrainedModel::Cnn { scaler, model }
            }
        };
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes after model", bytes.len() - r.pos)));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(Error::io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(Error::io)?)
    }
}

fn cnn_shapes(a: &CnnArch) -> [Vec<usize>; 8] {
    [
        vec![a.conv1, a.in_ch, 3, 3],
        vec![a.conv1],
        vec![a.conv2, a.conv1, 3, 3],
        vec![a.conv2],
        vec![a.hidden, a.flat_len()],
        vec![a.hidden],
        vec![a.classes, a.hidden],
        vec![a.classes],
    ]
}

fn check_svm_dims(m: &MulticlassSvm, d: usize) -> Result<()> {
    if m.machines.len() != 3 || m.machines.iter().any(|b| b.support_vectors.iter().any(|sv| sv.len() != d)) {
        return Err(Error::Format("inconsistent SVM section".into()));
    }
    Ok(())
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn reals(&mut self, v: &[f64]) {
        self.u32(v.len() as u32);
        v.iter().for_each(|&x| self.f64(x));
    }
    fn usizes(&mut self, v: &[usize]) {
        self.u32(v.len() as u32);
        v.iter().for_each(|&x| self.u32(x as u32));
    }
    fn matrix(&mut self, m: &[Vec<f64>]) {
        self.u32(m.len() as u32);
        m.iter().for_each(|row| self.reals(row));
    }
    fn scaler(&mut self, s: &Scaler) {
        self.reals(&s.mean);
        self.reals(&s.std);
    }
    fn binary(&mut self, m: &BinarySvm) {
        let k = &m.kernel;
        self.u8(match k.kind {
            KernelKind::Linear => 0,
            KernelKind::Polynomial => 1,
            KernelKind::Rbf => 2,
        });
        self.f64(k.poly_c);
        self.u32(k.poly_d);
        self.f64(k.rbf_gamma);
        self.f64(m.c);
        self.f64(m.bias);
        self.reals(&m.coef);
        self.matrix(&m.support_vectors);
    }
    fn multiclass(&mut self, m: &MulticlassSvm) {
        self.u32(m.machines.len() as u32);
        m.machines.iter().for_each(|b| self.binary(b));
    }
    /// Preorder; tag 0 is a leaf with counts and label, tag 1 a split.
    fn tree(&mut self, t: &TreeNode) {
        match t {
            TreeNode::Leaf { counts, label } => {
                self.u8(0);
                counts.iter().for_each(|&c| self.u64(c));
                self.u8(*label as u8);
            }
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                self.u8(1);
                self.u32(*feature as u32);
                self.f64(*threshold);
                self.tree(left);
                self.tree(right);
            }
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

/// Nesting bound for decoded trees; deeper input is rejected, not recursed.
const MAX_TREE_DEPTH: usize = 4096;

impl Reader<'_> {
    fn need(&self, n: usize) -> Result<()> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncation {
                expected: (self.pos + n) as u64,
                actual: self.buf.len() as u64,
            });
        }
        Ok(())
    }
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        self.need(n)?;
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        self.array().map(u16::from_le_bytes)
    }
    fn u32(&mut self) -> Result<u32> {
        self.array().map(u32::from_le_bytes)
    }
    fn u64(&mut self) -> Result<u64> {
        self.array().map(u64::from_le_bytes)
    }
    fn f64(&mut self) -> Result<f64> {
        self.array().map(f64::from_le_bytes)
    }
    fn reals(&mut self) -> Result<Vec<f64>> {
        let n = self.u32()? as usize;
        self.need(n * 8)?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn usizes(&mut self) -> Result<Vec<usize>> {
        let n = self.u32()? as usize;
        self.need(n * 4)?;
        (0..n).map(|_| self.u32().map(|v| v as usize)).collect()
    }
    fn matrix(&mut self) -> Result<Vec<Vec<f64>>> {
        let n = self.u32()? as usize;
        self.need(n * 4)?;
        (0..n).map(|_| self.reals()).collect()
    }
    fn scaler(&mut self) -> Result<Scaler> {
        let mean = self.reals()?;
        let std = self.reals()?;
        if mean.len() != std.len() {
            return Err(Error::Format("scaler length mismatch".into()));
        }
        Ok(Scaler { mean, std })
    }
    fn binary(&mut self) -> Result<BinarySvm> {
        let kind = self.u8()?;
        let poly_c = self.f64()?;
        let poly_d = self.u32()?;
        let gamma = self.f64()?;
        let kernel = match kind {
            0 => KernelSpec::linear(),
            1 => KernelSpec::polynomial(poly_c, poly_d)?,
            2 => KernelSpec::rbf(gamma)?,
            _ => return Err(Error::Format(format!("unknown kernel tag {kind}"))),
        };
        let c = self.f64()?;
        let bias = self.f64()?;
        let coef = self.reals()?;
        let svs = self.matrix()?;
        let d = svs.first().map_or(0, Vec::len);
        if coef.len() != svs.len() || svs.iter().any(|s| s.len() != d) {
            return Err(Error::Format("support vector count mismatch".into()));
        }
        Ok(BinarySvm::new(kernel, c, svs, coef, bias))
    }
    fn multiclass(&mut self) -> Result<MulticlassSvm> {
        let n = self.u32()? as usize;
        if n != 3 {
            return Err(Error::Format(format!("expected 3 pairwise machines, found {n}")));
        }
        let machines = (0..n).map(|_| self.binary()).collect::<Result<_>>()?;
        Ok(MulticlassSvm { machines })
    }
    fn tree(&mut self, budget: &mut usize, depth: usize) -> Result<TreeNode> {
        if *budget == 0 || depth > MAX_TREE_DEPTH {
            return Err(Error::Format("tree exceeds its node count".into()));
        }
        *budget -= 1;
        match self.u8()? {
            0 => {
                let mut counts = [0u64; 3];
                for c in &mut counts {
                    *c = self.u64()?;
                }
                let label = self.u8()? as usize;
                if label >= PostureLabel::COUNT {
                    return Err(Error::Format(format!("leaf label {label}")));
                }
                Ok(TreeNode::Leaf { counts, label })
            }
            1 => {
                let feature = self.u32()? as usize;
                if feature >= CLASSICAL_LEN {
                    return Err(Error::Format(format!("split feature {feature} out of range")));
                }
                let threshold = self.f64()?;
                let left = Box::new(self.tree(budget, depth + 1)?);
                let right = Box::new(self.tree(budget, depth + 1)?);
                Ok(TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                })
            }
            t => Err(Error::Format(format!("unknown tree node tag {t}"))),
        }
    }
}
