//! Command-line front end.
//!
//! Every command writes a manifest of its fully resolved configuration next to
//! its outputs. No output file carries a timestamp, so repeated runs with the
//! same inputs and seed produce identical bytes.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::data::csd::{read_csd_file, write_csd_file};
use crate::data::npy::{parse_npy, write_npy};
use crate::data::{Dataset, PostureLabel};
use crate::error::Error;
use crate::eval::{
    cross_env, cross_env_csv, curve_csv, evaluate, learning_curve, make_split, set_index, shuffled_control, EvalReport,
    CSV_HEADER, REPORT_SCHEMA, SET_NAMES, SET_SIZES,
};
use crate::forest::ForestParams;
use crate::model::{train_model, ModelKind, ModelSpec, TrainedModel};
use crate::nbsvm::NbFeatures;
use crate::synth::{default_envs, gen_dataset};

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_PROTOCOL: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "csi-bench", version, about = "CSI posture recognition benchmark")]
pub struct Cli {
    /// Worker threads; 1 forces the sequential path.
    #[arg(long, global = true, env = "CSI_BENCH_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset as a CSD1 file.
    Gen(GenArgs),
    /// Convert between CSD1 and NPY.
    Convert(ConvertArgs),
    /// Train one model on a training set.
    Train(TrainArgs),
    /// Evaluate a model file on a dataset.
    Eval(EvalArgs),
    /// Learning curve: every model on Sets A to F.
    Curve(CurveArgs),
    /// Score Set-F models on another room's data.
    Crossenv(CrossEnvArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum EnvChoice {
    #[value(name = "A")]
    A,
    #[value(name = "B")]
    B,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_enum, ignore_case = true)]
    pub env: EnvChoice,
    /// Samples per posture.
    #[arg(long, default_value_t = 2000)]
    pub per_class: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Take labels (and the environment tag) from this CSD1 file when
    /// converting NPY to CSD1.
    #[arg(long)]
    pub labels_from: Option<PathBuf>,
    /// Give every converted sample this label.
    #[arg(long)]
    pub label: Option<PostureLabel>,
    /// Environment tag for NPY input.
    #[arg(long)]
    pub env_id: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum ModelChoice {
    Lda,
    Nbsvm,
    Ksvm,
    Forest,
    Cnn,
}

impl From<ModelChoice> for ModelKind {
    fn from(m: ModelChoice) -> Self {
        match m {
            ModelChoice::Lda => ModelKind::Lda,
            ModelChoice::Nbsvm => ModelKind::NbSvm,
            ModelChoice::Ksvm => ModelKind::Ksvm,
            ModelChoice::Forest => ModelKind::Forest,
            ModelChoice::Cnn => ModelKind::Cnn,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NbFeatureChoice {
    Likelihoods,
    Posteriors,
    Identity,
}

/// Hyperparameters; anything unset keeps the model default.
#[derive(Debug, Clone, Args)]
pub struct HyperArgs {
    /// SVM soft-margin penalty.
    #[arg(long)]
    pub c: Option<f64>,
    /// SMO stopping tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    /// SMO iteration budget in units of the training-set size.
    #[arg(long)]
    pub max_passes: Option<usize>,
    /// RBF width for the kernel SVM (default: 1 / (d * mean variance)).
    #[arg(long)]
    pub gamma: Option<f64>,
    /// LDA covariance ridge, relative to the mean variance.
    #[arg(long)]
    pub ridge: Option<f64>,
    #[arg(long, value_enum)]
    pub nb_features: Option<NbFeatureChoice>,
    #[arg(long)]
    pub trees: Option<usize>,
    #[arg(long)]
    pub max_features: Option<usize>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
}

impl HyperArgs {
    pub fn spec(&self, kind: ModelKind, seed: u64) -> ModelSpec {
        let mut s = ModelSpec::new(kind, seed);
        if let Some(v) = self.c {
            s.svm.c = v;
        }
        if let Some(v) = self.tol {
            s.svm.tol = v;
        }
        if let Some(v) = self.max_passes {
            s.svm.max_passes = v;
        }
        s.svm.seed = seed;
        s.rbf_gamma = self.gamma;
        if let Some(v) = self.ridge {
            s.lda_ridge = v;
        }
        if let Some(v) = self.nb_features {
            s.nb_features = match v {
                NbFeatureChoice::Likelihoods => NbFeatures::Likelihoods,
                NbFeatureChoice::Posteriors => NbFeatures::Posteriors,
                NbFeatureChoice::Identity => NbFeatures::Identity,
            };
        }
        s.forest = ForestParams {
            n_trees: self.trees.unwrap_or(s.forest.n_trees),
            max_features: self.max_features.or(s.forest.max_features),
            max_depth: self.max_depth.or(s.forest.max_depth),
            ..s.forest
        };
        if let Some(v) = self.epochs {
            s.cnn.epochs = v;
        }
        if let Some(v) = self.batch_size {
            s.cnn.batch_size = v;
        }
        if let Some(v) = self.lr {
            s.cnn.learning_rate = v;
        }
        if let Some(v) = self.momentum {
            s.cnn.momentum = v;
        }
        s.cnn.seed = seed;
        s
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub model: ModelChoice,
    #[arg(long)]
    pub data: PathBuf,
    /// Training set A to F from the validation split, or `all` for every
    /// sample.
    #[arg(long, default_value = "F")]
    pub set: String,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// JSON report; a CSV with the same stem is written beside it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CurveArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Models to include, comma separated.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [ModelChoice::Lda, ModelChoice::Nbsvm, ModelChoice::Ksvm, ModelChoice::Forest, ModelChoice::Cnn])]
    pub models: Vec<ModelChoice>,
    /// Also write the Set-F models to `<out-dir>/models/<model>.csm`.
    #[arg(long)]
    pub save_models: bool,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Debug, Args)]
pub struct CrossEnvArgs {
    /// Training-room dataset; its Set F trains the label-shuffled control and
    /// any model not loaded from `--models-dir`.
    #[arg(long)]
    pub train_data: PathBuf,
    /// The other room's dataset.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Directory with `<model>.csm` files from `curve --save-models`.
    #[arg(long)]
    pub models_dir: Option<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [ModelChoice::Lda, ModelChoice::Nbsvm, ModelChoice::Ksvm, ModelChoice::Forest, ModelChoice::Cnn])]
    pub models: Vec<ModelChoice>,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Lib(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Lib(Error::Precondition(_)) => EXIT_USAGE,
            CliError::Lib(Error::Protocol(_)) => EXIT_PROTOCOL,
            CliError::Lib(_) => EXIT_DATA,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Lib(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

/// Parses `args` (program name first), runs the command and maps the outcome
/// to an exit code.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::from(EXIT_OK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn execute(cli: &Cli) -> CliResult {
    if let Some(n) = cli.threads.filter(|&n| n > 0) {
        // Fails only if a pool already exists, e.g. a second call in-process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let threads = rayon::current_num_threads();
    match &cli.command {
        Command::Gen(a) => cmd_gen(a, threads),
        Command::Convert(a) => cmd_convert(a, threads),
        Command::Train(a) => cmd_train(a, threads),
        Command::Eval(a) => cmd_eval(a, threads),
        Command::Curve(a) => cmd_curve(a, threads),
        Command::Crossenv(a) => cmd_crossenv(a, threads),
    }
}

#[derive(Serialize)]
struct Manifest<'a, C: Serialize> {
    schema: u32,
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    threads: usize,
    config: C,
    outputs: Vec<String>,
}

fn path_str(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn write_manifest<C: Serialize>(path: &Path, command: &str, threads: usize, config: C, outputs: &[&Path]) -> CliResult {
    let m = Manifest {
        schema: REPORT_SCHEMA,
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command,
        threads,
        config,
        outputs: outputs.iter().map(|p| path_str(p)).collect(),
    };
    write_json(path, &m)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Lib(Error::Format(e.to_string())))?;
    text.push('\n');
    write_text(path, &text)
}

fn write_text(path: &Path, text: &str) -> CliResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(Error::io)?;
    }
    fs::write(path, text).map_err(|e| CliError::Lib(Error::io(e)))
}

/// `<path>.manifest.json`
fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn extension(p: &Path) -> Option<String> {
    p.extension().map(|e| e.to_string_lossy().to_ascii_lowercase())
}

fn load_dataset(path: &Path) -> CliResult<Dataset> {
    match extension(path).as_deref() {
        Some("csd") => Ok(read_csd_file(path)?),
        _ => Err(CliError::Usage(format!("{} is not a .csd dataset", path.display()))),
    }
}

fn ensure_parent(path: &Path) -> CliResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(Error::io)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct GenConfig {
    env: EnvChoice,
    per_class: usize,
    seed: u64,
    out: String,
    samples: usize,
}

fn cmd_gen(a: &GenArgs, threads: usize) -> CliResult {
    if extension(&a.out).as_deref() != Some("csd") {
        return Err(CliError::Usage("gen writes a .csd file".into()));
    }
    let (env_a, env_b) = default_envs();
    let env = match a.env {
        EnvChoice::A => env_a,
        EnvChoice::B => env_b,
    };
    let data = gen_dataset(&env, [a.per_class; PostureLabel::COUNT], a.seed);
    ensure_parent(&a.out)?;
    write_csd_file(&data, &a.out)?;
    let cfg = GenConfig {
        env: a.env,
        per_class: a.per_class,
        seed: a.seed,
        out: path_str(&a.out),
        samples: data.len(),
    };
    write_manifest(&sidecar(&a.out), "gen", threads, cfg, &[&a.out])?;
    eprintln!("wrote {} samples to {}", data.len(), a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct ConvertConfig {
    input: String,
    output: String,
    labels_from: Option<String>,
    label: Option<String>,
    env_id: String,
    samples: usize,
}

fn cmd_convert(a: &ConvertArgs, threads: usize) -> CliResult {
    let (src, dst) = (extension(&a.input), extension(&a.output));
    let data = match (src.as_deref(), dst.as_deref()) {
        (Some("csd"), Some("npy")) => {
            let data = read_csd_file(&a.input)?;
            eprintln!("warning: NPY stores tensors only; {} labels and the environment tag are dropped", data.len());
            ensure_parent(&a.output)?;
            let file = fs::File::create(&a.output).map_err(Error::io)?;
            let mut sink = std::io::BufWriter::new(file);
            write_npy(&data, &mut sink)?;
            std::io::Write::flush(&mut sink).map_err(Error::io)?;
            data
        }
        (Some("npy"), Some("csd")) => {
            let tensor = parse_npy(&fs::read(&a.input).map_err(Error::io)?)?;
            let n = tensor.sample_count();
            let (labels, env_from_labels) = match (&a.labels_from, a.label) {
                (Some(_), Some(_)) => return Err(CliError::Usage("use either --labels-from or --label".into())),
                (Some(p), None) => {
                    let src = load_dataset(p)?;
                    if src.len() != n {
                        return Err(CliError::Lib(Error::Data(format!("{} labels for {n} tensors", src.len()))));
                    }
                    (src.labels(), Some(src.env_id))
                }
                (None, Some(l)) => (vec![l; n], None),
                (None, None) => return Err(CliError::Usage("NPY carries no labels; pass --labels-from or --label".into())),
            };
            let env_id = a.env_id.clone().or(env_from_labels).unwrap_or_else(|| "npy".into());
            let data = tensor.into_dataset(&env_id, &labels)?;
            ensure_parent(&a.output)?;
            write_csd_file(&data, &a.output)?;
            data
        }
        _ => {
            return Err(CliError::Usage(format!(
                "cannot convert {} to {}; supported: .csd -> .npy and .npy -> .csd",
                a.input.display(),
                a.output.display()
            )))
        }
    };
    let cfg = ConvertConfig {
        input: path_str(&a.input),
        output: path_str(&a.output),
        labels_from: a.labels_from.as_deref().map(path_str),
        label: a.label.map(|l| l.name().to_string()),
        env_id: data.env_id.clone(),
        samples: data.len(),
    };
    write_manifest(&sidecar(&a.output), "convert", threads, cfg, &[&a.output])
}

#[derive(Serialize)]
struct TrainConfigDoc<'a> {
    data: String,
    set: String,
    train_samples: usize,
    spec: &'a ModelSpec,
    out: String,
}

fn training_subset(data: &Dataset, set: &str, seed: u64) -> CliResult<Dataset> {
    if set.eq_ignore_ascii_case("all") {
        return Ok(data.clone());
    }
    let idx = set_index(set).ok_or_else(|| CliError::Usage(format!("unknown set '{set}', expected A-F or all")))?;
    let plan = make_split(data, seed)?;
    Ok(data.subset(&plan.training(idx)))
}

fn cmd_train(a: &TrainArgs, threads: usize) -> CliResult {
    let data = load_dataset(&a.data)?;
    let train = training_subset(&data, &a.set, a.seed)?;
    let spec = a.hyper.spec(a.model.into(), a.seed);
    let model = train_model(&spec, &train)?;
    ensure_parent(&a.out)?;
    model.save(&a.out)?;
    let cfg = TrainConfigDoc {
        data: path_str(&a.data),
        set: a.set.to_ascii_uppercase(),
        train_samples: train.len(),
        spec: &spec,
        out: path_str(&a.out),
    };
    write_manifest(&sidecar(&a.out), "train", threads, cfg, &[&a.out])?;
    eprintln!("trained {} on {} samples", spec.kind, train.len());
    Ok(())
}

#[derive(Serialize)]
struct EvalDoc<'a> {
    schema: u32,
    set: Option<String>,
    report: &'a EvalReport,
}

fn cmd_eval(a: &EvalArgs, threads: usize) -> CliResult {
    let model = TrainedModel::load(&a.model)?;
    let data = load_dataset(&a.data)?;
    let report = evaluate(&model, &data);
    let doc = EvalDoc {
        schema: REPORT_SCHEMA,
        set: None,
        report: &report,
    };
    write_json(&a.out, &doc)?;
    let csv_path = a.out.with_extension("csv");
    write_text(&csv_path, &format!("{CSV_HEADER}\n{}\n", crate::eval::csv_row("", 0, &report)))?;
    #[derive(Serialize)]
    struct Cfg {
        model: String,
        data: String,
    }
    let cfg = Cfg {
        model: path_str(&a.model),
        data: path_str(&a.data),
    };
    write_manifest(&sidecar(&a.out), "eval", threads, cfg, &[&a.out, &csv_path])?;
    eprintln!("accuracy {:.4} on {} samples", report.accuracy, report.total());
    Ok(())
}

fn specs(models: &[ModelChoice], hyper: &HyperArgs, seed: u64) -> CliResult<Vec<ModelSpec>> {
    if models.is_empty() {
        return Err(CliError::Usage("no models selected".into()));
    }
    let mut seen = Vec::new();
    for m in models {
        if seen.contains(m) {
            return Err(CliError::Usage(format!("model {m:?} listed twice")));
        }
        seen.push(*m);
    }
    Ok(models.iter().map(|&m| hyper.spec(m.into(), seed)).collect())
}

#[derive(Serialize)]
struct CurveConfig<'a> {
    data: String,
    seed: u64,
    specs: &'a [ModelSpec],
    sets: [&'static str; 6],
    set_sizes: [usize; 6],
}

fn cmd_curve(a: &CurveArgs, threads: usize) -> CliResult {
    let data = load_dataset(&a.data)?;
    let specs = specs(&a.models, &a.hyper, a.seed)?;
    let (report, finals) = learning_curve(&data, &specs, a.seed)?;
    let json = a.out_dir.join("curve.json");
    let csv = a.out_dir.join("curve.csv");
    write_json(&json, &report)?;
    write_text(&csv, &curve_csv(&report))?;
    let mut outputs = vec![json.clone(), csv.clone()];
    if a.save_models {
        let dir = a.out_dir.join("models");
        fs::create_dir_all(&dir).map_err(Error::io)?;
        for m in &finals {
            let p = dir.join(format!("{}.csm", m.kind().name()));
            m.save(&p)?;
            outputs.push(p);
        }
    }
    let cfg = CurveConfig {
        data: path_str(&a.data),
        seed: a.seed,
        specs: &specs,
        sets: SET_NAMES,
        set_sizes: SET_SIZES,
    };
    let refs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    write_manifest(&a.out_dir.join("manifest.json"), "curve", threads, cfg, &refs)?;
    eprintln!("learning curve: {} cells", report.cells.len());
    Ok(())
}

#[derive(Serialize)]
struct CrossEnvConfig<'a> {
    train_data: String,
    data: String,
    seed: u64,
    models_dir: Option<String>,
    specs: &'a [ModelSpec],
}

fn cmd_crossenv(a: &CrossEnvArgs, threads: usize) -> CliResult {
    let train_all = load_dataset(&a.train_data)?;
    let target = load_dataset(&a.data)?;
    let specs = specs(&a.models, &a.hyper, a.seed)?;
    let last = SET_SIZES.len() - 1;
    let plan = make_split(&train_all, a.seed)?;
    let set_f = train_all.subset(&plan.training(last));
    let mut models = Vec::with_capacity(specs.len());
    for spec in &specs {
        let model = match &a.models_dir {
            Some(dir) => {
                let m = TrainedModel::load(&dir.join(format!("{}.csm", spec.kind.name())))?;
                if m.kind() != spec.kind {
                    return Err(CliError::Lib(Error::Format(format!("model file for {} holds a {}", spec.kind, m.kind()))));
                }
                m
            }
            None => train_model(spec, &set_f)?,
        };
        models.push(model);
    }
    let control = shuffled_control(&set_f, a.seed)?;
    let report = cross_env(&models, &target, Some(&control));
    let json = a.out_dir.join("crossenv.json");
    let csv = a.out_dir.join("crossenv.csv");
    write_json(&json, &report)?;
    write_text(&csv, &cross_env_csv(&report, SET_NAMES[last], SET_SIZES[last]))?;
    let cfg = CrossEnvConfig {
        train_data: path_str(&a.train_data),
        data: path_str(&a.data),
        seed: a.seed,
        models_dir: a.models_dir.as_deref().map(path_str),
        specs: &specs,
    };
    write_manifest(&a.out_dir.join("manifest.json"), "crossenv", threads, cfg, &[&json, &csv])?;
    eprintln!("cross-environment: {} reports on {} samples", report.reports.len(), target.len());
    Ok(())
}
