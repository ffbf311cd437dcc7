//! Command-line pipeline: simulate, train, generate, evaluate, oracle-check.
//!
//! Settings resolve as defaults < TOML config file < flags. Every command
//! records its resolved settings in `<out>/manifest.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::{Deserialize, Serialize};

use crate::checks;
use crate::diffusion::{DiffusionSchedule, GaussianModel, GaussianModelFile};
use crate::error::{Error, Result};
use crate::factor_model::{build_synthetic_spec, sample_dataset, Dataset, NoiseMixing, ScaleMode};
use crate::io::{read_dataset, read_tensor, write_dataset, write_metrics_csv, write_tensor, Dtype, MetricValue};
use crate::linalg::{qr_orthonormalize, TuckerBasis};
use crate::matrix::Matrix;
use crate::metrics::{evaluate_generation, EvalInputs};
use crate::rng::Rng;
use crate::sampler::{generate, Perturbed, SamplerConfig, Scheme, ScoreSource};
use crate::tensor::DenseTensor;
use crate::trainer::{load_training, train_from, write_loss_csv, CheckpointPlan, TrainConfig, TrainState};
use crate::tucker_unet::{init_net, InitMode, NetConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_IO: i32 = 3;

/// Stable exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else if e.is_io() {
        EXIT_IO
    } else {
        EXIT_VALIDATION
    }
}

#[derive(Parser, Debug)]
#[command(name = "tuckerdiff", version, about = "Tucker-structured score diffusion on matrix data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Draw train/test data from the synthetic factor model.
    Simulate,
    /// Train a score network on `<out>/train.ten`.
    Train,
    /// Run the reverse process and write generated samples.
    Generate,
    /// Score every generated dataset in the run directory.
    Evaluate,
    /// Run the built-in numerical self-checks.
    OracleCheck,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::Train => "train",
            Self::Generate => "generate",
            Self::Evaluate => "evaluate",
            Self::OracleCheck => "oracle-check",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    Net,
    Oracle,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Flags {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub init: Option<InitMode>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    #[arg(long, global = true)]
    pub scheme: Option<Scheme>,
    #[arg(long, global = true)]
    pub ngen: Option<usize>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Run directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub score: Option<ScoreKind>,
    /// Scale the score by `1 + EPS` (negative control).
    #[arg(long, global = true, value_name = "EPS", allow_negative_numbers = true)]
    pub perturb_score: Option<f64>,
    /// Noise scale of the synthetic model.
    #[arg(long, global = true)]
    pub sigma: Option<f64>,
    /// Gaussian model JSON for `--score oracle`; defaults to `<out>/oracle_model.json`.
    #[arg(long, global = true)]
    pub model_file: Option<PathBuf>,
    /// Continue training from the checkpoint in the model directory.
    #[arg(long, global = true)]
    pub resume: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub dims: Vec<usize>,
    pub ranks: Vec<usize>,
    pub sigma: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub mixing: NoiseMixing,
    pub scale: ScaleMode,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            dims: vec![32, 32],
            ranks: vec![4, 4],
            sigma: 0.5,
            n_train: 2048,
            n_test: 512,
            mixing: NoiseMixing::default(),
            scale: ScaleMode::RawLoadings,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub init: InitMode,
    pub heterogeneity: bool,
    pub hidden: Option<Vec<usize>>,
    pub sigma_max2: Option<f64>,
    pub omega_init: Option<f64>,
    pub t0: f64,
    pub t_end: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let s = DiffusionSchedule::default();
        Self {
            init: InitMode::Warm,
            heterogeneity: true,
            hidden: None,
            sigma_max2: None,
            omega_init: None,
            t0: s.t0,
            t_end: s.t_end,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub times_per_sample: usize,
    pub checkpoint_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            times_per_sample: t.times_per_sample,
            checkpoint_every: t.checkpoint_every,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleSection {
    pub steps: usize,
    pub scheme: Scheme,
    pub n_gen: usize,
    pub score: ScoreKind,
    pub perturb_score: f64,
}

impl Default for SampleSection {
    fn default() -> Self {
        let s = SamplerConfig::default();
        Self {
            steps: s.steps,
            scheme: s.scheme,
            n_gen: s.n_gen,
            score: ScoreKind::Net,
            perturb_score: 0.0,
        }
    }
}

/// Fully resolved settings of one invocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Config files hold TOML integers, so seeds above `i64::MAX` only
    /// work through `--seed`.
    pub seed: u64,
    pub out: PathBuf,
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub sample: SampleSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("run"),
            data: DataSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            sample: SampleSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        Self::from_toml(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// Defaults, then the `--config` file, then individual flags.
    pub fn resolve(flags: &Flags) -> Result<Self> {
        let mut c = match &flags.config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        c.apply(flags);
        c.validate()?;
        Ok(c)
    }

    fn apply(&mut self, f: &Flags) {
        if let Some(v) = f.seed {
            self.seed = v;
        }
        if let Some(v) = &f.out {
            self.out = v.clone();
        }
        if let Some(v) = f.sigma {
            self.data.sigma = v;
        }
        if let Some(v) = f.init {
            self.model.init = v;
        }
        if let Some(v) = f.epochs {
            self.train.epochs = v;
        }
        if let Some(v) = f.steps {
            self.sample.steps = v;
        }
        if let Some(v) = f.scheme {
            self.sample.scheme = v;
        }
        if let Some(v) = f.ngen {
            self.sample.n_gen = v;
        }
        if let Some(v) = f.score {
            self.sample.score = v;
        }
        if let Some(v) = f.perturb_score {
            self.sample.perturb_score = v;
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.dims.len() != 2 || d.ranks.len() != 2 {
            return Err(Error::Config("data.dims and data.ranks must have two entries".into()));
        }
        if d.n_train == 0 {
            return Err(Error::Config("data.n_train must be positive".into()));
        }
        if !(d.sigma > 0.0) {
            return Err(Error::Config(format!("data.sigma = {} must be positive", d.sigma)));
        }
        if !self.sample.perturb_score.is_finite() {
            return Err(Error::Config("sample.perturb_score must be finite".into()));
        }
        self.sched()?;
        self.net_config().validate()?;
        self.train_config().validate()?;
        self.sampler_config()?.validate()
    }

    pub fn sched(&self) -> Result<DiffusionSchedule> {
        DiffusionSchedule::new(self.model.t0, self.model.t_end)
    }

    pub fn net_config(&self) -> NetConfig {
        let mut c = NetConfig::new(self.data.dims.clone(), self.data.ranks.clone(), self.model.init);
        c.sched = self.sched().unwrap_or_default();
        c.heterogeneity = self.model.heterogeneity;
        c.hidden = self.model.hidden.clone();
        c.sigma_max2 = self.model.sigma_max2;
        c.omega_init = self.model.omega_init;
        c
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            lr: self.train.lr,
            times_per_sample: self.train.times_per_sample,
            seed: self.seed,
            checkpoint_every: self.train.checkpoint_every,
            ..TrainConfig::default()
        }
    }

    pub fn sampler_config(&self) -> Result<SamplerConfig> {
        Ok(SamplerConfig {
            steps: self.sample.steps,
            scheme: self.sample.scheme,
            sched: self.sched()?,
            seed: self.seed,
            n_gen: self.sample.n_gen,
        })
    }

    pub fn model_dir(&self) -> PathBuf {
        self.out.join(format!("model_{}", self.model.init))
    }
}

/// Fixed file layout of a run directory.
pub mod layout {
    use std::path::{Path, PathBuf};

    pub fn train(out: &Path) -> PathBuf {
        out.join("train.ten")
    }

    pub fn test(out: &Path) -> PathBuf {
        out.join("test.ten")
    }

    pub fn truth_frame(out: &Path, d: usize) -> PathBuf {
        out.join("truth_basis").join(format!("frame_{d}.ten"))
    }

    pub fn oracle_model(out: &Path) -> PathBuf {
        out.join("oracle_model.json")
    }

    pub fn oracle_dir(out: &Path) -> PathBuf {
        out.join("oracle")
    }

    pub fn checkpoint(model_dir: &Path) -> PathBuf {
        model_dir.join("checkpoint")
    }

    pub fn generated(dir: &Path, seed: u64) -> PathBuf {
        dir.join(format!("generated_seed{seed}.ten"))
    }

    pub fn manifest(out: &Path) -> PathBuf {
        out.join("manifest.json")
    }

    pub fn metrics(out: &Path) -> PathBuf {
        out.join("metrics.csv")
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| Error::io(path, e))
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingInput(path.to_path_buf()))
    }
}

type Manifest = BTreeMap<String, serde_json::Value>;

fn read_manifest(out: &Path) -> Result<Manifest> {
    let path = layout::manifest(out);
    if !path.exists() {
        return Ok(Manifest::new());
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Records the resolved settings of `cmd` (plus `extra`) in the manifest.
fn record(cfg: &RunConfig, cmd: Command, extra: serde_json::Value) -> Result<()> {
    let mut m = read_manifest(&cfg.out)?;
    m.insert("format".into(), "tuckerdiff-run-v1".into());
    m.insert(
        cmd.name().into(),
        serde_json::json!({ "config": cfg, "details": extra }),
    );
    write_json(&m, &layout::manifest(&cfg.out))
}

fn frame_tensor(m: &Matrix) -> Result<DenseTensor> {
    DenseTensor::from_dims(&[m.rows(), m.cols()], m.as_slice().to_vec())
}

fn rng_for(cfg: &RunConfig, purpose: &str) -> Rng {
    Rng::new(cfg.seed).substream(purpose, 0)
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<()> {
    let d = &cfg.data;
    let spec = build_synthetic_spec(
        d.dims[0],
        d.dims[1],
        d.ranks[0],
        d.ranks[1],
        d.sigma,
        d.mixing,
        &rng_for(cfg, "model"),
    )?;
    let mut train = sample_dataset(&spec, d.n_train, &rng_for(cfg, "train"), d.scale)?;
    train.meta.split = "train".into();
    create_dir(&cfg.out)?;
    write_dataset(&train, &layout::train(&cfg.out), Dtype::F64)?;
    if d.n_test > 0 {
        let mut test = sample_dataset(&spec, d.n_test, &rng_for(cfg, "test"), d.scale)?;
        test.meta.split = "test".into();
        write_dataset(&test, &layout::test(&cfg.out), Dtype::F64)?;
    }
    for (k, f) in spec.frames.frames().iter().enumerate() {
        let path = layout::truth_frame(&cfg.out, k);
        create_dir(path.parent().expect("frame path has a parent"))?;
        write_tensor(&frame_tensor(f.matrix())?, &path, Dtype::F64)?;
    }
    let oracle = GaussianModel::from_factor_spec(&spec, d.scale)?;
    write_json(&oracle.to_file(), &layout::oracle_model(&cfg.out))?;
    let fingerprint = spec.fingerprint();
    info!("simulated {} train / {} test samples, spec {fingerprint}", d.n_train, d.n_test);
    record(cfg, Command::Simulate, serde_json::json!({ "spec_fingerprint": fingerprint }))
}

#[derive(Serialize)]
struct TrainTiming {
    epochs_run: usize,
    mean_epoch_seconds: f64,
    epoch_seconds: Vec<f64>,
}

pub fn cmd_train(cfg: &RunConfig, resume: bool) -> Result<()> {
    let train_path = layout::train(&cfg.out);
    require(&train_path)?;
    let data = read_dataset(&train_path)?;
    let dir = cfg.model_dir();
    let ckpt = layout::checkpoint(&dir);
    let (mut net, mut state) = if resume {
        let (net, state) = load_training(&ckpt)?;
        if net.config != cfg.net_config() {
            return Err(Error::Config(format!(
                "checkpoint in {} was made with different model settings",
                ckpt.display()
            )));
        }
        info!("resuming after epoch {}", state.epochs_done);
        (net, state)
    } else {
        (init_net(&cfg.net_config(), Some(&data), &rng_for(cfg, "init"))?, TrainState::default())
    };
    let plan = CheckpointPlan { dir: ckpt };
    let report = train_from(&mut net, &data, &cfg.train_config(), &mut state, Some(&plan))?;
    write_loss_csv(&state.loss_history, &dir.join("loss.csv"))?;
    let n = report.epoch_seconds.len();
    let timing = TrainTiming {
        epochs_run: n,
        mean_epoch_seconds: if n > 0 { report.epoch_seconds.iter().sum::<f64>() / n as f64 } else { 0.0 },
        epoch_seconds: report.epoch_seconds,
    };
    write_json(&timing, &dir.join("timing.json"))?;
    record(cfg, Command::Train, serde_json::json!({ "model_dir": dir, "epochs_done": state.epochs_done }))
}

/// Loads a Gaussian model JSON file.
pub fn load_gaussian_model(path: &Path) -> Result<GaussianModel> {
    require(path)?;
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: GaussianModelFile = serde_json::from_str(&text)?;
    GaussianModel::from_file(&file)
}

#[derive(Serialize)]
struct GenerateTiming {
    n_gen: usize,
    steps: usize,
    scheme: Scheme,
    /// Wall time of the reverse process only.
    backward_seconds: f64,
}

pub fn cmd_generate(cfg: &RunConfig, model_file: Option<&Path>) -> Result<()> {
    let scfg = cfg.sampler_config()?;
    let (source, dir): (Box<dyn ScoreSource>, PathBuf) = match cfg.sample.score {
        ScoreKind::Net => {
            let dir = cfg.model_dir();
            let (net, _) = load_training(&layout::checkpoint(&dir))?;
            (Box::new(net), dir)
        }
        ScoreKind::Oracle => {
            let path = model_file.map(Path::to_path_buf).unwrap_or_else(|| layout::oracle_model(&cfg.out));
            (Box::new(load_gaussian_model(&path)?), layout::oracle_dir(&cfg.out))
        }
    };
    let shape = crate::tensor::TensorShape::new(cfg.data.dims.clone())?;
    let perturbed = Perturbed {
        inner: source.as_ref(),
        eps: cfg.sample.perturb_score,
    };
    let start = Instant::now();
    let mut data = generate(&perturbed, &shape, &scfg)?;
    let secs = start.elapsed().as_secs_f64();
    data.meta.split = "generated".into();
    create_dir(&dir)?;
    write_dataset(&data, &layout::generated(&dir, cfg.seed), Dtype::F64)?;
    let timing = GenerateTiming {
        n_gen: scfg.n_gen,
        steps: scfg.steps,
        scheme: scfg.scheme,
        backward_seconds: secs,
    };
    write_json(&timing, &dir.join(format!("timing_seed{}.json", cfg.seed)))?;
    info!("generated {} samples in {secs:.2}s", scfg.n_gen);
    record(cfg, Command::Generate, serde_json::json!({ "dir": dir }))
}

fn read_truth(cfg: &RunConfig) -> Result<TuckerBasis> {
    let frames = (0..cfg.data.dims.len())
        .map(|d| {
            let path = layout::truth_frame(&cfg.out, d);
            require(&path)?;
            let t = read_tensor(&path)?;
            if t.dims().len() != 2 {
                return Err(Error::ShapeMismatch(format!("{} is not a matrix", path.display())));
            }
            let m = Matrix::from_vec(t.dims()[0], t.dims()[1], t.into_data())?;
            qr_orthonormalize(&m, d)
        })
        .collect::<Result<_>>()?;
    TuckerBasis::new(frames)
}

/// Generated datasets under `out`, as `(model, seed, path)` sorted by name.
fn generated_runs(out: &Path) -> Result<Vec<(String, u64, PathBuf)>> {
    let mut runs = Vec::new();
    let entries = fs::read_dir(out).map_err(|e| Error::io(out, e))?;
    let mut dirs: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect();
    dirs.sort();
    for dir in dirs {
        let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let model = match name.strip_prefix("model_") {
            Some(m) => m.to_string(),
            None if name == "oracle" => name.clone(),
            None => continue,
        };
        let mut files: Vec<(u64, PathBuf)> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter_map(|p| {
                let stem = p.file_name()?.to_str()?.strip_prefix("generated_seed")?.strip_suffix(".ten")?;
                Some((stem.parse().ok()?, p))
            })
            .collect();
        files.sort();
        runs.extend(files.into_iter().map(|(s, p)| (model.clone(), s, p)));
    }
    Ok(runs)
}

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<()> {
    let train_path = layout::train(&cfg.out);
    require(&train_path)?;
    let train = read_dataset(&train_path)?;
    let test_path = layout::test(&cfg.out);
    let test: Option<Dataset> = if test_path.exists() { Some(read_dataset(&test_path)?) } else { None };
    let synthetic = read_manifest(&cfg.out)?.contains_key(Command::Simulate.name());
    let truth = if synthetic { Some(read_truth(cfg)?) } else { None };
    let runs = generated_runs(&cfg.out)?;
    if runs.is_empty() {
        return Err(Error::MissingInput(cfg.out.join("model_<init>/generated_seed<seed>.ten")));
    }
    let mut rows = Vec::new();
    for (model, seed, path) in &runs {
        let generated = read_dataset(path)?;
        let metrics = evaluate_generation(&EvalInputs {
            train: &train,
            test: test.as_ref(),
            generated: &generated,
            truth: truth.as_ref(),
            ranks: &cfg.data.ranks,
        })?;
        let mut row = vec![
            ("model".to_string(), MetricValue::Text(model.clone())),
            ("seed".to_string(), MetricValue::Num(*seed as f64)),
        ];
        row.extend(metrics);
        rows.push(row);
    }
    let columns: Vec<String> = rows[0].iter().map(|(k, _)| k.clone()).collect();
    write_metrics_csv(&columns, &rows, &layout::metrics(&cfg.out))?;
    info!("wrote {} metric rows", rows.len());
    record(cfg, Command::Evaluate, serde_json::json!({ "rows": rows.len() }))
}

/// Runs all self-checks, printing one line each. Returns whether all passed.
pub fn cmd_oracle_check(cfg: &RunConfig) -> Result<bool> {
    let results = checks::run_all(cfg.seed, cfg.sample.perturb_score)?;
    let mut ok = true;
    for r in &results {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
        ok &= r.passed;
    }
    Ok(ok)
}

/// Executes a parsed command line and returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    if let Some(n) = cli.flags.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return EXIT_VALIDATION;
        }
        // Fails only if a pool already exists (e.g. a second call in-process).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let outcome = RunConfig::resolve(&cli.flags).and_then(|cfg| match cli.command {
        Command::Simulate => cmd_simulate(&cfg).map(|_| EXIT_OK),
        Command::Train => cmd_train(&cfg, cli.flags.resume).map(|_| EXIT_OK),
        Command::Generate => cmd_generate(&cfg, cli.flags.model_file.as_deref()).map(|_| EXIT_OK),
        Command::Evaluate => cmd_evaluate(&cfg).map(|_| EXIT_OK),
        Command::OracleCheck => cmd_oracle_check(&cfg).map(|ok| if ok { EXIT_OK } else { EXIT_NUMERICAL }),
    });
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(&cli),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let _ = e.print();
            code
        }
    }
}
