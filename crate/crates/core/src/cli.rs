//! Command implementations behind the `somstream` binary: generate, train,
//! run, evaluate and the end-to-end pipeline.
//!
//! Every command takes a [`RunConfig`]. Configs are TOML key-value files and
//! every command-line flag overrides the matching key.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{self, ReportFiles, RunMeta, RunReport, UndefinedF};
use crate::fsutil::write_atomic;
use crate::offline::{self, Model, OfflineConfig};
use crate::online::{OnlineConfig, OnlineState, Prediction, Variant, DEFAULT_ETA};
use crate::stats::AvgOutputMode;
use crate::streams::{self, LoadedStream, SphericalStreamConfig, SplitMode};
use crate::types::{Instance, LabelSet};

pub const OUT_DIR_ENV: &str = "SOMSTREAM_OUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Stream file to train on and classify.
    pub dataset: Option<PathBuf>,
    /// Generator config; when set, the pipeline generates its stream first.
    pub generator: Option<PathBuf>,
    /// Label used in report metadata; defaults to the stream file name.
    pub dataset_id: Option<String>,
    pub grid_dim: usize,
    pub eta: f64,
    pub seed: u64,
    pub windows: usize,
    pub offline_fraction: f64,
    pub split_mode: SplitMode,
    pub avg_output_mode: AvgOutputMode,
    pub variant: Variant,
    pub scale_features: bool,
    pub undefined_f: UndefinedF,
    pub max_epochs: usize,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: None,
            generator: None,
            dataset_id: None,
            grid_dim: 3,
            eta: DEFAULT_ETA,
            seed: 0,
            windows: eval::DEFAULT_WINDOWS,
            offline_fraction: 0.10,
            split_mode: SplitMode::Head,
            avg_output_mode: AvgOutputMode::Verbatim,
            variant: Variant::Adaptive,
            scale_features: true,
            undefined_f: UndefinedF::Zero,
            max_epochs: 100,
            output_dir: std::env::var_os(OUT_DIR_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("somstream-out")),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_dim == 0 {
            return Err(Error::Config("grid_dim must be at least 1".into()));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::Config(format!("eta {} outside (0, 1)", self.eta)));
        }
        if self.windows == 0 {
            return Err(Error::Config("windows must be at least 1".into()));
        }
        if !(self.offline_fraction > 0.0 && self.offline_fraction < 1.0) {
            return Err(Error::Config(format!(
                "offline_fraction {} outside (0, 1)",
                self.offline_fraction
            )));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        Ok(())
    }

    pub fn offline_config(&self) -> OfflineConfig {
        let mut cfg = OfflineConfig::new(self.grid_dim, self.seed);
        cfg.som.max_epochs = self.max_epochs;
        cfg.scale_features = self.scale_features;
        cfg
    }

    pub fn online_config(&self, variant: Variant) -> OnlineConfig {
        OnlineConfig {
            eta: self.eta,
            avg_output_mode: self.avg_output_mode,
            variant,
        }
    }

    fn run_meta(&self, stream: &Path, variant: Variant) -> RunMeta {
        let dataset = self.dataset_id.clone().unwrap_or_else(|| {
            stream
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default()
        });
        RunMeta {
            dataset,
            variant,
            grid_dim: self.grid_dim,
            eta: self.eta,
            seed: self.seed,
        }
    }
}

/// `dir/stem<suffix>` for a path `dir/stem.ext`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::create_dir_all(p).map_err(|e| Error::io(p, e)),
        _ => Ok(()),
    }
}

/// Writes a generated stream to `out` and echoes the effective config to
/// `<stem>.config.toml` beside it.
pub fn cmd_generate(config: &Path, out: &Path, seed: Option<u64>) -> Result<PathBuf> {
    let text = fs::read_to_string(config).map_err(|e| Error::io(config, e))?;
    let mut cfg = SphericalStreamConfig::from_toml(&text)?;
    if let Some(s) = seed {
        cfg.rng_seed = s;
    }
    generate_to(&cfg, out)
}

pub fn generate_to(cfg: &SphericalStreamConfig, out: &Path) -> Result<PathBuf> {
    let instances = streams::generate_spherical(cfg)?;
    ensure_parent(out)?;
    streams::write_stream(out, &instances, cfg.n_features, cfg.n_classes)?;
    let echo = sibling(out, ".config.toml");
    if let Err(e) = write_atomic(&echo, cfg.to_toml().as_bytes()) {
        let _ = fs::remove_file(out);
        return Err(e);
    }
    info!("wrote {} instances to {}", instances.len(), out.display());
    Ok(echo)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub n_train: usize,
    pub n_features: usize,
    pub n_classes: usize,
    pub grid_dim: usize,
    pub seed: u64,
    /// Surviving neurons per class map.
    pub map_sizes: Vec<usize>,
    pub k: usize,
    pub label_cardinality: f64,
}

fn load_stream(path: &Path) -> Result<LoadedStream> {
    let s = streams::load_delimited(path, None)?;
    let zero = s.zero_labels();
    if !zero.is_empty() {
        log::warn!("{}: labels with no positive rows: {zero:?}", path.display());
    }
    Ok(s)
}

/// Splits the stream file, trains on the offline part and writes the model
/// plus `<stem>.summary.json`.
pub fn cmd_train(stream: &Path, cfg: &RunConfig, model_out: &Path) -> Result<TrainingSummary> {
    cfg.validate()?;
    let loaded = load_stream(stream)?;
    let (n_features, n_classes) = (loaded.n_features, loaded.n_classes);
    let split = streams::split_offline(loaded.instances, n_classes, cfg.offline_fraction, cfg.split_mode)?;
    if !split.missing_classes.is_empty() {
        return Err(Error::Config(format!(
            "classes missing from the offline split: {:?}",
            split.missing_classes
        )));
    }
    let model = offline::train_offline(&split.train, n_classes, &cfg.offline_config())?;
    let summary = TrainingSummary {
        n_train: split.train.len(),
        n_features,
        n_classes,
        grid_dim: cfg.grid_dim,
        seed: cfg.seed,
        map_sizes: model.map_sizes(),
        k: model.k,
        label_cardinality: model.cardinality.z,
    };
    ensure_parent(model_out)?;
    offline::save_model(&model, model_out)?;
    let summary_path = sibling(model_out, ".summary.json");
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
    if let Err(e) = write_atomic(&summary_path, text.as_bytes()) {
        let _ = fs::remove_file(model_out);
        return Err(e);
    }
    Ok(summary)
}

pub fn log_to_string(log: &[Prediction]) -> String {
    let mut out = String::from("sequence_id\tlabels\n");
    for p in log {
        let labels: Vec<String> = p.labels.iter().map(|c| c.to_string()).collect();
        writeln!(out, "{}\t{}", p.sequence_id, labels.join(",")).unwrap();
    }
    out
}

pub fn parse_log(text: &str, source_name: &str) -> Result<Vec<Prediction>> {
    let err = |line: usize, message: String| Error::Parse {
        source_name: source_name.to_string(),
        line: line as u64,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "sequence_id\tlabels")) => {}
        _ => return Err(err(1, "expected header `sequence_id<TAB>labels`".into())),
    }
    let mut log = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let (id, labels) = line
            .split_once('\t')
            .ok_or_else(|| err(lineno, "expected two tab-separated fields".into()))?;
        let sequence_id = id
            .parse::<u64>()
            .map_err(|_| err(lineno, format!("bad sequence id `{id}`")))?;
        let labels = labels
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<usize>().map_err(|_| err(lineno, format!("bad class index `{s}`"))))
            .collect::<Result<LabelSet>>()?;
        log.push(Prediction { sequence_id, labels });
    }
    Ok(log)
}

pub fn read_log(path: &Path) -> Result<Vec<Prediction>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_log(&text, &path.display().to_string())
}

/// Which rows of a stream file `run` classifies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamPortion {
    /// Everything after the offline split defined by the run config.
    AfterSplit,
    /// The whole file.
    Whole,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub predictions: usize,
    pub rejects: u64,
    pub snapshot: Option<PathBuf>,
}

fn evaluation_portion(stream: &Path, cfg: &RunConfig, portion: StreamPortion) -> Result<LoadedStream> {
    let mut loaded = load_stream(stream)?;
    if portion == StreamPortion::AfterSplit {
        let instances = std::mem::take(&mut loaded.instances);
        loaded.instances = streams::split_offline(instances, loaded.n_classes, cfg.offline_fraction, cfg.split_mode)?.stream;
    }
    Ok(loaded)
}

fn check_schema(model: &Model, loaded: &LoadedStream) -> Result<()> {
    if model.n_features() != loaded.n_features || model.n_classes() != loaded.n_classes {
        return Err(Error::Schema(format!(
            "model expects {} features / {} classes, stream has {} / {}",
            model.n_features(),
            model.n_classes(),
            loaded.n_features,
            loaded.n_classes
        )));
    }
    Ok(())
}

/// Classifies the chosen stream portion and writes the prediction log. The
/// adaptive variant also writes the adapted model to `snapshot`.
pub fn cmd_run(
    model_path: &Path,
    stream: &Path,
    cfg: &RunConfig,
    portion: StreamPortion,
    log_out: &Path,
    snapshot: Option<&Path>,
) -> Result<RunOutput> {
    cfg.validate()?;
    let model = offline::load_model(model_path)?;
    let loaded = evaluation_portion(stream, cfg, portion)?;
    check_schema(&model, &loaded)?;
    let (log, state) = run_model(model, loaded.instances, cfg.online_config(cfg.variant))?;
    ensure_parent(log_out)?;
    write_atomic(log_out, log_to_string(&log).as_bytes())?;
    let snapshot = match (cfg.variant, snapshot) {
        (Variant::Adaptive, Some(path)) => {
            if let Err(e) = offline::save_model(state.model(), path) {
                let _ = fs::remove_file(log_out);
                return Err(e);
            }
            Some(path.to_path_buf())
        }
        _ => None,
    };
    Ok(RunOutput {
        predictions: log.len(),
        rejects: state.rejects(),
        snapshot,
    })
}

fn run_model(model: Model, instances: Vec<Instance>, cfg: OnlineConfig) -> Result<(Vec<Prediction>, OnlineState)> {
    let mut state = OnlineState::new(model, cfg)?;
    let mut log = Vec::with_capacity(instances.len());
    state.run(instances, |p| log.push(p));
    Ok((log, state))
}

fn truths_for(log: &[Prediction], loaded: &LoadedStream) -> Result<Vec<(u64, LabelSet)>> {
    log.iter()
        .map(|p| {
            loaded
                .instances
                .get(p.sequence_id as usize)
                .and_then(|i| i.truth.clone())
                .map(|t| (p.sequence_id, t))
                .ok_or_else(|| {
                    Error::usage(format!(
                        "log and stream misaligned at sequence id {}",
                        p.sequence_id
                    ))
                })
        })
        .collect()
}

/// Scores a prediction log against the truth in the stream file and writes
/// `<prefix>_windows.csv` and `<prefix>_summary.json` into `out_dir`.
pub fn cmd_evaluate(log_path: &Path, stream: &Path, cfg: &RunConfig, out_dir: &Path, prefix: &str) -> Result<RunReport> {
    cfg.validate()?;
    let log = read_log(log_path)?;
    let loaded = load_stream(stream)?;
    let report = evaluate_log(&log, &loaded, cfg, stream, cfg.variant)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    eval::emit_report(&report, out_dir, prefix)?;
    Ok(report)
}

fn evaluate_log(log: &[Prediction], loaded: &LoadedStream, cfg: &RunConfig, stream: &Path, variant: Variant) -> Result<RunReport> {
    let truths = truths_for(log, loaded)?;
    eval::windowed_evaluate(log, &truths, loaded.n_classes, cfg.windows, cfg.undefined_f, cfg.run_meta(stream, variant))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub files: Vec<PathBuf>,
    pub training: TrainingSummary,
    pub adaptive: RunReport,
    pub frozen: RunReport,
}

/// Tracks files written by the pipeline so a failure can remove them.
struct Outputs(Vec<PathBuf>);

impl Outputs {
    fn add(&mut self, p: PathBuf) -> PathBuf {
        self.0.push(p.clone());
        p
    }

    fn remove_all(&self) {
        for p in &self.0 {
            let _ = fs::remove_file(p);
        }
    }
}

/// generate (optional) → train → run adaptive → run frozen → evaluate both →
/// per-window comparison. All artifacts land in `cfg.output_dir`.
pub fn cmd_pipeline(cfg: &RunConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut outputs = Outputs(Vec::new());
    let result = pipeline_stages(cfg, &dir, &mut outputs);
    if result.is_err() {
        outputs.remove_all();
    }
    result
}

fn pipeline_stages(cfg: &RunConfig, dir: &Path, out: &mut Outputs) -> Result<PipelineOutput> {
    let stream = match (&cfg.generator, &cfg.dataset) {
        (Some(gen), _) => {
            let text = fs::read_to_string(gen).map_err(|e| Error::io(gen, e))?;
            let gcfg = SphericalStreamConfig::from_toml(&text)?;
            let path = out.add(dir.join("stream.csv"));
            out.add(sibling(&path, ".config.toml"));
            generate_to(&gcfg, &path)?;
            path
        }
        (None, Some(ds)) => ds.clone(),
        (None, None) => return Err(Error::Config("pipeline needs `dataset` or `generator`".into())),
    };

    let model_path = out.add(dir.join("model.json"));
    out.add(sibling(&model_path, ".summary.json"));
    let training = cmd_train(&stream, cfg, &model_path)?;
    info!("trained maps {:?}, k = {}", training.map_sizes, training.k);

    let model = offline::load_model(&model_path)?;
    let loaded = load_stream(&stream)?;
    check_schema(&model, &loaded)?;
    let eval_stream = streams::split_offline(loaded.instances.clone(), loaded.n_classes, cfg.offline_fraction, cfg.split_mode)?.stream;

    let mut reports = Vec::new();
    for variant in [Variant::Adaptive, Variant::Frozen] {
        let (log, state) = run_model(model.clone(), eval_stream.clone(), cfg.online_config(variant))?;
        let log_path = out.add(dir.join(format!("{variant}_log.tsv")));
        write_atomic(&log_path, log_to_string(&log).as_bytes())?;
        if variant == Variant::Adaptive {
            let snap = out.add(dir.join("adaptive_model.json"));
            offline::save_model(state.model(), &snap)?;
        }
        let report = evaluate_log(&log, &loaded, cfg, &stream, variant)?;
        let files = ReportFiles::for_prefix(dir, &variant.to_string());
        out.add(files.table);
        out.add(files.summary);
        eval::emit_report(&report, dir, &variant.to_string())?;
        info!("{variant}: mean macro-F {:.4}", report.mean_macro_f);
        reports.push(report);
    }
    let frozen = reports.pop().expect("two reports");
    let adaptive = reports.pop().expect("two reports");
    let cmp = out.add(dir.join("comparison.csv"));
    write_atomic(&cmp, eval::comparison_table(&adaptive, &frozen)?.as_bytes())?;

    Ok(PipelineOutput {
        files: out.0.clone(),
        training,
        adaptive,
        frozen,
    })
}

// ---------------------------------------------------------------------------
// Argument parsing

#[derive(Debug, Parser)]
#[command(name = "somstream", version, about = "Online multi-label stream classification with per-class SOMs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a spherical-cluster stream file from a generator config.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the generator's rng_seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model on the offline split of a stream file.
    Train {
        #[arg(long)]
        stream: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Classify a stream with a trained model and write the prediction log.
    Run {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        stream: PathBuf,
        #[arg(long)]
        log: PathBuf,
        /// Where to write the adapted model (adaptive variant only).
        #[arg(long)]
        snapshot: Option<PathBuf>,
        /// Classify every row instead of only the part after the offline split.
        #[arg(long)]
        whole_stream: bool,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Score a prediction log against the stream's ground truth.
    Evaluate {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        stream: PathBuf,
        #[arg(long, default_value = "report")]
        prefix: String,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Generate/train/run both variants/evaluate in one go.
    Pipeline {
        #[command(flatten)]
        run: RunArgs,
    },
}

/// Flags mirroring [`RunConfig`] keys; each overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// TOML run config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub generator: Option<PathBuf>,
    #[arg(long)]
    pub dataset_id: Option<String>,
    #[arg(long)]
    pub grid_dim: Option<usize>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub windows: Option<usize>,
    #[arg(long)]
    pub offline_fraction: Option<f64>,
    /// head | stratified
    #[arg(long)]
    pub split_mode: Option<SplitMode>,
    /// verbatim | running_mean
    #[arg(long)]
    pub avg_output_mode: Option<AvgOutputMode>,
    /// adaptive | frozen
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Disable min-max feature scaling.
    #[arg(long)]
    pub no_scale: bool,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long, env = OUT_DIR_ENV)]
    pub output_dir: Option<PathBuf>,
}

impl RunArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field {
                    cfg.$field = v.clone().into();
                }
            )*};
        }
        set!(dataset, generator, dataset_id, grid_dim, eta, seed, windows, offline_fraction, split_mode, avg_output_mode, variant, max_epochs, output_dir);
        if self.no_scale {
            cfg.scale_features = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { config, out, seed } => {
            let echo = cmd_generate(&config, &out, seed)?;
            println!("wrote {} and {}", out.display(), echo.display());
        }
        Command::Train { stream, model, run } => {
            let s = cmd_train(&stream, &run.resolve()?, &model)?;
            println!(
                "trained {} maps {:?} on {} instances; k = {}, z = {:.4}",
                s.n_classes, s.map_sizes, s.n_train, s.k, s.label_cardinality
            );
        }
        Command::Run {
            model,
            stream,
            log,
            snapshot,
            whole_stream,
            run,
        } => {
            let cfg = run.resolve()?;
            let snapshot = snapshot.or_else(|| Some(sibling(&log, "_model.json")));
            let portion = if whole_stream { StreamPortion::Whole } else { StreamPortion::AfterSplit };
            let out = cmd_run(&model, &stream, &cfg, portion, &log, snapshot.as_deref())?;
            println!("{} predictions ({} rejected) -> {}", out.predictions, out.rejects, log.display());
            if let Some(s) = out.snapshot {
                println!("adapted model -> {}", s.display());
            }
        }
        Command::Evaluate { log, stream, prefix, run } => {
            let cfg = run.resolve()?;
            let report = cmd_evaluate(&log, &stream, &cfg, &cfg.output_dir, &prefix)?;
            println!(
                "{} windows, mean macro-F {:.4} -> {}",
                report.windows.len(),
                report.mean_macro_f,
                cfg.output_dir.display()
            );
        }
        Command::Pipeline { run } => {
            let cfg = run.resolve()?;
            let out = cmd_pipeline(&cfg)?;
            println!(
                "adaptive mean macro-F {:.4}, frozen {:.4}; {} files in {}",
                out.adaptive.mean_macro_f,
                out.frozen.mean_macro_f,
                out.files.len(),
                cfg.output_dir.display()
            );
        }
    }
    Ok(())
}
