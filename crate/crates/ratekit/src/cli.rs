//! The `ratekit` command line.
//!
//! Every subcommand reads an optional JSON run configuration, applies flag
//! overrides, echoes the merged configuration to `<out>/config.json` and
//! writes its artifacts inside `<out>`. Exit codes: 0 success, 2 usage error,
//! 3 data or configuration error, 4 numerical failure.

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::bnn::{accuracy, build_network, train, NetworkConfig, OutputLink, TrainConfig};
use crate::data::{Dataset, MaskFile};
use crate::error::Error;
use crate::esa::write_effect_sizes_csv;
use crate::eval::{
    default_fractions, marginal_correlation, roc_auc, shuffle_degradation, DEFAULT_REPEATS,
};
use crate::pipeline::{
    collinearity_study, group_importance, variable_importance, ClassImportance, ImportanceOptions,
};
use crate::plot::{render_curve_svg, Series};
use crate::rate::{GroupMap, KldPath};
use crate::simgen::{synth_classification, SynthSpec};
use crate::util::{derive_seed, rng_at};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

/// Environment variable capping the worker threads.
pub const THREADS_ENV: &str = "RATEKIT_THREADS";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Binary if labels are {0, 1}, multiclass if they are larger integers,
    /// regression otherwise.
    #[default]
    Auto,
    Binary,
    Multiclass,
    Regression,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkOptions {
    pub hidden_sizes: Vec<usize>,
    pub task: Task,
    pub prior_scale: f64,
    pub noise_var: f64,
}

impl Default for NetworkOptions {
    fn default() -> Self {
        NetworkOptions {
            hidden_sizes: vec![512, 512],
            task: Task::Auto,
            prior_scale: 1.0,
            noise_var: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateOptions {
    pub fractions: Vec<f64>,
    pub repeats: usize,
}

impl Default for EvaluateOptions {
    fn default() -> Self {
        EvaluateOptions {
            fractions: default_fractions(),
            repeats: DEFAULT_REPEATS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollinearityOptions {
    pub n: usize,
    pub rho: f64,
    pub reps: usize,
}

impl Default for CollinearityOptions {
    fn default() -> Self {
        CollinearityOptions {
            n: 5000,
            rho: 0.999,
            reps: 100,
        }
    }
}

/// Merged configuration of one invocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    pub groups: Option<PathBuf>,
    /// Share of simulated rows written to `test.csv`.
    pub test_fraction: f64,
    pub simulate: SynthSpec,
    pub network: NetworkOptions,
    pub train: TrainConfig,
    pub rate: ImportanceOptions,
    pub evaluate: EvaluateOptions,
    pub collinearity: CollinearityOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            out_dir: None,
            data: None,
            test_data: None,
            model: None,
            mask: None,
            groups: None,
            test_fraction: 0.2,
            simulate: SynthSpec::default(),
            network: NetworkOptions::default(),
            train: TrainConfig::default(),
            rate: ImportanceOptions::default(),
            evaluate: EvaluateOptions::default(),
            collinearity: CollinearityOptions::default(),
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "ratekit",
    version,
    about = "Variable importance for Bayesian neural networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic classification dataset with a causal mask.
    Simulate(SimulateArgs),
    /// Train a variational network on a dataset CSV.
    Train(TrainArgs),
    /// Score every feature by RATE.
    Importance(ImportanceArgs),
    /// Score feature groups by groupRATE.
    GroupImportance(GroupArgs),
    /// ROC against a causal mask and shuffle degradation on held-out data.
    Evaluate(EvaluateArgs),
    /// Covariance effect sizes against OLS under strong collinearity.
    DemoCollinearity(DemoArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    frac_causal: Option<f64>,
    #[arg(long)]
    frac_redundant: Option<f64>,
    #[arg(long)]
    n_classes: Option<usize>,
    #[arg(long)]
    n_clusters_per_class: Option<usize>,
    #[arg(long)]
    class_sep: Option<f64>,
    #[arg(long)]
    flip_y: Option<f64>,
    #[arg(long)]
    test_fraction: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Comma-separated hidden layer widths.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    task: Option<Task>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    val_fraction: Option<f64>,
    #[arg(long)]
    prior_scale: Option<f64>,
}

#[derive(Args, Debug)]
struct RateArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    /// Dataset the effect sizes are computed on.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    jitter: Option<f64>,
    /// `fast` or `naive`.
    #[arg(long)]
    path: Option<String>,
}

#[derive(Args, Debug)]
struct ImportanceArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    rate: RateArgs,
}

#[derive(Args, Debug)]
struct GroupArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    rate: RateArgs,
    /// CSV of `group_name,feature_name` rows.
    #[arg(long)]
    groups: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    rate: RateArgs,
    /// Held-out dataset for shuffle degradation.
    #[arg(long)]
    test_data: Option<PathBuf>,
    /// Mask JSON written by `simulate`.
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long)]
    repeats: Option<usize>,
    /// Comma-separated shuffled fractions.
    #[arg(long, value_delimiter = ',')]
    fractions: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
struct DemoArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    reps: Option<usize>,
}

/// An error tagged with the pipeline stage it came from.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub source: Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} failed: {}", self.stage, self.source)
    }
}

impl std::error::Error for StageError {}

impl StageError {
    pub fn exit_code(&self) -> i32 {
        if self.source.is_numerical() {
            EXIT_NUMERICAL
        } else {
            EXIT_DATA
        }
    }
}

trait Stage<T> {
    fn stage(self, stage: &'static str) -> Result<T, StageError>;
}

impl<T, E: Into<Error>> Stage<T> for Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T, StageError> {
        self.map_err(|e| StageError {
            stage,
            source: e.into(),
        })
    }
}

fn config_err(stage: &'static str, msg: impl Into<String>) -> StageError {
    StageError {
        stage,
        source: Error::Config(msg.into()),
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code. Diagnostics go to stderr.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(t) if t > 0 => Some(t),
            _ => {
                eprintln!("ratekit: thread setup failed: {THREADS_ENV} must be a positive integer, got `{v}`");
                return EXIT_DATA;
            }
        },
        Err(_) => None,
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("ratekit: thread setup failed: {e}");
            return EXIT_DATA;
        }
    };
    match pool.install(|| run(cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("ratekit: {e}");
            e.exit_code()
        }
    }
}

fn load_config(common: &Common) -> Result<RunConfig, StageError> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).stage("reading config")?;
            serde_json::from_str(&text).stage("parsing config")?
        }
        None => RunConfig::default(),
    };
    if common.out.is_some() {
        cfg.out_dir = common.out.clone();
    }
    if common.seed.is_some() {
        cfg.seed = common.seed;
    }
    Ok(cfg)
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_opt<T>(slot: &mut Option<T>, value: Option<T>) {
    if value.is_some() {
        *slot = value;
    }
}

fn apply_rate_args(cfg: &mut RunConfig, args: RateArgs) -> Result<(), StageError> {
    set_opt(&mut cfg.model, args.model);
    set_opt(&mut cfg.data, args.data);
    set(&mut cfg.rate.jitter, args.jitter);
    if let Some(p) = args.path {
        cfg.rate.path = p.parse::<KldPath>().stage("parsing flags")?;
    }
    Ok(())
}

/// Writes artifacts inside the output directory, refusing to overwrite inputs.
struct Outputs {
    dir: PathBuf,
    inputs: Vec<PathBuf>,
}

impl Outputs {
    fn new(cfg: &RunConfig) -> Result<Self, StageError> {
        let dir = cfg.out_dir.clone().ok_or_else(|| {
            config_err("config", "no output directory (use --out or \"out_dir\")")
        })?;
        std::fs::create_dir_all(&dir).stage("creating output directory")?;
        let inputs = [
            &cfg.data,
            &cfg.test_data,
            &cfg.model,
            &cfg.mask,
            &cfg.groups,
        ]
        .into_iter()
        .flatten()
        .filter_map(|p| p.canonicalize().ok())
        .collect();
        Ok(Outputs { dir, inputs })
    }

    fn path(&self, name: &str) -> Result<PathBuf, StageError> {
        let path = self.dir.join(name);
        if let Ok(canon) = path.canonicalize() {
            if self.inputs.contains(&canon) {
                return Err(config_err(
                    "writing outputs",
                    format!("{} is also an input file", path.display()),
                ));
            }
        }
        Ok(path)
    }

    fn write(&self, name: &str, contents: &str) -> Result<(), StageError> {
        let path = self.path(name)?;
        std::fs::write(path, contents).stage("writing outputs")
    }

    fn write_with(
        &self,
        name: &str,
        f: impl FnOnce(&mut Vec<u8>) -> crate::Result<()>,
    ) -> Result<(), StageError> {
        let mut buf = Vec::new();
        f(&mut buf).stage("writing outputs")?;
        let path = self.path(name)?;
        std::fs::write(path, buf).stage("writing outputs")
    }

    fn echo_config(&self, cfg: &RunConfig) -> Result<(), StageError> {
        let mut s = serde_json::to_string_pretty(cfg).stage("writing outputs")?;
        s.push('\n');
        self.write("config.json", &s)
    }
}

fn require_seed(cfg: &RunConfig) -> Result<u64, StageError> {
    cfg.seed
        .ok_or_else(|| config_err("config", "no seed given (use --seed or \"seed\")"))
}

fn require<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, StageError> {
    path.as_deref()
        .ok_or_else(|| config_err("config", format!("missing {what}")))
}

fn run(command: Command) -> Result<(), StageError> {
    match command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Train(a) => cmd_train(a),
        Command::Importance(a) => cmd_importance(a),
        Command::GroupImportance(a) => cmd_group_importance(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::DemoCollinearity(a) => cmd_demo(a),
    }
}

fn cmd_simulate(a: SimulateArgs) -> Result<(), StageError> {
    let mut cfg = load_config(&a.common)?;
    let s = &mut cfg.simulate;
    set(&mut s.n, a.n);
    set(&mut s.p, a.p);
    set(&mut s.frac_causal, a.frac_causal);
    set(&mut s.frac_redundant, a.frac_redundant);
    set(&mut s.n_classes, a.n_classes);
    set(&mut s.n_clusters_per_class, a.n_clusters_per_class);
    set(&mut s.class_sep, a.class_sep);
    set(&mut s.flip_y, a.flip_y);
    set(&mut cfg.test_fraction, a.test_fraction);
    let seed = require_seed(&cfg)?;
    cfg.simulate.seed = seed;
    let out = Outputs::new(&cfg)?;

    let sim = synth_classification(&cfg.simulate).stage("simulation")?;
    let (train_set, test_set) = sim
        .dataset
        .split(cfg.test_fraction, derive_seed(seed, &[1]))
        .stage("splitting")?;
    out.write_with("train.csv", |w| train_set.write_csv(w))?;
    out.write_with("test.csv", |w| test_set.write_csv(w))?;
    let mask = MaskFile {
        seed,
        feature_names: sim.dataset.feature_names.clone(),
        causal_mask: sim.dataset.causal_mask.clone().unwrap_or_default(),
        column_origin: sim.column_origin.clone(),
    };
    let mut text = serde_json::to_string_pretty(&mask).stage("writing outputs")?;
    text.push('\n');
    out.write("mask.json", &text)?;
    out.echo_config(&cfg)
}

fn network_config(opts: &NetworkOptions, data: &Dataset) -> Result<NetworkConfig, Error> {
    let labels = data.class_labels();
    let task = match opts.task {
        Task::Auto => match &labels {
            Ok(l) if l.iter().all(|&c| c <= 1) => Task::Binary,
            Ok(_) => Task::Multiclass,
            Err(_) => Task::Regression,
        },
        t => t,
    };
    let (output_link, n_classes) = match task {
        Task::Binary => {
            if labels?.iter().any(|&c| c > 1) {
                return Err(Error::InvalidInput(
                    "binary task needs labels in {0, 1}".into(),
                ));
            }
            (OutputLink::Sigmoid, 1)
        }
        Task::Multiclass => {
            let k = labels?.iter().max().map_or(0, |&m| m + 1);
            (OutputLink::Softmax, k.max(2))
        }
        Task::Regression | Task::Auto => (OutputLink::Identity, 1),
    };
    let cfg = NetworkConfig {
        input_dim: data.p(),
        hidden_sizes: opts.hidden_sizes.clone(),
        activation: crate::bnn::Activation::Relu,
        output_link,
        n_classes,
        prior_scale: opts.prior_scale,
        noise_var: opts.noise_var,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(a: TrainArgs) -> Result<(), StageError> {
    let mut cfg = load_config(&a.common)?;
    set_opt(&mut cfg.data, a.data);
    set(&mut cfg.network.hidden_sizes, a.hidden);
    set(&mut cfg.network.task, a.task);
    set(&mut cfg.network.prior_scale, a.prior_scale);
    let t = &mut cfg.train;
    set(&mut t.epochs, a.epochs);
    set(&mut t.learning_rate, a.lr);
    set(&mut t.batch_size, a.batch_size);
    set(&mut t.patience, a.patience);
    set(&mut t.val_fraction, a.val_fraction);
    let seed = require_seed(&cfg)?;
    cfg.train.seed = derive_seed(seed, &[2]);
    let data_path = require(&cfg.data, "training data (use --data)")?.to_path_buf();
    let out = Outputs::new(&cfg)?;

    let data = Dataset::load_csv(&data_path).stage("loading data")?;
    let net_cfg = network_config(&cfg.network, &data).stage("building network")?;
    let net = build_network(&net_cfg, derive_seed(seed, &[3])).stage("building network")?;
    let (trained, history) = train(&net, &data, &cfg.train).stage("training")?;

    out.write("model.json", &trained.to_json().stage("writing outputs")?)?;
    out.write_with("history.csv", |w| {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["epoch", "train_loss", "metric", "best"])?;
        for r in &history.epochs {
            wr.write_record([
                r.epoch.to_string(),
                r.train_loss.to_string(),
                r.metric.to_string(),
                (r.epoch == history.best_epoch).to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    })?;
    out.echo_config(&cfg)
}

fn load_model_and_data(cfg: &RunConfig) -> Result<(crate::bnn::Network, Dataset), StageError> {
    let model = crate::bnn::Network::load(require(&cfg.model, "model (use --model)")?)
        .stage("loading model")?;
    let data =
        Dataset::load_csv(require(&cfg.data, "dataset (use --data)")?).stage("loading data")?;
    if data.p() != model.config.input_dim {
        return Err(StageError {
            stage: "loading data",
            source: Error::dims(format!("{} features", model.config.input_dim), data.p()),
        });
    }
    Ok((model, data))
}

fn write_reports(out: &Outputs, stem: &str, results: &[ClassImportance]) -> Result<(), StageError> {
    for r in results {
        let name = if results.len() == 1 {
            stem.to_string()
        } else {
            format!("{stem}_class{}", r.report.class)
        };
        out.write(
            &format!("{name}.json"),
            &r.report.to_json().stage("writing outputs")?,
        )?;
        out.write_with(&format!("{name}.csv"), |w| r.report.write_csv(w))?;
    }
    Ok(())
}

fn write_effect_sizes(out: &Outputs, results: &[ClassImportance]) -> Result<(), StageError> {
    let posteriors: Vec<_> = results.iter().map(|r| r.effect_sizes.clone()).collect();
    out.write_with("effect_sizes.csv", |w| {
        write_effect_sizes_csv(&posteriors, w)
    })
}

fn cmd_importance(a: ImportanceArgs) -> Result<(), StageError> {
    let mut cfg = load_config(&a.common)?;
    apply_rate_args(&mut cfg, a.rate)?;
    require_seed(&cfg)?;
    let out = Outputs::new(&cfg)?;
    let (model, data) = load_model_and_data(&cfg)?;
    let results = variable_importance(&model, &data, &cfg.rate).stage("scoring features")?;
    write_reports(&out, "importance", &results)?;
    write_effect_sizes(&out, &results)?;
    out.echo_config(&cfg)
}

fn cmd_group_importance(a: GroupArgs) -> Result<(), StageError> {
    let mut cfg = load_config(&a.common)?;
    apply_rate_args(&mut cfg, a.rate)?;
    set_opt(&mut cfg.groups, a.groups);
    require_seed(&cfg)?;
    let out = Outputs::new(&cfg)?;
    let (model, data) = load_model_and_data(&cfg)?;
    let file = std::fs::File::open(require(&cfg.groups, "group file (use --groups)")?)
        .stage("loading groups")?;
    let groups = GroupMap::read_csv(file, &data.feature_names).stage("loading groups")?;
    let results = group_importance(&model, &data, &groups, &cfg.rate).stage("scoring groups")?;
    write_reports(&out, "group_importance", &results)?;
    out.echo_config(&cfg)
}

#[derive(Serialize)]
struct EvaluationSummary {
    rate_sum: Vec<f64>,
    n_significant: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rate_auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    correlation_auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    test_accuracy: Option<f64>,
}

/// Mask aligned to the dataset's column order by feature name.
fn aligned_mask(mask: &MaskFile, data: &Dataset) -> Result<Vec<bool>, Error> {
    if mask.feature_names.len() != mask.causal_mask.len() {
        return Err(Error::InvalidInput(
            "mask file has mismatched name and mask lengths".into(),
        ));
    }
    data.feature_names
        .iter()
        .map(|name| {
            mask.feature_names
                .iter()
                .position(|m| m == name)
                .map(|i| mask.causal_mask[i])
                .ok_or_else(|| {
                    Error::InvalidInput(format!("feature `{name}` is missing from the mask"))
                })
        })
        .collect()
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<(), StageError> {
    let mut cfg = load_config(&a.common)?;
    apply_rate_args(&mut cfg, a.rate)?;
    set_opt(&mut cfg.test_data, a.test_data);
    set_opt(&mut cfg.mask, a.mask);
    set(&mut cfg.evaluate.repeats, a.repeats);
    set(&mut cfg.evaluate.fractions, a.fractions);
    let seed = require_seed(&cfg)?;
    if cfg.mask.is_none() && cfg.test_data.is_none() {
        return Err(config_err(
            "config",
            "evaluate needs --mask, --test-data or both",
        ));
    }
    let out = Outputs::new(&cfg)?;
    let (model, data) = load_model_and_data(&cfg)?;
    let results = variable_importance(&model, &data, &cfg.rate).stage("scoring features")?;
    write_reports(&out, "importance", &results)?;

    // one score per feature: the mean RATE over output nodes
    let p = data.p();
    let scores: Vec<f64> = (0..p)
        .map(|j| results.iter().map(|r| r.report.items[j].rate).sum::<f64>() / results.len() as f64)
        .collect();
    let mut summary = EvaluationSummary {
        rate_sum: results
            .iter()
            .map(|r| r.report.rates().iter().sum())
            .collect(),
        n_significant: results
            .iter()
            .map(|r| r.report.items.iter().filter(|it| it.significant).count())
            .collect(),
        rate_auc: None,
        correlation_auc: None,
        test_accuracy: None,
    };

    if let Some(mask_path) = &cfg.mask {
        let mask_file = MaskFile::load(mask_path).stage("loading mask")?;
        let mask = aligned_mask(&mask_file, &data).stage("loading mask")?;
        let rate_roc = roc_auc(&scores, &mask).stage("computing ROC")?;
        let corr: Vec<f64> = marginal_correlation(&data.x, &data.y)
            .stage("computing correlations")?
            .into_iter()
            .map(f64::abs)
            .collect();
        let corr_roc = roc_auc(&corr, &mask).stage("computing ROC")?;
        out.write_with("roc.csv", |w| {
            let mut wr = csv::Writer::from_writer(w);
            wr.write_record(["method", "threshold", "fpr", "tpr"])?;
            for (method, c) in [("rate", &rate_roc), ("correlation", &corr_roc)] {
                for i in 0..c.fpr.len() {
                    wr.write_record([
                        method.to_string(),
                        c.thresholds[i].to_string(),
                        c.fpr[i].to_string(),
                        c.tpr[i].to_string(),
                    ])?;
                }
            }
            wr.flush()?;
            Ok(())
        })?;
        let series = [
            Series::new(
                "RATE",
                rate_roc
                    .fpr
                    .iter()
                    .cloned()
                    .zip(rate_roc.tpr.iter().cloned())
                    .collect(),
            ),
            Series::new(
                "|correlation|",
                corr_roc
                    .fpr
                    .iter()
                    .cloned()
                    .zip(corr_roc.tpr.iter().cloned())
                    .collect(),
            ),
        ];
        out.write(
            "roc.svg",
            &render_curve_svg(&series, "false positive rate", "true positive rate")
                .stage("plotting")?,
        )?;
        summary.rate_auc = Some(rate_roc.auc);
        summary.correlation_auc = Some(corr_roc.auc);
    }

    if let Some(test_path) = &cfg.test_data {
        let test = Dataset::load_csv(test_path).stage("loading test data")?;
        if test.p() != p {
            return Err(StageError {
                stage: "loading test data",
                source: Error::dims(format!("{p} features"), test.p()),
            });
        }
        summary.test_accuracy =
            Some(accuracy(&model, &test.x, &test.y).stage("shuffle degradation")?);
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]));
        let mut random: Vec<usize> = (0..p).collect();
        random.shuffle(&mut rng_at(seed, &[10]));
        let ev = &cfg.evaluate;
        let by_rate = shuffle_degradation(
            &model,
            &test,
            &order,
            &ev.fractions,
            ev.repeats,
            derive_seed(seed, &[11]),
        )
        .stage("shuffle degradation")?;
        let by_random = shuffle_degradation(
            &model,
            &test,
            &random,
            &ev.fractions,
            ev.repeats,
            derive_seed(seed, &[11]),
        )
        .stage("shuffle degradation")?;
        out.write_with("degradation.csv", |w| {
            let mut wr = csv::Writer::from_writer(w);
            wr.write_record(["ranking", "fraction", "mean_accuracy", "std_accuracy"])?;
            for (name, c) in [("rate", &by_rate), ("random", &by_random)] {
                for i in 0..c.fractions.len() {
                    wr.write_record([
                        name.to_string(),
                        c.fractions[i].to_string(),
                        c.mean_accuracy[i].to_string(),
                        c.std_accuracy[i].to_string(),
                    ])?;
                }
            }
            wr.flush()?;
            Ok(())
        })?;
        if ev.fractions.len() >= 2 {
            let pts = |c: &crate::eval::DegradationCurve| {
                c.fractions
                    .iter()
                    .cloned()
                    .zip(c.mean_accuracy.iter().cloned())
                    .collect()
            };
            let series = [
                Series::new("RATE order", pts(&by_rate)),
                Series::new("random order", pts(&by_random)),
            ];
            out.write(
                "degradation.svg",
                &render_curve_svg(&series, "fraction of features shuffled", "test accuracy")
                    .stage("plotting")?,
            )?;
        }
    }

    let mut text = serde_json::to_string_pretty(&summary).stage("writing outputs")?;
    text.push('\n');
    out.write("summary.json", &text)?;
    out.echo_config(&cfg)
}

fn cmd_demo(a: DemoArgs) -> Result<(), StageError> {
    let mut cfg = load_config(&a.common)?;
    let c = &mut cfg.collinearity;
    set(&mut c.n, a.n);
    set(&mut c.rho, a.rho);
    set(&mut c.reps, a.reps);
    let seed = require_seed(&cfg)?;
    let out = Outputs::new(&cfg)?;
    let c = &cfg.collinearity;
    let study = collinearity_study(c.n, c.rho, c.reps, seed).stage("collinearity study")?;
    out.write_with("collinearity_replicates.csv", |w| {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["replicate", "esa_1", "esa_2", "ols_1", "ols_2"])?;
        for r in &study.replicates {
            wr.write_record([
                r.replicate.to_string(),
                r.esa[0].to_string(),
                r.esa[1].to_string(),
                r.ols[0].to_string(),
                r.ols[1].to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    })?;
    out.write_with("collinearity_summary.csv", |w| {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["estimator", "coefficient", "mean", "std"])?;
        for (name, s) in [("covariance_esa", &study.esa), ("ols", &study.ols)] {
            for k in 0..2 {
                wr.write_record([
                    name.to_string(),
                    format!("beta_{}", k + 1),
                    s.mean[k].to_string(),
                    s.std[k].to_string(),
                ])?;
            }
        }
        wr.flush()?;
        Ok(())
    })?;
    out.echo_config(&cfg)
}
