//! Run configuration shared by every command, error categories with their
//! exit codes, run manifests, and the end-to-end chain
//! label → split → train → evaluate → report.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::batch::BatchError;
use crate::datagen::{label_dataset, split, write_dataset, DataError, LabeledDataset, RealisticOptions, SplitScheme};
use crate::eval::{
    emit_comparison_plots, evaluate, report_table, EvalError, EvalOptions, Metrics, ModelPredictor, OracleReplay,
    Predictor, ReportEntry, ReportTable,
};
use crate::grid::{Grid, GridError};
use crate::nn::{hyper_search, train, Checkpoint, Family, Hyper, HyperSpace, Model, ModelConfig, NnError, TrainReport, TrainedModel};
use crate::orpd::{OrpdError, OrpdOptions};
use crate::powerflow::{InputVector, PfError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Numerical,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Config => 2,
            ErrorCategory::Data => 3,
            ErrorCategory::Numerical => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Config => "config",
            ErrorCategory::Data => "data",
            ErrorCategory::Numerical => "numerical",
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Batch(#[from] BatchError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    PowerFlow(#[from] PfError),
    #[error(transparent)]
    Orpd(#[from] OrpdError),
    #[error(transparent)]
    Model(#[from] NnError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn nn_category(e: &NnError) -> ErrorCategory {
    match e {
        NnError::Config(_) => ErrorCategory::Config,
        NnError::Diverged { .. } => ErrorCategory::Numerical,
        _ => ErrorCategory::Data,
    }
}

impl PipelineError {
    pub fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Self + '_ {
        move |source| PipelineError::Io { path: path.display().to_string(), source }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            PipelineError::Config(_) => ErrorCategory::Config,
            PipelineError::PowerFlow(PfError::Dimension(_)) => ErrorCategory::Data,
            PipelineError::PowerFlow(_) => ErrorCategory::Numerical,
            PipelineError::Orpd(OrpdError::TooManyDimensions { .. }) => ErrorCategory::Config,
            PipelineError::Orpd(OrpdError::PowerFlow(PfError::Dimension(_))) => ErrorCategory::Data,
            PipelineError::Orpd(_) => ErrorCategory::Numerical,
            PipelineError::Model(e) | PipelineError::Eval(EvalError::Model(e)) => nn_category(e),
            PipelineError::Eval(EvalError::Sweep(_) | EvalError::UnknownOutput(_)) => ErrorCategory::Config,
            _ => ErrorCategory::Data,
        }
    }

    /// Single line `error[<category>]: <message>`.
    pub fn render(&self) -> String {
        let msg = self.to_string().replace('\n', " ");
        format!("error[{}]: {msg}", self.category().as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub grid: Option<PathBuf>,
    /// Nominal operating point (batch CSV, one row) for synthetic sampling.
    pub nominal: Option<PathBuf>,
    pub generation: Option<PathBuf>,
    pub load: Option<PathBuf>,
    pub inputs: Option<PathBuf>,
    pub controls: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthOptions {
    pub count: usize,
    pub spread: f64,
    pub seed: u64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self { count: 2000, spread: 0.3, seed: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    Random,
    Chronological,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitOptions {
    pub scheme: SchemeKind,
    pub fractions: [f64; 3],
    pub seed: u64,
}

impl Default for SplitOptions {
    fn default() -> Self {
        Self { scheme: SchemeKind::Random, fractions: [0.7, 0.15, 0.15], seed: 2 }
    }
}

impl SplitOptions {
    pub fn scheme(&self) -> SplitScheme {
        match self.scheme {
            SchemeKind::Random => SplitScheme::Random(self.fractions),
            SchemeKind::Chronological => SplitScheme::Chronological(self.fractions),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestOptions {
    /// Keep every `stride`-th aligned hour.
    pub stride: usize,
    pub histogram_bins: usize,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self { stride: 1, histogram_bins: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchOptions {
    pub budget: usize,
    pub seed: u64,
    pub space: HyperSpace,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self { budget: 8, seed: 5, space: HyperSpace::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    /// Label of the data regime in reports.
    pub regime: String,
    /// Worker threads for labeling and evaluation; all cores when absent.
    pub workers: Option<usize>,
    pub synth: SynthOptions,
    pub realistic: RealisticOptions,
    pub ingest: IngestOptions,
    pub orpd: OrpdOptions,
    pub split: SplitOptions,
    pub fcnn: ModelConfig,
    pub gnn: ModelConfig,
    pub train: Hyper,
    /// Seed of the parameter initialization.
    pub init_seed: u64,
    pub hyper: SearchOptions,
    pub eval: EvalOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            regime: "synthetic".into(),
            workers: None,
            synth: SynthOptions::default(),
            realistic: RealisticOptions::default(),
            ingest: IngestOptions::default(),
            orpd: OrpdOptions::default(),
            split: SplitOptions::default(),
            fcnn: ModelConfig::fcnn(),
            gnn: ModelConfig::gnn(),
            train: Hyper { seed: 3, ..Hyper::default() },
            init_seed: 4,
            hyper: SearchOptions::default(),
            eval: EvalOptions::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(format!("config: {}", e.to_string().trim())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.paths.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn model_config(&self, family: Family) -> &ModelConfig {
        match family {
            Family::Fcnn => &self.fcnn,
            Family::Gnn => &self.gnn,
        }
    }
}

/// Looks up a path that must exist when the command runs.
pub fn require_path(value: Option<&PathBuf>, what: &str) -> Result<PathBuf, PipelineError> {
    let p = value.ok_or_else(|| PipelineError::Config(format!("no {what} given (flag or [paths] entry)")))?;
    if !p.exists() {
        return Err(PipelineError::Config(format!("{what} {} does not exist", p.display())));
    }
    Ok(p.clone())
}

/// Side record of a command run. Only `started_unix_s` and `elapsed_s`
/// change between identical reruns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub inputs: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub artifacts: Vec<String>,
    pub timings_s: BTreeMap<String, f64>,
    pub started_unix_s: u64,
    pub elapsed_s: f64,
}

pub struct ManifestBuilder {
    manifest: RunManifest,
    start: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str) -> Self {
        let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        Self {
            manifest: RunManifest {
                command: command.into(),
                version: env!("CARGO_PKG_VERSION").into(),
                inputs: BTreeMap::new(),
                seeds: BTreeMap::new(),
                artifacts: Vec::new(),
                timings_s: BTreeMap::new(),
                started_unix_s: started,
                elapsed_s: 0.0,
            },
            start: Instant::now(),
        }
    }

    pub fn input(&mut self, name: &str, path: &Path) -> &mut Self {
        self.manifest.inputs.insert(name.into(), path.display().to_string());
        self
    }

    pub fn seed(&mut self, name: &str, seed: u64) -> &mut Self {
        self.manifest.seeds.insert(name.into(), seed);
        self
    }

    pub fn artifact(&mut self, path: &Path) -> &mut Self {
        self.manifest.artifacts.push(path.display().to_string());
        self
    }

    pub fn timing(&mut self, stage: &str, seconds: f64) -> &mut Self {
        self.manifest.timings_s.insert(stage.into(), seconds);
        self
    }

    /// Writes `<out>/<command>.manifest.json` (spaces in the command become
    /// underscores).
    pub fn finish(&mut self, out: &Path) -> Result<PathBuf, PipelineError> {
        self.manifest.elapsed_s = self.start.elapsed().as_secs_f64();
        std::fs::create_dir_all(out).map_err(PipelineError::io(out))?;
        let path = out.join(format!("{}.manifest.json", self.manifest.command.replace(' ', "_")));
        std::fs::write(&path, serde_json::to_string_pretty(&self.manifest)? + "\n").map_err(PipelineError::io(&path))?;
        Ok(path)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(PipelineError::io(parent))?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(PipelineError::io(path))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(PipelineError::io(path))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
}

/// Trains one family and writes `model_<family>.json`.
pub fn train_family(
    grid: &Grid,
    dataset: &LabeledDataset,
    cfg: &RunConfig,
    family: Family,
    out: &Path,
) -> Result<(Model, TrainReport, PathBuf), PipelineError> {
    let stats = dataset.norm_stats.clone().ok_or(NnError::MissingStats)?;
    let mut config = cfg.model_config(family).clone();
    config.family = family;
    let mut model = Model::new(config, grid, cfg.init_seed)?;
    let report = train(&mut model, grid, dataset, &cfg.train)?;
    let path = out.join(format!("model_{}.json", family_name(family)));
    std::fs::create_dir_all(out).map_err(PipelineError::io(out))?;
    Checkpoint::new(&model, cfg.init_seed, stats, Some(report.clone())).save(&path)?;
    Ok((model, report, path))
}

pub fn family_name(family: Family) -> &'static str {
    match family {
        Family::Fcnn => "fcnn",
        Family::Gnn => "gnn",
    }
}

pub fn display_name(family: Family) -> &'static str {
    match family {
        Family::Fcnn => "FCNN",
        Family::Gnn => "GNN",
    }
}

/// Runs the seeded search for one family and writes `hyper_<family>.json`.
pub fn search_family(grid: &Grid, dataset: &LabeledDataset, cfg: &RunConfig, family: Family, out: &Path) -> Result<PathBuf, PipelineError> {
    let mut base = cfg.model_config(family).clone();
    base.family = family;
    let result = hyper_search(&base, &cfg.train, &cfg.hyper.space, grid, dataset, cfg.hyper.budget, cfg.hyper.seed)?;
    let path = out.join(format!("hyper_{}.json", family_name(family)));
    write_json(&path, &result)?;
    Ok(path)
}

/// Evaluates a predictor and writes `metrics_<stem>.json`.
pub fn evaluate_to(
    predictor: &dyn Predictor,
    grid: &Grid,
    dataset: &LabeledDataset,
    options: &EvalOptions,
    out: &Path,
) -> Result<(Metrics, PathBuf), PipelineError> {
    let metrics = evaluate(predictor, grid, dataset, options)?;
    let path = out.join(format!("metrics_{}.json", metrics.model.to_lowercase()));
    write_json(&path, &metrics)?;
    Ok((metrics, path))
}

#[derive(Debug, Clone)]
pub struct ChainOutcome {
    pub dataset: LabeledDataset,
    pub training: Vec<TrainReport>,
    /// Oracle, FCNN and GNN, in that order.
    pub metrics: Vec<Metrics>,
    pub report: ReportTable,
    pub artifacts: Vec<PathBuf>,
}

/// Labels `inputs`, splits, trains both families, evaluates them against
/// the oracle and writes every artifact into `out`:
/// `dataset.csv` (with sidecars), `model_{fcnn,gnn}.json`,
/// `metrics_{optimal,fcnn,gnn}.json`, `report.{txt,json}` and `plots/`.
pub fn run_chain(grid: &Grid, inputs: &[InputVector], cfg: &RunConfig, out: &Path) -> Result<ChainOutcome, PipelineError> {
    std::fs::create_dir_all(out).map_err(PipelineError::io(out))?;
    let mut manifest = ManifestBuilder::new("pipeline");
    manifest.seed("split", cfg.split.seed).seed("train", cfg.train.seed).seed("init", cfg.init_seed).seed("orpd", cfg.orpd.seed);
    let mut artifacts = Vec::new();

    let t = Instant::now();
    let labeled = label_dataset(grid, inputs, &cfg.orpd);
    manifest.timing("label", t.elapsed().as_secs_f64());
    let dataset = split(grid, &labeled, cfg.split.scheme(), cfg.split.seed)?;
    let path = out.join("dataset.csv");
    write_dataset(&path, grid, &dataset)?;
    artifacts.push(path);

    let mut training = Vec::new();
    let mut metrics = Vec::new();
    let (oracle, path) = evaluate_to(&OracleReplay, grid, &dataset, &cfg.eval, out)?;
    metrics.push(oracle);
    artifacts.push(path);
    for family in [Family::Fcnn, Family::Gnn] {
        let t = Instant::now();
        let (model, report, path) = train_family(grid, &dataset, cfg, family, out)?;
        manifest.timing(&format!("train_{}", family_name(family)), t.elapsed().as_secs_f64());
        artifacts.push(path);
        training.push(report);
        let stats = dataset.norm_stats.clone().ok_or(NnError::MissingStats)?;
        let predictor = ModelPredictor { name: display_name(family).into(), model: TrainedModel::new(model, grid, stats)? };
        let (m, path) = evaluate_to(&predictor, grid, &dataset, &cfg.eval, out)?;
        artifacts.push(path);
        metrics.push(m);
    }

    let entries: Vec<ReportEntry> = metrics.iter().map(|m| ReportEntry { regime: &cfg.regime, metrics: m }).collect();
    let report = report_table(&entries);
    report.write(out)?;
    artifacts.push(out.join("report.txt"));
    artifacts.push(out.join("report.json"));
    for m in &metrics[1..] {
        for s in emit_comparison_plots(m, &[], out.join("plots"))? {
            artifacts.push(s.csv);
            artifacts.push(s.svg);
        }
    }
    for a in &artifacts {
        manifest.artifact(a);
    }
    manifest.finish(out)?;
    Ok(ChainOutcome { dataset, training, metrics, report, artifacts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::sample_synthetic;
    use crate::fixtures;

    #[test]
    fn config_parses_partial_toml_with_defaults() {
        let cfg = RunConfig::parse(
            r#"
            regime = "real"
            [paths]
            grid = "g.json"
            [split]
            scheme = "chronological"
            fractions = [0.8, 0.1, 0.1]
            [gnn]
            family = "gnn"
            hidden = [16]
            taps = 2
            [train]
            learning_rate = 0.01
            "#,
        )
        .unwrap();
        assert_eq!(cfg.regime, "real");
        assert_eq!(cfg.split.scheme(), SplitScheme::Chronological([0.8, 0.1, 0.1]));
        assert_eq!(cfg.gnn.hidden, vec![16]);
        assert_eq!(cfg.train.learning_rate, 0.01);
        assert_eq!(cfg.train.batch_size, 64);
        assert_eq!(cfg.synth, SynthOptions::default());
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let err = RunConfig::parse("[train]\nlearning_rat = 0.1\n").unwrap_err();
        assert_eq!(err.category(), ErrorCategory::Config);
        assert!(err.render().starts_with("error[config]: "));
        assert!(!err.render().contains('\n'));
    }

    #[test]
    fn categories_map_to_exit_codes() {
        assert_eq!(PipelineError::from(PfError::NotConverged).category().exit_code(), 4);
        assert_eq!(PipelineError::from(NnError::Diverged { epoch: 3 }).category().exit_code(), 4);
        assert_eq!(PipelineError::from(DataError::EmptyBlock("validation")).category().exit_code(), 3);
        assert_eq!(PipelineError::Config("x".into()).category().exit_code(), 2);
    }

    #[test]
    fn small_chain_writes_every_artifact() {
        let grid = fixtures::three_bus();
        let inputs = sample_synthetic(&grid, &fixtures::three_bus_inputs(), 40, 0.3, 1);
        let mut cfg = RunConfig::default();
        cfg.fcnn.hidden = vec![8];
        cfg.gnn.hidden = vec![4];
        cfg.train.max_epochs = 5;
        let dir = tempfile::tempdir().unwrap();
        let out = run_chain(&grid, &inputs, &cfg, dir.path()).unwrap();
        assert_eq!(out.metrics.len(), 3);
        assert_eq!(out.metrics[0].loss_gap_mean, Some(0.0));
        assert_eq!(out.report.rows.len(), 3);
        for a in &out.artifacts {
            assert!(a.exists(), "{}", a.display());
        }
        assert!(dir.path().join("pipeline.manifest.json").exists());
    }
}
