//! Experiment configuration, presets, seeded training runs, zero-ratio
//! sweeps and continued training of (pruned) checkpoints.

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use crate::adam::{AdamHyper, AdamState};
use crate::backprop::{evaluate, loss, LossKind, Targets};
use crate::checkpoint::Checkpoint;
use crate::data::{self, Dataset, Delimiter, SplitSpec, TableOptions, Task};
use crate::error::{Error, Result};
use crate::model::{init_network, LayerSpec, NetworkParams};
use crate::prune::{self, active_neurons, sparsity, PruneReport, SparsityReport};
use crate::regularizers::{
    reg_value, regularized_param_count, MaskPlacement, NeuronMask, RegKind, RegularizerSpec, ZeroRatio,
};
use crate::tensor::{derive_seed, Matrix};

const INIT_TAG: u64 = 1;
const BATCH_TAG: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    /// `y = −x²` on an even grid; held-out points are the grid midpoints.
    Toy { points: usize },
    /// Delimited numeric table, split into train/test by `split`.
    Table {
        path: PathBuf,
        target_column: i64,
        delimiter: Delimiter,
        has_header: bool,
        task: Task,
    },
    /// IDX image/label files with a fixed train/test partition.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        train_limit: Option<usize>,
        test_limit: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: DatasetSource,
    /// Neurons per layer, input first.
    pub dims: Vec<usize>,
    pub batch_norm: bool,
    /// Weight init standard deviation; absent means `sqrt(2 / fan_in)`.
    pub init_std: Option<f64>,
    pub loss: LossKind,
    pub reg: RegularizerSpec,
    pub zero_ratio: ZeroRatio,
    pub mask_placement: MaskPlacement,
    pub mask_seed: u64,
    pub adam: AdamHyper,
    pub epochs: usize,
    /// Absent means full-batch training.
    pub batch_size: Option<usize>,
    pub split: SplitSpec,
    pub normalize_features: bool,
    pub normalize_targets: bool,
    pub sparsity_threshold: f64,
    pub group_threshold: f64,
    pub seed: u64,
    /// Identical replays whose wall times are averaged.
    pub repeats: usize,
}

pub const PRESETS: [&str; 5] = ["toy", "boston", "sdd", "mnist", "fashion"];

impl ExperimentConfig {
    /// Named configuration mirroring the benchmark table. Dataset paths are
    /// resolved under `data_dir`.
    pub fn preset(name: &str, data_dir: &Path) -> Result<Self> {
        let base = |name: &str, dataset, dims: Vec<usize>, loss, lambda, batch_size, epochs| ExperimentConfig {
            name: name.to_string(),
            dataset,
            dims,
            batch_norm: true,
            init_std: None,
            loss,
            reg: RegularizerSpec::new(RegKind::GroupLasso, lambda),
            zero_ratio: ZeroRatio::new(1, 8).expect("valid ratio"),
            mask_placement: MaskPlacement::Prefix,
            mask_seed: 0,
            adam: AdamHyper::default(),
            epochs,
            batch_size,
            split: SplitSpec {
                train_fraction: 0.8,
                seed: 0,
                stratified: false,
            },
            normalize_features: true,
            normalize_targets: false,
            sparsity_threshold: prune::DEFAULT_SPARSITY_THRESHOLD,
            group_threshold: prune::DEFAULT_GROUP_THRESHOLD,
            seed: 0,
            repeats: 1,
        };
        let idx = |dir: &str, train_limit, test_limit| DatasetSource::Idx {
            train_images: data_dir.join(dir).join("train-images-idx3-ubyte"),
            train_labels: data_dir.join(dir).join("train-labels-idx1-ubyte"),
            test_images: data_dir.join(dir).join("t10k-images-idx3-ubyte"),
            test_labels: data_dir.join(dir).join("t10k-labels-idx1-ubyte"),
            train_limit,
            test_limit,
        };
        let cfg = match name {
            "toy" => {
                let mut c = base(
                    "toy",
                    DatasetSource::Toy { points: 40 },
                    vec![1, 50, 50, 1],
                    LossKind::MeanSquaredError,
                    1e-3,
                    None,
                    10_000,
                );
                c.normalize_features = false;
                c.zero_ratio = ZeroRatio::new(1, 5).expect("valid ratio");
                c
            }
            "boston" => {
                let mut c = base(
                    "boston",
                    DatasetSource::Table {
                        path: data_dir.join("boston/housing.csv"),
                        target_column: -1,
                        delimiter: Delimiter::Comma,
                        has_header: false,
                        task: Task::Regression,
                    },
                    vec![13, 40, 30, 1],
                    LossKind::MeanSquaredError,
                    1e-3,
                    None,
                    1_000,
                );
                c.normalize_targets = true;
                c
            }
            "sdd" => {
                let mut c = base(
                    "sdd",
                    DatasetSource::Table {
                        path: data_dir.join("sdd/Sensorless_drive_diagnosis.txt"),
                        target_column: -1,
                        delimiter: Delimiter::Whitespace,
                        has_header: false,
                        task: Task::Classification,
                    },
                    vec![48, 40, 40, 30, 11],
                    LossKind::SoftmaxCrossEntropy,
                    1e-4,
                    Some(500),
                    30,
                );
                c.split.stratified = true;
                c
            }
            "mnist" | "fashion" => {
                let mut c = base(
                    name,
                    idx(name, Some(10_000), Some(2_000)),
                    vec![784, 400, 300, 100, 10],
                    LossKind::SoftmaxCrossEntropy,
                    1e-4,
                    Some(400),
                    10,
                );
                c.normalize_features = false;
                if name == "fashion" {
                    c.zero_ratio = ZeroRatio::new(1, 4).expect("valid ratio");
                }
                c
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown preset '{other}' (expected one of {})",
                    PRESETS.join(", ")
                )))
            }
        };
        Ok(cfg)
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.reg.validate()?;
        if self.dims.len() < 2 {
            return Err(Error::Config("dims need an input and an output layer".into()));
        }
        if self.batch_size == Some(0) {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be >= 1".into()));
        }
        let expected_loss = match &self.dataset {
            DatasetSource::Toy { .. } => LossKind::MeanSquaredError,
            DatasetSource::Table { task, .. } => match task {
                Task::Regression => LossKind::MeanSquaredError,
                Task::Classification => LossKind::SoftmaxCrossEntropy,
            },
            DatasetSource::Idx { .. } => LossKind::SoftmaxCrossEntropy,
        };
        if self.loss != expected_loss {
            return Err(Error::Config(format!(
                "loss {:?} does not fit the dataset task",
                self.loss
            )));
        }
        Ok(())
    }

    /// Label used in tables, e.g. `gl` or `pgl@1/8`.
    pub fn label(&self) -> String {
        if self.reg.kind.is_partial() {
            format!("{}@{}", self.reg.kind, self.zero_ratio)
        } else {
            self.reg.kind.to_string()
        }
    }

    fn masks_for(&self, params: &NetworkParams) -> Option<NeuronMask> {
        self.reg
            .kind
            .is_partial()
            .then(|| NeuronMask::for_network(params, self.zero_ratio, self.mask_placement, self.mask_seed))
    }
}

/// Train/test pair ready for training.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Dataset,
    pub test: Dataset,
}

pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let (mut train, mut test) = match &cfg.dataset {
        DatasetSource::Toy { points } => (data::gen_toy(*points)?, data::gen_toy_midpoints(*points)?),
        DatasetSource::Table {
            path,
            target_column,
            delimiter,
            has_header,
            task,
        } => {
            let ds = data::load_table(
                path,
                &TableOptions {
                    target_column: *target_column,
                    delimiter: *delimiter,
                    has_header: *has_header,
                    task: *task,
                    normalize: false,
                },
            )?;
            data::split(&ds, &cfg.split)?
        }
        DatasetSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            train_limit,
            test_limit,
        } => {
            let mut train = data::load_idx(train_images, train_labels)?;
            let mut test = data::load_idx(test_images, test_labels)?;
            if let Some(n) = train_limit {
                train = train.take(*n)?;
            }
            if let Some(n) = test_limit {
                test = test.take(*n)?;
            }
            (train, test)
        }
    };
    if cfg.normalize_features {
        let stats = data::ColumnStats::of(&train.features);
        train.normalize_features_with(&stats);
        test.normalize_features_with(&stats);
    }
    if cfg.normalize_targets {
        if let Targets::Values(y) = &train.targets {
            let stats = data::ColumnStats::of(y);
            train.normalize_targets_with(&stats);
            test.normalize_targets_with(&stats);
        }
    }
    check_fit(cfg, &train)?;
    Ok(PreparedData { train, test })
}

fn check_fit(cfg: &ExperimentConfig, train: &Dataset) -> Result<()> {
    if cfg.dims[0] != train.n_features() {
        return Err(Error::Shape(format!(
            "network takes {} inputs, dataset has {} features",
            cfg.dims[0],
            train.n_features()
        )));
    }
    let out = *cfg.dims.last().expect("validated");
    match &train.targets {
        Targets::Values(y) if y.cols() != out => Err(Error::Shape(format!(
            "network has {out} outputs for {} targets",
            y.cols()
        ))),
        Targets::Classes(_) if train.n_classes > out => Err(Error::Shape(format!(
            "network has {out} outputs for {} classes",
            train.n_classes
        ))),
        _ => Ok(()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    /// Mean squared error (lower is better).
    Mse,
    /// Classification accuracy (higher is better).
    Accuracy,
}

impl MetricKind {
    pub fn for_loss(loss: LossKind) -> Self {
        match loss {
            LossKind::MeanSquaredError => MetricKind::Mse,
            LossKind::SoftmaxCrossEntropy => MetricKind::Accuracy,
        }
    }

    pub fn reaches(self, value: f64, target: f64) -> bool {
        match self {
            MetricKind::Mse => value <= target,
            MetricKind::Accuracy => value >= target,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub metric: f64,
}

pub fn evaluate_model(params: &NetworkParams, ds: &Dataset, lossk: LossKind) -> Result<Evaluation> {
    let pred = params.predict(&ds.features)?;
    let l = loss(&pred, &ds.targets, lossk)?;
    let metric = match (&ds.targets, MetricKind::for_loss(lossk)) {
        (Targets::Classes(labels), MetricKind::Accuracy) => {
            let correct = labels
                .iter()
                .enumerate()
                .filter(|&(r, &label)| argmax(pred.row(r)) == label)
                .count();
            correct as f64 / labels.len().max(1) as f64
        }
        _ => l,
    };
    Ok(Evaluation { loss: l, metric })
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitPoint {
    pub x: f64,
    pub y_true: f64,
    pub y_pred: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Curves {
    /// Mean mini-batch objective per epoch.
    pub objective: Vec<f64>,
    /// Mean mini-batch data loss per epoch.
    pub data_loss: Vec<f64>,
    /// Eval-mode train metric per epoch (continued training only).
    #[serde(default)]
    pub train_metric: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub label: String,
    pub dataset: String,
    pub reg_kind: RegKind,
    pub zero_ratio: ZeroRatio,
    pub seed: u64,
    pub metric: MetricKind,
    pub train_metric: f64,
    pub test_metric: f64,
    pub train_loss: f64,
    pub test_loss: f64,
    /// `λ · R(θ)` at the end of training.
    pub reg_term: f64,
    /// Eval-mode train loss plus `reg_term`.
    pub objective: f64,
    pub active_neurons: Vec<usize>,
    pub sparsity: SparsityReport,
    pub regularized_params: usize,
    pub steps: usize,
    /// Mean over `wall_times`.
    pub wall_time_secs: f64,
    pub wall_times: Vec<f64>,
    pub curves: Curves,
    /// Predictions on the training inputs, for one-dimensional regression.
    pub fit: Option<Vec<FitPoint>>,
    pub prune: Option<PruneReport>,
    /// Metrics of the network handed to continued training, before any step.
    pub initial_train_metric: Option<f64>,
    pub initial_test_metric: Option<f64>,
    pub target_metric: Option<f64>,
    pub steps_to_target: Option<usize>,
    pub config: ExperimentConfig,
}

/// Result of a training run: the report and the trained state.
#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub report: RunReport,
    pub params: NetworkParams,
    pub optimizer: AdamState,
}

impl TrainedRun {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            self.report.config.clone(),
            self.params.clone(),
            Some(self.optimizer.clone()),
            self.report.train_metric,
            self.report.test_metric,
        )
    }
}

struct LoopOutcome {
    params: NetworkParams,
    optimizer: AdamState,
    curves: Curves,
    steps: usize,
    seconds: f64,
    steps_to_target: Option<usize>,
}

/// Adam over the objective for `cfg.epochs` epochs. When `target` is set,
/// the eval-mode train metric is tracked after every epoch.
fn train_loop(
    cfg: &ExperimentConfig,
    mut params: NetworkParams,
    masks: Option<&NeuronMask>,
    train: &Dataset,
    target: Option<f64>,
) -> Result<LoopOutcome> {
    let mut optimizer = AdamState::new(&params, cfg.adam);
    let mut curves = Curves::default();
    let batch_seed = derive_seed(cfg.seed, BATCH_TAG);
    let metric = MetricKind::for_loss(cfg.loss);
    let mut steps = 0;
    let mut steps_to_target = None;
    if let Some(t) = target {
        let m = evaluate_model(&params, train, cfg.loss)?.metric;
        curves.train_metric.push(m);
        if metric.reaches(m, t) {
            steps_to_target = Some(0);
        }
    }
    let start = Instant::now();
    for epoch in 0..cfg.epochs {
        let order = data::batches(train.len(), cfg.batch_size, derive_seed(batch_seed, epoch as u64), true)?;
        let (mut obj_sum, mut loss_sum) = (0.0, 0.0);
        for idx in &order {
            let x = train.features.row_slice(idx)?;
            let t = train.select_targets(idx)?;
            let (obj, grads, trace) = evaluate(&params, &x, &t, cfg.loss, &cfg.reg, masks).map_err(|e| {
                Error::Divergence(format!("{} epoch {epoch} step {steps}: {e}", cfg.name))
            })?;
            params.update_running_stats(&trace);
            optimizer.step(&mut params, &grads)?;
            obj_sum += obj.total;
            loss_sum += obj.data_loss;
            steps += 1;
        }
        curves.objective.push(obj_sum / order.len() as f64);
        curves.data_loss.push(loss_sum / order.len() as f64);
        if let Some(t) = target {
            let m = evaluate_model(&params, train, cfg.loss)?.metric;
            curves.train_metric.push(m);
            if steps_to_target.is_none() && metric.reaches(m, t) {
                steps_to_target = Some(steps);
            }
        }
    }
    let seconds = start.elapsed().as_secs_f64();
    if !params.is_finite() {
        return Err(Error::Divergence(format!("{}: parameters became non-finite", cfg.name)));
    }
    Ok(LoopOutcome {
        params,
        optimizer,
        curves,
        steps,
        seconds,
        steps_to_target,
    })
}

fn fit_points(params: &NetworkParams, ds: &Dataset) -> Result<Option<Vec<FitPoint>>> {
    let Targets::Values(y) = &ds.targets else {
        return Ok(None);
    };
    if ds.n_features() != 1 || y.cols() != 1 {
        return Ok(None);
    }
    let pred = ds.denormalize_targets(&params.predict(&ds.features)?);
    let truth = ds.denormalize_targets(y);
    let mut x = ds.features.clone();
    if let Some(s) = &ds.feature_stats {
        s.invert(&mut x);
    }
    Ok(Some(
        (0..ds.len())
            .map(|i| FitPoint {
                x: x.get(i, 0),
                y_true: truth.get(i, 0),
                y_pred: pred.get(i, 0),
            })
            .collect(),
    ))
}

#[allow(clippy::too_many_arguments)]
fn build_report(
    cfg: &ExperimentConfig,
    params: &NetworkParams,
    masks: Option<&NeuronMask>,
    data: &PreparedData,
    outcome_curves: Curves,
    steps: usize,
    wall_times: Vec<f64>,
) -> Result<RunReport> {
    let train_eval = evaluate_model(params, &data.train, cfg.loss)?;
    let test_eval = evaluate_model(params, &data.test, cfg.loss)?;
    let reg_term = cfg.reg.lambda * reg_value(params, &cfg.reg, masks)?;
    let wall_time_secs = wall_times.iter().sum::<f64>() / wall_times.len().max(1) as f64;
    Ok(RunReport {
        label: cfg.label(),
        dataset: cfg.name.clone(),
        reg_kind: cfg.reg.kind,
        zero_ratio: cfg.zero_ratio,
        seed: cfg.seed,
        metric: MetricKind::for_loss(cfg.loss),
        train_metric: train_eval.metric,
        test_metric: test_eval.metric,
        train_loss: train_eval.loss,
        test_loss: test_eval.loss,
        reg_term,
        objective: train_eval.loss + reg_term,
        active_neurons: active_neurons(params, cfg.group_threshold),
        sparsity: sparsity(params, cfg.sparsity_threshold),
        regularized_params: regularized_param_count(params, &cfg.reg, masks)?,
        steps,
        wall_time_secs,
        wall_times,
        curves: outcome_curves,
        fit: fit_points(params, &data.train)?,
        prune: None,
        initial_train_metric: None,
        initial_test_metric: None,
        target_metric: None,
        steps_to_target: None,
        config: cfg.clone(),
    })
}

/// Trains on already prepared data; see [`run_experiment`].
pub fn train_prepared(cfg: &ExperimentConfig, data: &PreparedData) -> Result<TrainedRun> {
    cfg.validate()?;
    check_fit(cfg, &data.train)?;
    let specs = LayerSpec::chain(&cfg.dims, cfg.batch_norm);
    let init = init_network(&specs, derive_seed(cfg.seed, INIT_TAG), cfg.init_std)?;
    let masks = cfg.masks_for(&init);
    let mut wall_times = Vec::with_capacity(cfg.repeats);
    let mut result: Option<LoopOutcome> = None;
    for rep in 0..cfg.repeats {
        let outcome = train_loop(cfg, init.clone(), masks.as_ref(), &data.train, None)?;
        info!(
            "{} [{}] repeat {rep}: {:.2}s, final objective {:.4e}",
            cfg.name,
            cfg.label(),
            outcome.seconds,
            outcome.curves.objective.last().copied().unwrap_or(f64::NAN)
        );
        wall_times.push(outcome.seconds);
        if let Some(first) = &result {
            if first.params != outcome.params {
                return Err(Error::Divergence("replay with the same seed diverged".into()));
            }
        } else {
            result = Some(outcome);
        }
    }
    let outcome = result.expect("repeats >= 1");
    let report = build_report(
        cfg,
        &outcome.params,
        masks.as_ref(),
        data,
        outcome.curves,
        outcome.steps,
        wall_times,
    )?;
    Ok(TrainedRun {
        report,
        params: outcome.params,
        optimizer: outcome.optimizer,
    })
}

/// Loads the data, trains, and returns the report with the trained state.
pub fn train(cfg: &ExperimentConfig) -> Result<TrainedRun> {
    cfg.validate()?;
    let data = prepare_data(cfg)?;
    train_prepared(cfg, &data)
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    Ok(train(cfg)?.report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub zero_ratio: ZeroRatio,
    pub runs: usize,
    pub regularized_params: usize,
    pub train_metric_mean: f64,
    pub train_metric_median: f64,
    pub test_metric_mean: f64,
    pub test_metric_median: f64,
    pub wall_time_mean: f64,
    pub wall_time_median: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub reports: Vec<RunReport>,
    pub summary: Vec<SweepSummary>,
}

/// Seed of repeat `r`; repeat 0 keeps the configured seed.
pub fn repeat_seed(seed: u64, repeat: usize) -> u64 {
    if repeat == 0 {
        seed
    } else {
        derive_seed(seed, 1000 + repeat as u64)
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// One partial-regularization run per (ratio, repeat).
pub fn sweep_beta(cfg: &ExperimentConfig, ratios: &[ZeroRatio], repeats: usize) -> Result<SweepResult> {
    let kind = cfg.reg.kind.partial().ok_or_else(|| {
        Error::Config(format!(
            "zero-ratio sweeps need a group lasso regularizer, got {}",
            cfg.reg.kind
        ))
    })?;
    if repeats == 0 || ratios.is_empty() {
        return Err(Error::Config("sweep needs at least one ratio and one repeat".into()));
    }
    cfg.validate()?;
    let data = prepare_data(cfg)?;
    let mut reports = Vec::with_capacity(ratios.len() * repeats);
    let mut summary = Vec::with_capacity(ratios.len());
    for &ratio in ratios {
        let mut arm = Vec::with_capacity(repeats);
        for r in 0..repeats {
            let mut c = cfg.clone();
            c.reg.kind = kind;
            c.zero_ratio = ratio;
            c.seed = repeat_seed(cfg.seed, r);
            arm.push(train_prepared(&c, &data)?.report);
        }
        let col = |f: fn(&RunReport) -> f64| arm.iter().map(f).collect::<Vec<_>>();
        let (tr, te, tm) = (col(|r| r.train_metric), col(|r| r.test_metric), col(|r| r.wall_time_secs));
        summary.push(SweepSummary {
            zero_ratio: ratio,
            runs: arm.len(),
            regularized_params: arm[0].regularized_params,
            train_metric_mean: mean(&tr),
            train_metric_median: median(&tr),
            test_metric_mean: mean(&te),
            test_metric_median: median(&te),
            wall_time_mean: mean(&tm),
            wall_time_median: median(&tm),
        });
        reports.extend(arm);
    }
    Ok(SweepResult { reports, summary })
}

#[derive(Debug, Clone, Default)]
pub struct ContinueOptions {
    /// Extra epochs; `None` keeps the checkpoint's epoch budget.
    pub epochs: Option<usize>,
    /// Prune with the configured group threshold before training.
    pub prune: bool,
    /// Metric to reach; defaults to the checkpoint's train metric.
    pub target_metric: Option<f64>,
    pub seed: Option<u64>,
}

/// Continued-training results: the resumed network and, for comparison, a
/// freshly initialized network of the same shape trained on the same budget.
#[derive(Debug, Clone)]
pub struct ContinueOutcome {
    pub resumed: TrainedRun,
    pub reinitialized: Option<RunReport>,
}

/// Resumes training from a checkpoint with a fresh optimizer.
pub fn continue_training(ckpt: &Checkpoint, opts: &ContinueOptions) -> Result<TrainedRun> {
    let data = prepare_data(&ckpt.config)?;
    continue_prepared(ckpt, opts, &data)
}

pub fn continue_prepared(ckpt: &Checkpoint, opts: &ContinueOptions, data: &PreparedData) -> Result<TrainedRun> {
    let mut cfg = ckpt.config.clone();
    if let Some(e) = opts.epochs {
        cfg.epochs = e;
    }
    if let Some(s) = opts.seed {
        cfg.seed = s;
    }
    cfg.repeats = 1;
    let (params, prune_report) = if opts.prune {
        let (p, r) = prune::prune_network(&ckpt.network, cfg.group_threshold)?;
        (p, Some(r))
    } else {
        (ckpt.network.clone(), None)
    };
    if params.input_dim() != data.train.n_features() {
        return Err(Error::Shape(format!(
            "checkpoint takes {} inputs, dataset has {} features",
            params.input_dim(),
            data.train.n_features()
        )));
    }
    cfg.dims = params.dims();
    let initial_train = evaluate_model(&params, &data.train, cfg.loss)?;
    let initial_test = evaluate_model(&params, &data.test, cfg.loss)?;
    let target = opts.target_metric.unwrap_or(ckpt.train_metric);
    let masks = cfg.masks_for(&params);
    let outcome = train_loop(&cfg, params, masks.as_ref(), &data.train, Some(target))?;
    let mut report = build_report(
        &cfg,
        &outcome.params,
        masks.as_ref(),
        data,
        outcome.curves,
        outcome.steps,
        vec![outcome.seconds],
    )?;
    report.prune = prune_report;
    report.initial_train_metric = Some(initial_train.metric);
    report.initial_test_metric = Some(initial_test.metric);
    report.target_metric = Some(target);
    report.steps_to_target = outcome.steps_to_target;
    Ok(TrainedRun {
        report,
        params: outcome.params,
        optimizer: outcome.optimizer,
    })
}

/// Continued training plus the same-size, randomly initialized baseline.
pub fn continue_with_baseline(ckpt: &Checkpoint, opts: &ContinueOptions) -> Result<ContinueOutcome> {
    let data = prepare_data(&ckpt.config)?;
    let resumed = continue_prepared(ckpt, opts, &data)?;
    let mut fresh_cfg = resumed.report.config.clone();
    fresh_cfg.name = format!("{}-reinit", fresh_cfg.name);
    let specs = LayerSpec::chain(&fresh_cfg.dims, fresh_cfg.batch_norm);
    let fresh = init_network(&specs, derive_seed(fresh_cfg.seed, INIT_TAG), fresh_cfg.init_std)?;
    let fresh_ckpt = Checkpoint::new(fresh_cfg, fresh, None, ckpt.train_metric, ckpt.test_metric);
    let baseline_opts = ContinueOptions {
        prune: false,
        target_metric: Some(resumed.report.target_metric.unwrap_or(ckpt.train_metric)),
        ..opts.clone()
    };
    let baseline = continue_prepared(&fresh_ckpt, &baseline_opts, &data)?;
    Ok(ContinueOutcome {
        resumed,
        reinitialized: Some(baseline.report),
    })
}

/// Predictions of `params` on raw inputs, mapped back to target units.
pub fn predict_denormalized(params: &NetworkParams, ds: &Dataset, x: &Matrix) -> Result<Matrix> {
    Ok(ds.denormalize_targets(&params.predict(x)?))
}
