//! End-to-end runs: single experiment, sequential requests, and sweeps.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::artifacts::{strip_timing, ArtifactWriter, Csv, RunArtifactSet, SCHEMA_VERSION};
use super::config::{ExperimentConfig, StageSeeds, SweepAxis, WORKERS_ENV};
use crate::data::{partition, ClassPartition, LabeledDataset};
use crate::error::{Error, Result};
use crate::eval::{accuracy, evaluate, EvalPlan, EvaluationReport, RelearnTime};
use crate::models::{build_model, load_checkpoint, train, Model, TrainingHistory};
use crate::noise::save_noise;
use crate::rng::derive_seed;
use crate::unsir::{run_baseline, unsir_unlearn, unsir_unlearn_classes, BaselineKind, Probe, UnlearnOutcome, UnlearnRecord};

/// Fixed notes copied into every report so readers know how numbers were produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportNotes {
    pub evaluation_split: String,
    pub noise_objective: String,
    pub relearn_lr: String,
    pub timing: String,
}

impl ReportNotes {
    fn new(cfg: &ExperimentConfig) -> Self {
        ReportNotes {
            evaluation_split: "accuracies are measured on the held-out test split".into(),
            noise_objective: "sum over the noise batch of -CE(f(N_i), y_f) + lambda * ||N_i||_2^2 (squared L2), plain gradient descent".into(),
            relearn_lr: format!("relearning uses the original training lr ({})", cfg.training.lr),
            timing: if cfg.metrics.wall_clock {
                "wall-clock seconds included".into()
            } else {
                "wall-clock seconds omitted so reruns are byte-identical".into()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OriginalSummary {
    pub test_accuracy: f64,
    pub forget_accuracy: f64,
    pub retain_accuracy: f64,
    pub param_count: usize,
    pub param_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub history: Option<TrainingHistory>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub record: UnlearnRecord,
    pub evaluation: EvaluationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub seed: u64,
    pub seeds: StageSeeds,
    pub notes: ReportNotes,
    pub config: ExperimentConfig,
    pub original: OriginalSummary,
    pub methods: Vec<MethodReport>,
}

impl ExperimentReport {
    pub fn method(&self, tag: &str) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.evaluation.method == tag)
    }
}

/// Loaded data plus the config that produced it.
#[derive(Debug, Clone)]
pub struct Session {
    pub cfg: ExperimentConfig,
    pub seeds: StageSeeds,
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

/// Train and test partitions for one set of forget classes.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: ClassPartition,
    pub test: ClassPartition,
}

impl Split {
    pub fn probe(&self) -> Probe<'_> {
        Probe {
            forget: self.test.forget_set(),
            retain: self.test.retain_set(),
        }
    }

    pub fn forget_classes(&self) -> &BTreeSet<usize> {
        self.train.forget_classes()
    }
}

impl Session {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let seeds = cfg.seeds();
        let (train, test) = cfg.dataset.load(seeds.data)?;
        if train.is_empty() || test.is_empty() {
            return Err(Error::Config("dataset has an empty train or test split".into()));
        }
        cfg.validate_classes(train.num_classes())?;
        Ok(Session { cfg, seeds, train, test })
    }

    pub fn split(&self, forget: &[usize]) -> Result<Split> {
        Ok(Split {
            train: partition(&self.train, forget)?,
            test: partition(&self.test, forget)?,
        })
    }

    /// Loads `original_checkpoint` if configured, otherwise trains from scratch.
    pub fn original(&self) -> Result<(Model, Option<TrainingHistory>)> {
        if let Some(path) = &self.cfg.original_checkpoint {
            let ck = load_checkpoint(path)?;
            ck.model.check_input(&prepend(1, self.train.input_shape()))?;
            return Ok((ck.model, None));
        }
        let spec = self.cfg.model_spec(self.train.input_shape(), self.train.num_classes());
        let mut model = build_model(&spec)?;
        let history = train(&mut model, &self.train, &self.cfg.train_config())?;
        Ok((model, Some(history)))
    }

    pub fn summarize_original(&self, model: &Model, split: &Split, history: Option<TrainingHistory>) -> Result<OriginalSummary> {
        Ok(OriginalSummary {
            test_accuracy: accuracy(model, &self.test)?,
            forget_accuracy: accuracy(model, split.test.forget_set())?,
            retain_accuracy: accuracy(model, split.test.retain_set())?,
            param_count: model.param_count(),
            param_hash: model.param_hash(),
            history,
        })
    }

    /// Evaluation of an unlearned model against `original`.
    pub fn evaluate(&self, method: &str, model: &Model, original: &Model, split: &Split) -> Result<EvaluationReport> {
        let m = &self.cfg.metrics;
        let relearn = if m.relearn {
            let target = accuracy(original, split.test.forget_set())?;
            Some((&self.train, self.cfg.relearn_config(), target))
        } else {
            None
        };
        let plan = EvalPlan {
            relearn,
            original: m.weight_distance.then_some(original),
            histogram: m.histogram,
        };
        evaluate(
            method,
            model,
            split.test.forget_set(),
            split.test.retain_set(),
            split.forget_classes(),
            &plan,
        )
    }

    fn baseline_kinds(&self) -> Vec<BaselineKind> {
        let b = &self.cfg.baselines;
        let mut kinds = Vec::new();
        if b.retrain {
            kinds.push(BaselineKind::Retrain);
        }
        if b.finetune {
            kinds.push(BaselineKind::Finetune);
        }
        if b.neggrad {
            kinds.push(BaselineKind::Neggrad);
        }
        kinds
    }
}

fn prepend(n: usize, shape: &[usize]) -> Vec<usize> {
    let mut s = vec![n];
    s.extend_from_slice(shape);
    s
}

/// Worker pool sized by `UNSIR_WORKERS`, or rayon's default when unset.
pub fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config(format!("{WORKERS_ENV}={v} is not a positive integer")))?;
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| Error::Config(format!("worker pool: {e}")))
}

fn to_json<T: Serialize>(value: &T, wall_clock: bool) -> Result<serde_json::Value> {
    let mut v = serde_json::to_value(value).map_err(|e| Error::contract(e.to_string()))?;
    if !wall_clock {
        strip_timing(&mut v);
    }
    Ok(v)
}

fn join_classes(classes: &[usize]) -> String {
    classes.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(";")
}

fn relearn_cell(rt: Option<RelearnTime>) -> String {
    rt.map(|r| r.to_string()).unwrap_or_default()
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn checkpoint_meta(pairs: &[(&str, String)]) -> BTreeMap<String, String> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

fn write_noises(w: &mut ArtifactWriter, prefix: &str, outcome: &UnlearnOutcome) -> Result<()> {
    for n in &outcome.noises {
        let rel = format!("{prefix}noise_class{}.ckpt", n.class_label);
        let path = w.root().join(&rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        save_noise(n, &path)?;
        w.adopt(&rel)?;
    }
    Ok(())
}

fn method_table(report: &ExperimentReport) -> Csv {
    let mut csv = Csv::new(&[
        "method",
        "forget_classes",
        "zero_glance",
        "a_df",
        "a_dr",
        "relearn_time",
        "total_distance",
        "max_retain_share",
    ]);
    csv.row([
        "original".to_string(),
        join_classes(&report.config.forget_classes),
        String::new(),
        report.original.forget_accuracy.to_string(),
        report.original.retain_accuracy.to_string(),
        String::new(),
        String::new(),
        String::new(),
    ]);
    for m in &report.methods {
        let e = &m.evaluation;
        csv.row([
            e.method.clone(),
            join_classes(&e.forget_classes),
            m.record.zero_glance.to_string(),
            e.forget_accuracy.to_string(),
            e.retain_accuracy.to_string(),
            relearn_cell(e.relearn_time),
            opt_cell(e.weight_distance.as_ref().map(|d| d.total)),
            opt_cell(e.max_retain_share),
        ]);
    }
    csv
}

fn write_plot_data(w: &mut ArtifactWriter, report: &ExperimentReport) -> Result<()> {
    let mut stages = Csv::new(&["method", "stage", "a_df", "a_dr"]);
    let mut layers = Csv::new(&["method", "layer", "distance"]);
    let mut hist = Csv::new(&["method", "class", "count"]);
    for m in &report.methods {
        let tag = &m.evaluation.method;
        for s in std::iter::once(&m.record.initial).chain(&m.record.stages) {
            stages.row([
                tag.clone(),
                s.stage.clone(),
                s.forget_accuracy.to_string(),
                s.retain_accuracy.to_string(),
            ]);
        }
        if let Some(d) = &m.evaluation.weight_distance {
            for (name, v) in &d.per_layer {
                layers.row([tag.clone(), name.clone(), v.to_string()]);
            }
            layers.row([tag.clone(), "total".to_string(), d.total.to_string()]);
        }
        if let Some(h) = &m.evaluation.histogram {
            for (c, n) in h.counts.iter().enumerate() {
                hist.row([tag.clone(), c.to_string(), n.to_string()]);
            }
        }
    }
    w.write("plots/stages.csv", &stages.into_bytes())?;
    w.write("plots/layer_distances.csv", &layers.into_bytes())?;
    w.write("plots/prediction_histogram.csv", &hist.into_bytes())?;
    Ok(())
}

fn write_noise_trace(w: &mut ArtifactWriter, noises: &[crate::noise::NoiseMatrix]) -> Result<()> {
    let mut trace = Csv::new(&["class", "step", "objective", "cross_entropy"]);
    for n in noises {
        for (step, (obj, ce)) in n.loss_trace.iter().zip(&n.ce_trace).enumerate() {
            trace.row([n.class_label.to_string(), step.to_string(), obj.to_string(), ce.to_string()]);
        }
    }
    w.write("plots/noise_objective.csv", &trace.into_bytes())
}

/// Train (or load) the original, unlearn with UNSIR, run enabled baselines,
/// evaluate everything and write reports.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunArtifactSet> {
    let mut w = ArtifactWriter::create(&cfg.output_dir, "experiment")?;
    match experiment_body(cfg, &mut w) {
        Ok(()) => w.finish(),
        Err(e) => {
            w.fail(&e)?;
            Err(e)
        }
    }
}

fn experiment_body(cfg: &ExperimentConfig, w: &mut ArtifactWriter) -> Result<()> {
    let session = Session::new(cfg.clone())?;
    w.stage_done("data");
    let (original, history) = session.original()?;
    w.save_model("original.ckpt", &original, &checkpoint_meta(&[("role", "original".into())]))?;
    w.stage_done("train");

    let split = session.split(&cfg.forget_classes)?;
    let summary = session.summarize_original(&original, &split, history)?;
    w.stage_done("evaluate_original");

    let unsir = unsir_unlearn(&original, &split.train, split.probe(), &cfg.unsir_config())?;
    w.save_model(
        "unlearned.ckpt",
        &unsir.model,
        &checkpoint_meta(&[("role", "unlearned".into()), ("method", "unsir".into())]),
    )?;
    write_noises(w, "noise/", &unsir)?;
    w.stage_done("unsir");

    let pool = worker_pool()?;
    let kinds = session.baseline_kinds();
    let bcfg = cfg.baseline_config();
    let baselines: Vec<UnlearnOutcome> = pool.install(|| {
        kinds
            .par_iter()
            .map(|&k| run_baseline(k, &original, &split.train, split.probe(), &bcfg))
            .collect::<Result<_>>()
    })?;
    for (k, out) in kinds.iter().zip(&baselines) {
        let tag = k.method().as_str();
        w.save_model(
            &format!("baselines/{tag}.ckpt"),
            &out.model,
            &checkpoint_meta(&[("role", "unlearned".into()), ("method", tag.into())]),
        )?;
    }
    w.stage_done("baselines");

    let outcomes: Vec<&UnlearnOutcome> = std::iter::once(&unsir).chain(&baselines).collect();
    let evaluations: Vec<EvaluationReport> = pool.install(|| {
        outcomes
            .par_iter()
            .map(|o| session.evaluate(o.record.method.as_str(), &o.model, &original, &split))
            .collect::<Result<_>>()
    })?;
    w.stage_done("evaluate");

    let report = ExperimentReport {
        schema_version: SCHEMA_VERSION,
        seed: cfg.seed,
        seeds: session.seeds,
        notes: ReportNotes::new(cfg),
        config: cfg.clone(),
        original: summary,
        methods: outcomes
            .iter()
            .zip(evaluations)
            .map(|(o, evaluation)| MethodReport {
                record: o.record.clone(),
                evaluation,
            })
            .collect(),
    };
    w.write_json("report.json", &to_json(&report, cfg.metrics.wall_clock)?)?;
    w.write("report.csv", &method_table(&report).into_bytes())?;
    write_plot_data(w, &report)?;
    write_noise_trace(w, &unsir.noises)?;
    w.stage_done("report");
    Ok(())
}

pub fn read_experiment_report(dir: impl AsRef<Path>) -> Result<ExperimentReport> {
    let path = dir.as_ref().join("report.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(0, format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequentialRound {
    pub round: usize,
    pub request: Vec<usize>,
    pub cumulative: Vec<usize>,
    pub record: UnlearnRecord,
    pub evaluation: EvaluationReport,
    /// The original model's accuracy on this round's retain classes.
    pub original_retain_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequentialReport {
    pub schema_version: u32,
    pub seed: u64,
    pub seeds: StageSeeds,
    pub notes: ReportNotes,
    pub config: ExperimentConfig,
    pub original: OriginalSummary,
    pub rounds: Vec<SequentialRound>,
}

/// Applies each request in `cfg.sequential` in order; round k starts from
/// round k−1's model and excludes every class forgotten so far.
pub fn run_sequential(cfg: &ExperimentConfig) -> Result<RunArtifactSet> {
    let mut w = ArtifactWriter::create(&cfg.output_dir, "sequential")?;
    match sequential_body(cfg, &mut w) {
        Ok(()) => w.finish(),
        Err(e) => {
            w.fail(&e)?;
            Err(e)
        }
    }
}

fn sequential_body(cfg: &ExperimentConfig, w: &mut ArtifactWriter) -> Result<()> {
    if cfg.sequential.is_empty() {
        return Err(Error::Config("sequential run needs at least one request in `sequential`".into()));
    }
    let session = Session::new(cfg.clone())?;
    w.stage_done("data");
    let (original, history) = session.original()?;
    w.save_model("original.ckpt", &original, &checkpoint_meta(&[("role", "original".into())]))?;
    w.stage_done("train");
    let first = session.split(&cfg.sequential[0])?;
    let summary = session.summarize_original(&original, &first, history)?;

    let base = cfg.unsir_config();
    let mut current = original.clone();
    let mut cumulative: Vec<usize> = Vec::new();
    let mut rounds = Vec::with_capacity(cfg.sequential.len());
    for (k, request) in cfg.sequential.iter().enumerate() {
        cumulative.extend(request);
        cumulative.sort_unstable();
        let split = session.split(&cumulative)?;
        let noise_classes: BTreeSet<usize> = request.iter().copied().collect();
        let round_cfg = crate::unsir::UnsirConfig {
            seed: derive_seed(base.seed, &format!("round{}", k + 1)),
            ..base.clone()
        };
        let out = unsir_unlearn_classes(&current, &split.train, &noise_classes, split.probe(), &round_cfg)?;
        let prefix = format!("round_{}/", k + 1);
        w.save_model(
            &format!("{prefix}unlearned.ckpt"),
            &out.model,
            &checkpoint_meta(&[("role", "unlearned".into()), ("round", (k + 1).to_string())]),
        )?;
        write_noises(w, &prefix, &out)?;
        let evaluation = session.evaluate("unsir", &out.model, &original, &split)?;
        rounds.push(SequentialRound {
            round: k + 1,
            request: request.clone(),
            cumulative: cumulative.clone(),
            record: out.record,
            evaluation,
            original_retain_accuracy: accuracy(&original, split.test.retain_set())?,
        });
        current = out.model;
        w.stage_done(&format!("round_{}", k + 1));
    }

    let report = SequentialReport {
        schema_version: SCHEMA_VERSION,
        seed: cfg.seed,
        seeds: session.seeds,
        notes: ReportNotes::new(cfg),
        config: cfg.clone(),
        original: summary,
        rounds,
    };
    let mut csv = Csv::new(&["round", "request", "cumulative", "a_df", "a_dr", "original_a_dr"]);
    for r in &report.rounds {
        csv.row([
            r.round.to_string(),
            join_classes(&r.request),
            join_classes(&r.cumulative),
            r.evaluation.forget_accuracy.to_string(),
            r.evaluation.retain_accuracy.to_string(),
            r.original_retain_accuracy.to_string(),
        ]);
    }
    w.write_json("sequential.json", &to_json(&report, cfg.metrics.wall_clock)?)?;
    w.write("sequential.csv", &csv.into_bytes())?;
    w.stage_done("report");
    Ok(())
}

pub fn read_sequential_report(dir: impl AsRef<Path>) -> Result<SequentialReport> {
    let path = dir.as_ref().join("sequential.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(0, format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub record: UnlearnRecord,
    pub evaluation: EvaluationReport,
    /// Mean norm of the noise matrices.
    pub noise_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub schema_version: u32,
    pub seed: u64,
    pub seeds: StageSeeds,
    pub notes: ReportNotes,
    pub config: ExperimentConfig,
    pub axis: SweepAxis,
    pub original: OriginalSummary,
    pub points: Vec<SweepPoint>,
}

impl SweepReport {
    pub fn column(&self, f: impl Fn(&SweepPoint) -> f64) -> Vec<f64> {
        self.points.iter().map(f).collect()
    }
}

/// One UNSIR run per value of `axis`, all starting from the same original model.
pub fn run_sweep(cfg: &ExperimentConfig, axis: SweepAxis, values: &[f64]) -> Result<RunArtifactSet> {
    let mut w = ArtifactWriter::create(&cfg.output_dir, "sweep")?;
    match sweep_body(cfg, axis, values, &mut w) {
        Ok(()) => w.finish(),
        Err(e) => {
            w.fail(&e)?;
            Err(e)
        }
    }
}

fn sweep_body(cfg: &ExperimentConfig, axis: SweepAxis, values: &[f64], w: &mut ArtifactWriter) -> Result<()> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let base = cfg.unsir_config();
    let configs: Vec<_> = values.iter().map(|&v| axis.apply(&base, v)).collect::<Result<_>>()?;
    for c in &configs {
        c.validate().map_err(|e| Error::Config(e.to_string()))?;
    }
    let session = Session::new(cfg.clone())?;
    w.stage_done("data");
    let (original, history) = session.original()?;
    w.save_model("original.ckpt", &original, &checkpoint_meta(&[("role", "original".into())]))?;
    w.stage_done("train");
    let split = session.split(&cfg.forget_classes)?;
    let summary = session.summarize_original(&original, &split, history)?;

    let pool = worker_pool()?;
    let runs: Vec<(UnlearnOutcome, EvaluationReport)> = pool.install(|| {
        configs
            .par_iter()
            .map(|c| {
                let out = unsir_unlearn(&original, &split.train, split.probe(), c)?;
                let ev = session.evaluate("unsir", &out.model, &original, &split)?;
                Ok((out, ev))
            })
            .collect::<Result<_>>()
    })?;
    let mut points = Vec::with_capacity(runs.len());
    for (i, ((out, evaluation), &value)) in runs.into_iter().zip(values).enumerate() {
        let prefix = format!("{}_{i}/", axis.as_str());
        w.save_model(
            &format!("{prefix}unlearned.ckpt"),
            &out.model,
            &checkpoint_meta(&[("role", "unlearned".into()), (axis.as_str(), value.to_string())]),
        )?;
        write_noises(w, &prefix, &out)?;
        let noise_norm = out.noises.iter().map(|n| n.norm()).sum::<f64>() / out.noises.len().max(1) as f64;
        points.push(SweepPoint {
            value,
            record: out.record,
            evaluation,
            noise_norm,
        });
    }
    w.stage_done("runs");

    let report = SweepReport {
        schema_version: SCHEMA_VERSION,
        seed: cfg.seed,
        seeds: session.seeds,
        notes: ReportNotes::new(cfg),
        config: cfg.clone(),
        axis,
        original: summary,
        points,
    };
    let mut csv = Csv::new(&["axis", "value", "metric", "number"]);
    for p in &report.points {
        let after_impair = p.record.stages.first();
        let mut metrics = vec![
            ("a_df", p.evaluation.forget_accuracy.to_string()),
            ("a_dr", p.evaluation.retain_accuracy.to_string()),
            ("noise_norm", p.noise_norm.to_string()),
            ("impair_epochs", p.record.impair_epochs_run.to_string()),
            ("repair_epochs", p.record.repair_epochs_run.to_string()),
        ];
        if let Some(s) = after_impair {
            metrics.push(("after_impair_a_df", s.forget_accuracy.to_string()));
            metrics.push(("after_impair_a_dr", s.retain_accuracy.to_string()));
        }
        if let Some(rt) = p.evaluation.relearn_time {
            metrics.push(("relearn_time", rt.to_string()));
        }
        for (name, v) in metrics {
            csv.row([axis.as_str().to_string(), p.value.to_string(), name.to_string(), v]);
        }
    }
    w.write_json("sweep.json", &to_json(&report, cfg.metrics.wall_clock)?)?;
    w.write("sweep.csv", &csv.into_bytes())?;
    w.stage_done("report");
    Ok(())
}

pub fn read_sweep_report(dir: impl AsRef<Path>) -> Result<SweepReport> {
    let path = dir.as_ref().join("sweep.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(0, format!("{}: {e}", path.display())))
}

/// Runs only the given reference methods (no UNSIR) and writes their reports.
pub fn run_baselines(cfg: &ExperimentConfig, kinds: &[BaselineKind]) -> Result<RunArtifactSet> {
    let mut w = ArtifactWriter::create(&cfg.output_dir, "baselines")?;
    match baselines_body(cfg, kinds, &mut w) {
        Ok(()) => w.finish(),
        Err(e) => {
            w.fail(&e)?;
            Err(e)
        }
    }
}

fn baselines_body(cfg: &ExperimentConfig, kinds: &[BaselineKind], w: &mut ArtifactWriter) -> Result<()> {
    if kinds.is_empty() {
        return Err(Error::Config("no baseline selected".into()));
    }
    let session = Session::new(cfg.clone())?;
    w.stage_done("data");
    let (original, history) = session.original()?;
    w.save_model("original.ckpt", &original, &checkpoint_meta(&[("role", "original".into())]))?;
    w.stage_done("train");
    let split = session.split(&cfg.forget_classes)?;
    let summary = session.summarize_original(&original, &split, history)?;
    let bcfg = cfg.baseline_config();
    let pool = worker_pool()?;
    let runs: Vec<(UnlearnOutcome, EvaluationReport)> = pool.install(|| {
        kinds
            .par_iter()
            .map(|&k| {
                let out = run_baseline(k, &original, &split.train, split.probe(), &bcfg)?;
                let ev = session.evaluate(k.method().as_str(), &out.model, &original, &split)?;
                Ok((out, ev))
            })
            .collect::<Result<_>>()
    })?;
    let mut methods = Vec::with_capacity(runs.len());
    for (out, evaluation) in runs {
        let tag = out.record.method.as_str();
        w.save_model(
            &format!("baselines/{tag}.ckpt"),
            &out.model,
            &checkpoint_meta(&[("role", "unlearned".into()), ("method", tag.into())]),
        )?;
        methods.push(MethodReport {
            record: out.record,
            evaluation,
        });
    }
    w.stage_done("baselines");
    let report = ExperimentReport {
        schema_version: SCHEMA_VERSION,
        seed: cfg.seed,
        seeds: session.seeds,
        notes: ReportNotes::new(cfg),
        config: cfg.clone(),
        original: summary,
        methods,
    };
    w.write_json("report.json", &to_json(&report, cfg.metrics.wall_clock)?)?;
    w.write("report.csv", &method_table(&report).into_bytes())?;
    write_plot_data(w, &report)?;
    w.stage_done("report");
    Ok(())
}

/// Trains (or loads) the original model only.
pub fn run_train(cfg: &ExperimentConfig) -> Result<RunArtifactSet> {
    let mut w = ArtifactWriter::create(&cfg.output_dir, "train")?;
    let body = |w: &mut ArtifactWriter| -> Result<()> {
        let session = Session::new(cfg.clone())?;
        w.stage_done("data");
        let (original, history) = session.original()?;
        w.save_model("original.ckpt", &original, &checkpoint_meta(&[("role", "original".into())]))?;
        let split = session.split(&cfg.forget_classes)?;
        let summary = session.summarize_original(&original, &split, history)?;
        w.write_json("train.json", &summary)?;
        w.stage_done("train");
        Ok(())
    };
    match body(&mut w) {
        Ok(()) => w.finish(),
        Err(e) => {
            w.fail(&e)?;
            Err(e)
        }
    }
}
