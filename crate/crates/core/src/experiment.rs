//! In-memory synthetic experiments: one target task, its sources, every
//! similarity score, all single-source distillations and a set of weighting
//! schemes. The staged pipeline and the acceptance suite are built on this.

use std::collections::BTreeMap;

use log::info;
use serde::{Deserialize, Serialize};

use crate::distill::{self, DistillConfig, PseudoLabelCache, TargetArch};
use crate::error::{Error, Result};
use crate::model::TrainHyper;
use crate::seed;
use crate::similarity::{self, Metric, RepresentationKind, SimilarityScore};
use crate::taskgen::{
    self, DataSplit, PartitionStyle, SourceModelHandle, SourceTraining, SplitSizes, TaskDesign, TaskSpec,
    Universe,
};
use crate::weighting::{Scheme, SourceWeights, WeightingSpec};

/// Universe generation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UniverseParams {
    pub num_clusters: usize,
    pub dim: usize,
    pub sigma: f64,
}

impl Default for UniverseParams {
    fn default() -> Self {
        UniverseParams { num_clusters: 10, dim: 16, sigma: 0.25 }
    }
}

/// Target training knobs shared by every distillation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillSettings {
    pub lambda: f64,
    pub hyper: TrainHyper,
    pub arch: TargetArch,
    /// Labeled to unlabeled examples per step.
    pub batch_ratio: (usize, usize),
    /// Every reported accuracy is the mean over this many training seeds.
    pub repeats: usize,
}

impl Default for DistillSettings {
    fn default() -> Self {
        DistillSettings {
            lambda: 0.8,
            hyper: TrainHyper::default(),
            arch: TargetArch::default(),
            batch_ratio: (1, 1),
            repeats: 1,
        }
    }
}

impl DistillSettings {
    pub fn config(&self, weights: SourceWeights, seed: u64) -> DistillConfig {
        DistillConfig {
            lambda: self.lambda,
            weights,
            hyper: TrainHyper { seed, ..self.hyper },
            arch: self.arch.clone(),
            batch_ratio: self.batch_ratio,
        }
    }
}

/// Everything needed to run one target task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub universe: UniverseParams,
    pub design: TaskDesign,
    pub source_training: SourceTraining,
    pub split: SplitSizes,
    pub distill: DistillSettings,
    /// Metric and representation that drive the weighting schemes.
    pub metric: Metric,
    pub representation: RepresentationKind,
    pub top_k: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            universe: UniverseParams::default(),
            design: TaskDesign::default(),
            source_training: SourceTraining::default(),
            split: SplitSizes::default(),
            distill: DistillSettings::default(),
            metric: Metric::Parc,
            representation: RepresentationKind::Feature,
            top_k: None,
        }
    }
}

impl ExperimentConfig {
    /// The synthetic benchmark used by the acceptance suite: noisy clusters,
    /// an eight-class target with 40 labels, six singleton-class sources
    /// whose overlaps range from disjoint to nearly identical, and target
    /// training fast enough to average three seeds per accuracy.
    pub fn benchmark() -> Self {
        ExperimentConfig {
            universe: UniverseParams { num_clusters: 10, dim: 16, sigma: 0.6 },
            design: TaskDesign {
                target_clusters: 8,
                target_classes: 8,
                source_overlaps: vec![0.0, 0.25, 0.5, 0.75, 0.875, 0.5],
                source_partition: PartitionStyle::Singleton,
            },
            source_training: SourceTraining {
                hyper: TrainHyper { learning_rate: 0.1, weight_decay: 1e-4, batch_size: 32, epochs: 200, seed: 0 },
                stop_accuracy: 0.99,
                ..SourceTraining::default()
            },
            split: SplitSizes { n_total: 200, labeled_fraction: 0.2, probe_size: None, n_test: 5000 },
            distill: DistillSettings {
                hyper: TrainHyper { learning_rate: 0.05, weight_decay: 1e-4, batch_size: 32, epochs: 60, seed: 0 },
                repeats: 3,
                ..DistillSettings::default()
            },
            ..ExperimentConfig::default()
        }
    }
}

/// A prepared target task: data, trained sources and their cached outputs.
#[derive(Debug)]
pub struct TaskRun {
    pub seed: u64,
    pub target: TaskSpec,
    pub sources: Vec<SourceModelHandle>,
    /// Ground-truth Jaccard overlap of each kept source with the target.
    pub overlaps: Vec<f64>,
    pub split: DataSplit,
    pub cache: PseudoLabelCache,
}

impl TaskRun {
    pub fn source_ids(&self) -> Vec<String> {
        self.sources.iter().map(|s| s.id.clone()).collect()
    }

    /// Seed of the `repeat`-th target training run; shared by all schemes on
    /// this task so that they differ only in their weights.
    pub fn train_seed(&self, repeat: usize) -> u64 {
        seed::derive(self.seed, &["target-train", &repeat.to_string()])
    }
}

/// Seed of the `index`-th target task drawn from `base`.
pub fn task_seed(base: u64, index: usize) -> u64 {
    seed::derive(base, &["task", &index.to_string()])
}

pub fn make_universe(params: &UniverseParams, seed: u64) -> Result<Universe> {
    taskgen::build_universe(seed::derive(seed, &["universe"]), params.num_clusters, params.dim, params.sigma)
}

/// Designs a target with its sources, trains them and caches pseudo-labels.
pub fn prepare_task(universe: &Universe, cfg: &ExperimentConfig, seed: u64) -> Result<TaskRun> {
    let (target, specs) = taskgen::design_tasks(universe, &cfg.design, seed)?;
    let (trained, _) = taskgen::train_source_models(
        universe,
        &specs,
        &cfg.source_training,
        seed::derive(seed, &["sources"]),
    )?;
    let sources = taskgen::exclude_target_leakage(trained, &target);
    if sources.is_empty() {
        return Err(Error::Config("no usable source models".into()));
    }
    let split = taskgen::sample_split(universe, &target, &cfg.split, seed::derive(seed, &["split"]))?;
    assemble(seed, target, sources, split)
}

/// Builds a [`TaskRun`] from already available parts.
pub fn assemble(seed: u64, target: TaskSpec, sources: Vec<SourceModelHandle>, split: DataSplit) -> Result<TaskRun> {
    let overlaps = sources.iter().map(|s| taskgen::ground_truth_overlap(&s.task, &target)).collect();
    let cache = match &split.unlabeled {
        Some(u) => distill::cache_pseudo_labels(&sources, u)?,
        None => return Err(Error::InvalidArgument("target split has no unlabeled data".into())),
    };
    Ok(TaskRun { seed, target, sources, overlaps, split, cache })
}

pub type ScoreTable = BTreeMap<(Metric, RepresentationKind), Vec<SimilarityScore>>;

/// Scores every source under every metric and representation.
pub fn score_everything(run: &TaskRun) -> Result<ScoreTable> {
    let mut table = ScoreTable::new();
    for metric in Metric::ALL {
        for kind in RepresentationKind::ALL {
            let scores = similarity::score_all_sources(&run.sources, &run.split.probe, metric, kind)
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            table.insert((metric, kind), scores);
        }
    }
    Ok(table)
}

pub fn score_values(scores: &[SimilarityScore]) -> Vec<f64> {
    scores.iter().map(|s| s.value).collect()
}

fn mean_over_repeats(settings: &DistillSettings, mut f: impl FnMut(usize) -> Result<f64>) -> Result<f64> {
    let n = settings.repeats.max(1);
    let mut total = 0.0;
    for r in 0..n {
        total += f(r)?;
    }
    Ok(total / n as f64)
}

/// Test accuracy after distilling with `weights`.
pub fn distill_accuracy(run: &TaskRun, settings: &DistillSettings, weights: SourceWeights) -> Result<f64> {
    mean_over_repeats(settings, |r| {
        let cfg = settings.config(weights.clone(), run.train_seed(r));
        let (_, history) = distill::train_target(&run.split, &run.cache, &cfg)?;
        Ok(history.final_test_acc().unwrap_or(0.0))
    })
}

/// Test accuracy of the single-source distillation from each source.
pub fn single_source_accuracies(run: &TaskRun, settings: &DistillSettings) -> Result<Vec<f64>> {
    let s = run.sources.len();
    (0..s)
        .map(|i| distill_accuracy(run, settings, SourceWeights::one_hot(s, i, Scheme::Nearest)))
        .collect()
}

pub fn supervised_accuracy(run: &TaskRun, settings: &DistillSettings) -> Result<f64> {
    mean_over_repeats(settings, |r| {
        let hyper = TrainHyper { seed: run.train_seed(r), ..settings.hyper };
        let (_, history) = distill::train_baseline_supervised(&run.split, &hyper, &settings.arch)?;
        Ok(history.final_test_acc().unwrap_or(0.0))
    })
}

/// Label of the expected-value row for random selection.
pub const RANDOM_SELECTION_EXPECTED: &str = "random-selection:expected";
/// Label of the labeled-only baseline row.
pub const SUPERVISED: &str = "supervised";

/// Everything measured on one target task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub seed: u64,
    pub source_ids: Vec<String>,
    pub overlaps: Vec<f64>,
    pub scores: Vec<((Metric, RepresentationKind), Vec<f64>)>,
    pub single_source: Vec<f64>,
    /// Accuracy per scheme label, including [`SUPERVISED`] and
    /// [`RANDOM_SELECTION_EXPECTED`].
    pub schemes: BTreeMap<String, f64>,
}

impl TaskOutcome {
    pub fn scores_for(&self, metric: Metric, kind: RepresentationKind) -> Option<&[f64]> {
        self.scores.iter().find(|(k, _)| *k == (metric, kind)).map(|(_, v)| v.as_slice())
    }
}

/// Runs one complete target task: scores, single-source runs, the
/// supervised baseline and every scheme in `schemes`.
pub fn run_task(
    universe: &Universe,
    cfg: &ExperimentConfig,
    schemes: &[WeightingSpec],
    seed: u64,
) -> Result<TaskOutcome> {
    let run = prepare_task(universe, cfg, seed)?;
    evaluate_task(&run, cfg, schemes)
}

pub fn evaluate_task(run: &TaskRun, cfg: &ExperimentConfig, schemes: &[WeightingSpec]) -> Result<TaskOutcome> {
    let table = score_everything(run)?;
    let single = single_source_accuracies(run, &cfg.distill)?;
    let mut results = BTreeMap::new();
    results.insert(SUPERVISED.to_string(), supervised_accuracy(run, &cfg.distill)?);
    results.insert(RANDOM_SELECTION_EXPECTED.to_string(), single.iter().sum::<f64>() / single.len() as f64);
    let driving = score_values(&table[&(cfg.metric, cfg.representation)]);
    for spec in schemes {
        let weights = spec.weights(&driving, cfg.top_k, seed::derive(run.seed, &["scheme", &spec.label()]))?;
        let acc = distill_accuracy(run, &cfg.distill, weights)?;
        info!("task {:x} {}: {acc:.4}", run.seed, spec.label());
        results.insert(spec.label(), acc);
    }
    Ok(TaskOutcome {
        seed: run.seed,
        source_ids: run.source_ids(),
        overlaps: run.overlaps.clone(),
        scores: table.iter().map(|(k, v)| (*k, score_values(v))).collect(),
        single_source: single,
        schemes: results,
    })
}
