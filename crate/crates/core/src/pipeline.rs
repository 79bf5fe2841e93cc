//! File-based pipeline stages: gen, train-sources, score, weigh, distill and
//! eval. Each stage reads its inputs from the run directory, writes its
//! outputs and a `manifest.json` beside them, and is deterministic given the
//! config, so a rerun reproduces the same bytes.
//!
//! Layout below the output directory:
//!
//! ```text
//! target-<i>/gen/            universe, tasks, data splits (FMAT + label CSV)
//! target-<i>/sources/        one checkpoint directory per kept source
//! target-<i>/scores/         scores.csv (configured cell), all_scores.csv
//! target-<i>/weights/<s>/    weights.csv per scheme
//! target-<i>/distill/<s>/    history.csv, result.json, model/ per run
//! report/                    CSV tables across all targets
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::distill::{self, PseudoLabelCache};
use crate::error::{Error, Result};
use crate::eval::{self, CorrelationReport, RankingEval};
use crate::experiment::{make_universe, task_seed};
use crate::io::{self, Manifest};
use crate::numerics::Matrix;
use crate::seed;
use crate::similarity::{self, Metric, PrecomputedSource, ProbeSet, RepresentationKind, SimilarityScore};
use crate::taskgen::{self, DataSplit, LabeledSet, SourceModelHandle, TaskSpec, Universe};
use crate::weighting::{Scheme, SourceWeights, WeightingSpec};

pub const GEN: &str = "gen";
pub const TRAIN_SOURCES: &str = "train-sources";
pub const SCORE: &str = "score";
pub const WEIGH: &str = "weigh";
pub const DISTILL: &str = "distill";
pub const DISTILL_SINGLE: &str = "distill --single-source";
pub const EVAL: &str = "eval";

pub const MANIFEST: &str = "manifest.json";
pub const REPORT_DIR: &str = "report";
pub const FIG1: &str = "fig1_schemes.csv";
pub const FIG3: &str = "fig3_single_source.csv";
pub const TABLE2: &str = "table2_correlations.csv";
pub const TABLE3: &str = "table3_topk.csv";
pub const TABLE8: &str = "table8_mean_relative_accuracy.csv";
/// Every file written to the report directory.
pub const REPORT_FILES: [&str; 6] = [FIG1, FIG3, TABLE2, TABLE3, TABLE8, MANIFEST];

pub fn target_name(index: usize) -> String {
    format!("target-{index}")
}

/// Directory name of a scheme's weights and distillation run.
pub fn scheme_slug(spec: &WeightingSpec) -> String {
    spec.label().replace(':', "_")
}

pub fn single_source_slug(source_id: &str) -> String {
    format!("single-{source_id}")
}

/// A stage output directory, relative to the run root.
struct StageDir {
    root: PathBuf,
    rel: PathBuf,
    inputs: Vec<PathBuf>,
}

impl StageDir {
    /// Creates the directory, clearing anything left by an earlier run.
    fn create(root: &Path, rel: PathBuf) -> Result<Self> {
        let full = root.join(&rel);
        if full.exists() {
            fs::remove_dir_all(&full).map_err(|e| Error::io(&full, e))?;
        }
        fs::create_dir_all(&full).map_err(|e| Error::io(&full, e))?;
        Ok(StageDir { root: root.to_path_buf(), rel, inputs: Vec::new() })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(&self.rel).join(name)
    }

    fn input(&mut self, rel: PathBuf) {
        if !self.inputs.contains(&rel) {
            self.inputs.push(rel);
        }
    }

    fn finish(self, stage: &str, seed: u64, config: serde_json::Value) -> Result<()> {
        let full = self.root.join(&self.rel);
        let mut outputs = Vec::new();
        list_files(&full, &self.rel, &mut outputs)?;
        outputs.retain(|p| p != &self.rel.join(MANIFEST));
        outputs.sort();
        let mut inputs = self.inputs;
        inputs.sort();
        let manifest = Manifest {
            stage: stage.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config_sha256: io::sha256_hex(&serde_json::to_vec(&config)?),
            config,
            inputs: io::file_digests(&self.root, &inputs)?,
            outputs: io::file_digests(&self.root, &outputs)?,
        };
        io::write_json(&full.join(MANIFEST), &manifest)
    }
}

fn list_files(dir: &Path, rel: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let path = entry.path();
        if path.is_dir() {
            list_files(&path, &rel.join(&name), out)?;
        } else {
            out.push(rel.join(&name));
        }
    }
    Ok(())
}

fn require(root: &Path, rel: &Path, stage: &'static str, needs: &'static str) -> Result<PathBuf> {
    let full = root.join(rel);
    if full.exists() {
        Ok(full)
    } else {
        Err(Error::MissingPrerequisite { stage, path: full, needs })
    }
}

/// The config as a scheme-specific stage sees it, so that its manifest
/// names the scheme actually used.
fn with_scheme(cfg: &PipelineConfig, spec: &WeightingSpec) -> PipelineConfig {
    PipelineConfig { scheme: *spec, ..cfg.clone() }
}

fn stage_config(cfg: &PipelineConfig) -> Result<serde_json::Value> {
    cfg.manifest_value()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SourceTask {
    id: String,
    classes: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TasksFile {
    target: Vec<Vec<usize>>,
    sources: Vec<SourceTask>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SplitFile {
    num_classes: usize,
    /// Rows of `labeled.fmat` that form the probe set.
    probe_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SourceRecord {
    id: String,
    classes: Vec<Vec<usize>>,
    epochs_run: usize,
    test_accuracy: f64,
    accepted: bool,
    /// Trained on exactly the target task.
    leaked: bool,
}

/// Outcome of one distillation run, averaged over the configured repeats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunResult {
    pub scheme: String,
    pub source_ids: Vec<String>,
    pub alphas: Vec<f64>,
    pub test_accuracy: f64,
    pub runs: Vec<f64>,
}

fn gen_rel(i: usize) -> PathBuf {
    PathBuf::from(target_name(i)).join("gen")
}

fn sources_rel(i: usize) -> PathBuf {
    PathBuf::from(target_name(i)).join("sources")
}

fn scores_rel(i: usize) -> PathBuf {
    PathBuf::from(target_name(i)).join("scores")
}

fn weights_rel(i: usize, spec: &WeightingSpec) -> PathBuf {
    PathBuf::from(target_name(i)).join("weights").join(scheme_slug(spec))
}

fn distill_rel(i: usize, slug: &str) -> PathBuf {
    PathBuf::from(target_name(i)).join("distill").join(slug)
}

const GEN_FILES: [&str; 10] = [
    "universe.json",
    "tasks.json",
    "split.json",
    "labeled.fmat",
    "labeled_labels.csv",
    "unlabeled.fmat",
    "probe.fmat",
    "probe_labels.csv",
    "test.fmat",
    "test_labels.csv",
];

/// Draws the universe, the tasks and the target data splits.
pub fn cmd_gen(cfg: &PipelineConfig) -> Result<()> {
    run_stage(GEN, || {
        let root = &cfg.output_dir;
        let universe = make_universe(&cfg.universe, cfg.seed)?;
        for i in 0..cfg.num_targets {
            let t = task_seed(cfg.seed, i);
            let (target, specs) = match &cfg.tasks {
                Some(tasks) => tasks.specs()?,
                None => taskgen::design_tasks(&universe, &cfg.design, t)?,
            };
            for spec in std::iter::once(&target).chain(&specs) {
                spec.validate_against(&universe)?;
            }
            let split = taskgen::sample_split(&universe, &target, &cfg.split, seed::derive(t, &["split"]))?;
            let unlabeled = split
                .unlabeled
                .as_ref()
                .ok_or_else(|| Error::Config("the split leaves no unlabeled data".into()))?;
            let dir = StageDir::create(root, gen_rel(i))?;
            io::write_json(&dir.path("universe.json"), &universe)?;
            let tasks = TasksFile {
                target: target.classes().to_vec(),
                sources: specs
                    .iter()
                    .enumerate()
                    .map(|(j, s)| SourceTask { id: taskgen::source_id(j), classes: s.classes().to_vec() })
                    .collect(),
            };
            io::write_json(&dir.path("tasks.json"), &tasks)?;
            let split_file = SplitFile { num_classes: split.num_classes, probe_indices: split.probe_indices.clone() };
            io::write_json(&dir.path("split.json"), &split_file)?;
            io::write_fmat(&dir.path("labeled.fmat"), &split.labeled.inputs)?;
            io::write_labels(&dir.path("labeled_labels.csv"), &split.labeled.labels)?;
            io::write_fmat(&dir.path("unlabeled.fmat"), unlabeled)?;
            io::write_fmat(&dir.path("probe.fmat"), split.probe.inputs())?;
            io::write_labels(&dir.path("probe_labels.csv"), split.probe.labels())?;
            io::write_fmat(&dir.path("test.fmat"), &split.test.inputs)?;
            io::write_labels(&dir.path("test_labels.csv"), &split.test.labels)?;
            dir.finish(GEN, cfg.seed, stage_config(cfg)?)?;
            info!("{}: generated {} sources", target_name(i), specs.len());
        }
        Ok(())
    })
}

fn run_stage<T>(stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f().map_err(|e| e.in_stage(stage))
}

fn load_universe(root: &Path, i: usize, stage: &'static str) -> Result<Universe> {
    let path = require(root, &gen_rel(i).join("universe.json"), stage, GEN)?;
    io::read_json(&path)
}

fn load_tasks(root: &Path, i: usize, stage: &'static str) -> Result<(TaskSpec, Vec<(String, TaskSpec)>)> {
    let path = require(root, &gen_rel(i).join("tasks.json"), stage, GEN)?;
    let file: TasksFile = io::read_json(&path)?;
    let target = TaskSpec::new(file.target)?;
    let sources = file
        .sources
        .into_iter()
        .map(|s| Ok((s.id, TaskSpec::new(s.classes)?)))
        .collect::<Result<_>>()?;
    Ok((target, sources))
}

fn load_split(root: &Path, i: usize, stage: &'static str) -> Result<DataSplit> {
    for name in GEN_FILES {
        require(root, &gen_rel(i).join(name), stage, GEN)?;
    }
    let dir = root.join(gen_rel(i));
    let meta: SplitFile = io::read_json(&dir.join("split.json"))?;
    let labeled = LabeledSet {
        inputs: io::read_fmat(&dir.join("labeled.fmat"))?,
        labels: io::read_labels(&dir.join("labeled_labels.csv"))?,
    };
    let test = LabeledSet {
        inputs: io::read_fmat(&dir.join("test.fmat"))?,
        labels: io::read_labels(&dir.join("test_labels.csv"))?,
    };
    let unlabeled = io::read_fmat(&dir.join("unlabeled.fmat"))?;
    for (set, name) in [(&labeled, "labeled"), (&test, "test")] {
        if set.inputs.rows() != set.labels.len() {
            return Err(Error::Format {
                path: dir.join(format!("{name}.fmat")),
                reason: format!("{} rows but {} labels", set.inputs.rows(), set.labels.len()),
            });
        }
    }
    if meta.probe_indices.iter().any(|&r| r >= labeled.len()) {
        return Err(Error::Format { path: dir.join("split.json"), reason: "probe index out of range".into() });
    }
    let probe = ProbeSet::new(
        labeled.inputs.select_rows(&meta.probe_indices),
        meta.probe_indices.iter().map(|&r| labeled.labels[r]).collect(),
        meta.num_classes,
    )?;
    Ok(DataSplit {
        num_classes: meta.num_classes,
        labeled,
        unlabeled: Some(unlabeled),
        probe,
        probe_indices: meta.probe_indices,
        test,
    })
}

/// Trains every source task and keeps those that reach the accuracy floor
/// and differ from the target.
pub fn cmd_train_sources(cfg: &PipelineConfig) -> Result<()> {
    run_stage(TRAIN_SOURCES, || {
        let root = &cfg.output_dir;
        for i in 0..cfg.num_targets {
            let t = task_seed(cfg.seed, i);
            let universe = load_universe(root, i, TRAIN_SOURCES)?;
            let (target, sources) = load_tasks(root, i, TRAIN_SOURCES)?;
            let specs: Vec<TaskSpec> = sources.iter().map(|(_, s)| s.clone()).collect();
            let (trained, reports) = taskgen::train_source_models(
                &universe,
                &specs,
                &cfg.source_training,
                seed::derive(t, &["sources"]),
            )?;
            let kept = taskgen::exclude_target_leakage(trained, &target);
            if kept.is_empty() {
                return Err(Error::Config(format!("{}: no usable source models", target_name(i))));
            }
            let mut dir = StageDir::create(root, sources_rel(i))?;
            dir.input(gen_rel(i).join("universe.json"));
            dir.input(gen_rel(i).join("tasks.json"));
            let mut records = Vec::new();
            for (report, (id, spec)) in reports.iter().zip(&sources) {
                let leaked = spec == &target;
                if leaked {
                    warn!("{id} was trained on the target task; excluded");
                }
                records.push(SourceRecord {
                    id: id.clone(),
                    classes: spec.classes().to_vec(),
                    epochs_run: report.epochs_run,
                    test_accuracy: report.test_accuracy,
                    accepted: report.accepted,
                    leaked,
                });
            }
            for source in &kept {
                io::save_checkpoint(&dir.path(&source.id), &source.model)?;
            }
            io::write_json(&dir.path("sources.json"), &records)?;
            dir.finish(TRAIN_SOURCES, cfg.seed, stage_config(cfg)?)?;
            info!("{}: kept {} of {} sources", target_name(i), kept.len(), records.len());
        }
        Ok(())
    })
}

fn load_sources(root: &Path, i: usize, stage: &'static str) -> Result<Vec<SourceModelHandle>> {
    let path = require(root, &sources_rel(i).join("sources.json"), stage, TRAIN_SOURCES)?;
    let records: Vec<SourceRecord> = io::read_json(&path)?;
    records
        .into_iter()
        .filter(|r| r.accepted && !r.leaked)
        .map(|r| {
            let model = io::load_checkpoint(&root.join(sources_rel(i)).join(&r.id))?;
            SourceModelHandle::new(r.id, TaskSpec::new(r.classes)?, model)
        })
        .collect()
}

fn source_inputs(i: usize, sources: &[SourceModelHandle], dir: &mut StageDir) {
    dir.input(sources_rel(i).join("sources.json"));
    for s in sources {
        dir.input(sources_rel(i).join(&s.id).join("model.json"));
    }
}

fn score_cells<S: similarity::RepresentationSource>(sources: &[S], probe: &ProbeSet) -> Result<Vec<SimilarityScore>> {
    let mut all = Vec::new();
    for metric in Metric::ALL {
        for kind in RepresentationKind::ALL {
            for result in similarity::score_all_sources(sources, probe, metric, kind) {
                all.push(result?);
            }
        }
    }
    Ok(all)
}

fn warn_degenerate(scores: &[SimilarityScore]) {
    for s in scores.iter().filter(|s| s.degenerate) {
        warn!("{} {}/{} score is degenerate (constant input); using 0", s.source_id, s.metric, s.representation);
    }
}

/// Scores every kept source on the probe set under every metric and
/// representation.
pub fn cmd_score(cfg: &PipelineConfig) -> Result<()> {
    run_stage(SCORE, || {
        let root = &cfg.output_dir;
        for i in 0..cfg.num_targets {
            let split = load_split(root, i, SCORE)?;
            let sources = load_sources(root, i, SCORE)?;
            let all = score_cells(&sources, &split.probe)?;
            let picked: Vec<SimilarityScore> = all
                .iter()
                .filter(|s| s.metric == cfg.metric && s.representation == cfg.representation)
                .cloned()
                .collect();
            warn_degenerate(&picked);
            let mut dir = StageDir::create(root, scores_rel(i))?;
            dir.input(gen_rel(i).join("labeled.fmat"));
            dir.input(gen_rel(i).join("labeled_labels.csv"));
            dir.input(gen_rel(i).join("split.json"));
            source_inputs(i, &sources, &mut dir);
            io::write_scores(&dir.path("scores.csv"), &picked)?;
            io::write_scores(&dir.path("all_scores.csv"), &all)?;
            dir.finish(SCORE, cfg.seed, stage_config(cfg)?)?;
        }
        Ok(())
    })
}

/// Parameters of scoring externally computed representations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalScoring {
    /// Directory of `<source_id>.fmat` files, one row per probe example.
    pub reps: PathBuf,
    /// `index,label` CSV of the probe examples.
    pub labels: PathBuf,
    pub metric: Metric,
    pub representation: RepresentationKind,
    /// Defaults to `max(label) + 1`.
    pub num_classes: Option<usize>,
}

/// Scores representations exported elsewhere and writes `scores.csv` with a
/// manifest into `out`.
pub fn cmd_score_external(spec: &ExternalScoring, out: &Path) -> Result<Vec<SimilarityScore>> {
    run_stage(SCORE, || {
        let labels = io::read_labels(&spec.labels)?;
        if labels.is_empty() {
            return Err(Error::Format { path: spec.labels.clone(), reason: "no labels".into() });
        }
        let k = spec.num_classes.unwrap_or_else(|| labels.iter().max().map_or(1, |m| m + 1));
        let entries = fs::read_dir(&spec.reps).map_err(|e| Error::io(&spec.reps, e))?;
        let mut files: Vec<PathBuf> = entries
            .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(&spec.reps, err)))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .filter(|p| p.extension().is_some_and(|x| x == "fmat"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::InvalidArgument(format!("no .fmat files in {}", spec.reps.display())));
        }
        let mut sources = Vec::new();
        for f in &files {
            let id = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let m = io::read_fmat(f)?;
            let (features, pseudo) = match spec.representation {
                RepresentationKind::Feature => (Some(m), None),
                RepresentationKind::Pseudo => (None, Some(m)),
            };
            sources.push(PrecomputedSource { id, features, pseudo });
        }
        let probe = ProbeSet::new(Matrix::zeros(labels.len(), 1), labels, k)?;
        let scores = similarity::score_all_sources(&sources, &probe, spec.metric, spec.representation)
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        warn_degenerate(&scores);
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let mut inputs = BTreeMap::new();
        for f in files.iter().chain(std::iter::once(&spec.labels)) {
            let bytes = fs::read(f).map_err(|e| Error::io(f, e))?;
            inputs.insert(f.to_string_lossy().into_owned(), io::sha256_hex(&bytes));
        }
        let scores_path = out.join("scores.csv");
        io::write_scores(&scores_path, &scores)?;
        let config = serde_json::to_value(spec)?;
        let manifest = Manifest {
            stage: SCORE.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: 0,
            config_sha256: io::sha256_hex(&serde_json::to_vec(&config)?),
            config,
            inputs,
            outputs: io::file_digests(out, &[PathBuf::from("scores.csv")])?,
        };
        io::write_json(&out.join(MANIFEST), &manifest)?;
        Ok(scores)
    })
}

fn load_scores(root: &Path, i: usize, stage: &'static str) -> Result<Vec<SimilarityScore>> {
    let path = require(root, &scores_rel(i).join("all_scores.csv"), stage, SCORE)?;
    io::read_scores(&path)
}

/// Scores of one cell, in source order.
fn cell(scores: &[SimilarityScore], metric: Metric, kind: RepresentationKind) -> (Vec<String>, Vec<f64>) {
    scores
        .iter()
        .filter(|s| s.metric == metric && s.representation == kind)
        .map(|s| (s.source_id.clone(), s.value))
        .unzip()
}

/// Turns the configured cell's scores into weights for `spec`.
pub fn cmd_weigh(cfg: &PipelineConfig, spec: &WeightingSpec) -> Result<()> {
    let cfg = &with_scheme(cfg, spec);
    run_stage(WEIGH, || {
        let root = &cfg.output_dir;
        for i in 0..cfg.num_targets {
            let t = task_seed(cfg.seed, i);
            let scores = load_scores(root, i, WEIGH)?;
            let (ids, values) = cell(&scores, cfg.metric, cfg.representation);
            let weights = spec.weights(&values, cfg.top_k, seed::derive(t, &["scheme", &spec.label()]))?;
            let mut dir = StageDir::create(root, weights_rel(i, spec))?;
            dir.input(scores_rel(i).join("all_scores.csv"));
            io::write_weights(&dir.path("weights.csv"), &ids, &weights)?;
            dir.finish(WEIGH, cfg.seed, stage_config(cfg)?)?;
        }
        Ok(())
    })
}

fn train_seed(task: u64, repeat: usize) -> u64 {
    seed::derive(task, &["target-train", &repeat.to_string()])
}

/// Trains the target `repeats` times and records the first model, its
/// history and the mean accuracy.
#[allow(clippy::too_many_arguments)]
fn run_distillation(
    cfg: &PipelineConfig,
    i: usize,
    split: &DataSplit,
    cache: &PseudoLabelCache,
    label: &str,
    slug: &str,
    weights: SourceWeights,
    mut dir_inputs: Vec<PathBuf>,
) -> Result<RunResult> {
    let root = &cfg.output_dir;
    let t = task_seed(cfg.seed, i);
    let mut dir = StageDir::create(root, distill_rel(i, slug))?;
    for p in dir_inputs.drain(..) {
        dir.input(p);
    }
    let mut runs = Vec::with_capacity(cfg.distill.repeats);
    for r in 0..cfg.distill.repeats {
        let dcfg = cfg.distill.config(weights.clone(), train_seed(t, r));
        let (model, history) = distill::train_target(split, cache, &dcfg)?;
        runs.push(history.final_test_acc().unwrap_or(0.0));
        if r == 0 {
            io::write_text(&dir.path("history.csv"), &history.to_csv())?;
            io::save_checkpoint(&dir.path("model"), &model)?;
        }
    }
    let result = RunResult {
        scheme: label.to_string(),
        source_ids: cache.ids().to_vec(),
        alphas: weights.alphas().to_vec(),
        test_accuracy: runs.iter().sum::<f64>() / runs.len() as f64,
        runs,
    };
    io::write_json(&dir.path("result.json"), &result)?;
    dir.finish(DISTILL, cfg.seed, stage_config(cfg)?)?;
    info!("{} {label}: test accuracy {:.4}", target_name(i), result.test_accuracy);
    Ok(result)
}

fn distill_inputs(i: usize, sources: &[SourceModelHandle]) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = ["labeled.fmat", "labeled_labels.csv", "unlabeled.fmat", "test.fmat", "test_labels.csv"]
        .iter()
        .map(|f| gen_rel(i).join(f))
        .collect();
    v.push(sources_rel(i).join("sources.json"));
    v.extend(sources.iter().map(|s| sources_rel(i).join(&s.id).join("model.json")));
    v
}

fn prepare_distill(root: &Path, i: usize) -> Result<(DataSplit, Vec<SourceModelHandle>, PseudoLabelCache)> {
    let split = load_split(root, i, DISTILL)?;
    let sources = load_sources(root, i, DISTILL)?;
    let unlabeled = split.unlabeled.as_ref().expect("loaded splits carry unlabeled data");
    let cache = distill::cache_pseudo_labels(&sources, unlabeled)?;
    Ok((split, sources, cache))
}

/// Distills the target with the weights written by `weigh` for `spec`.
pub fn cmd_distill(cfg: &PipelineConfig, spec: &WeightingSpec) -> Result<Vec<RunResult>> {
    let cfg = &with_scheme(cfg, spec);
    run_stage(DISTILL, || {
        let root = &cfg.output_dir;
        let mut results = Vec::new();
        for i in 0..cfg.num_targets {
            let weights_path = require(root, &weights_rel(i, spec).join("weights.csv"), DISTILL, WEIGH)?;
            let (ids, weights) = io::read_weights(&weights_path)?;
            let (split, sources, cache) = prepare_distill(root, i)?;
            if ids != cache.ids() {
                return Err(Error::Format {
                    path: weights_path,
                    reason: format!("weights list sources {ids:?} but the kept sources are {:?}", cache.ids()),
                });
            }
            let mut inputs = distill_inputs(i, &sources);
            inputs.push(weights_rel(i, spec).join("weights.csv"));
            let slug = scheme_slug(spec);
            results.push(run_distillation(cfg, i, &split, &cache, &spec.label(), &slug, weights, inputs)?);
        }
        Ok(results)
    })
}

/// Distills the target from each source alone.
pub fn cmd_distill_single(cfg: &PipelineConfig) -> Result<Vec<Vec<RunResult>>> {
    run_stage(DISTILL, || {
        let root = &cfg.output_dir;
        let mut all = Vec::new();
        for i in 0..cfg.num_targets {
            let (split, sources, cache) = prepare_distill(root, i)?;
            let s = sources.len();
            let mut per_target = Vec::with_capacity(s);
            for (j, source) in sources.iter().enumerate() {
                let weights = SourceWeights::one_hot(s, j, Scheme::Nearest);
                let slug = single_source_slug(&source.id);
                let inputs = distill_inputs(i, &sources);
                per_target.push(run_distillation(cfg, i, &split, &cache, &slug, &slug, weights, inputs)?);
            }
            all.push(per_target);
        }
        Ok(all)
    })
}

fn load_result(root: &Path, rel: &Path, needs: &'static str) -> Result<RunResult> {
    let path = require(root, &rel.join("result.json"), EVAL, needs)?;
    io::read_json(&path)
}

/// Everything `eval` gathers for one target.
struct TargetEval {
    name: String,
    source_ids: Vec<String>,
    overlaps: Vec<f64>,
    single: Vec<f64>,
    scores: BTreeMap<(Metric, RepresentationKind), Vec<f64>>,
    degenerate: BTreeMap<(Metric, RepresentationKind), Vec<bool>>,
}

fn gather(root: &Path, i: usize, inputs: &mut Vec<PathBuf>) -> Result<TargetEval> {
    let all = load_scores(root, i, EVAL)?;
    inputs.push(scores_rel(i).join("all_scores.csv"));
    let (target, tasks) = load_tasks(root, i, EVAL)?;
    inputs.push(gen_rel(i).join("tasks.json"));
    let (source_ids, _) = cell(&all, Metric::Parc, RepresentationKind::Feature);
    let mut overlaps = Vec::new();
    let mut single = Vec::new();
    for id in &source_ids {
        let spec = tasks
            .iter()
            .find(|(t, _)| t == id)
            .map(|(_, s)| s)
            .ok_or_else(|| Error::Config(format!("scored source {id} is not in tasks.json")))?;
        overlaps.push(taskgen::ground_truth_overlap(spec, &target));
        let rel = distill_rel(i, &single_source_slug(id));
        single.push(load_result(root, &rel, DISTILL_SINGLE)?.test_accuracy);
        inputs.push(rel.join("result.json"));
    }
    let mut scores = BTreeMap::new();
    let mut degenerate = BTreeMap::new();
    for metric in Metric::ALL {
        for kind in RepresentationKind::ALL {
            let rows: Vec<&SimilarityScore> =
                all.iter().filter(|s| s.metric == metric && s.representation == kind).collect();
            let ids: Vec<&String> = rows.iter().map(|s| &s.source_id).collect();
            if ids != source_ids.iter().collect::<Vec<_>>() {
                return Err(Error::Format {
                    path: root.join(scores_rel(i)).join("all_scores.csv"),
                    reason: format!("{metric}/{kind} rows do not list the same sources"),
                });
            }
            scores.insert((metric, kind), rows.iter().map(|s| s.value).collect());
            degenerate.insert((metric, kind), rows.iter().map(|s| s.degenerate).collect());
        }
    }
    Ok(TargetEval { name: target_name(i), source_ids, overlaps, single, scores, degenerate })
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn fig3_csv(targets: &[TargetEval]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "task",
        "source_id",
        "overlap",
        "accuracy",
        "metric",
        "representation",
        "score",
        "degenerate",
    ])?;
    for t in targets {
        for ((metric, kind), values) in &t.scores {
            let flags = &t.degenerate[&(*metric, *kind)];
            for (j, id) in t.source_ids.iter().enumerate() {
                w.write_record([
                    t.name.clone(),
                    id.clone(),
                    t.overlaps[j].to_string(),
                    t.single[j].to_string(),
                    metric.to_string(),
                    kind.to_string(),
                    values[j].to_string(),
                    flags[j].to_string(),
                ])?;
            }
        }
    }
    csv_text(w)
}

fn csv_text(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidArgument(e.to_string()))
}

/// Label of the expected-value rows of a random ranking.
pub const RANDOM_RANKING: &str = "random-selection";

fn topk_csv(targets: &[TargetEval]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["metric", "representation", "task", "k", "relative_accuracy"])?;
    let min_s = targets.iter().map(|t| t.single.len()).min().unwrap_or(0);
    let mut rows = |metric: String, kind: String, per_target: Vec<Vec<f64>>| -> Result<()> {
        for (t, values) in targets.iter().zip(&per_target) {
            for (k, v) in values.iter().enumerate() {
                w.write_record([metric.clone(), kind.clone(), t.name.clone(), (k + 1).to_string(), v.to_string()])?;
            }
        }
        for k in 0..min_s {
            let avg = mean(&per_target.iter().map(|v| v[k]).collect::<Vec<_>>());
            w.write_record([metric.clone(), kind.clone(), "mean".into(), (k + 1).to_string(), avg.to_string()])?;
        }
        Ok(())
    };
    for metric in Metric::ALL {
        for kind in RepresentationKind::ALL {
            let per_target = targets
                .iter()
                .map(|t| {
                    let eval = RankingEval::from_scores(&t.scores[&(metric, kind)], &t.single)?;
                    (1..=t.single.len()).map(|k| eval::topk_relative_accuracy(&eval, k)).collect()
                })
                .collect::<Result<Vec<Vec<f64>>>>()?;
            rows(metric.to_string(), kind.to_string(), per_target)?;
        }
    }
    let random = targets
        .iter()
        .map(|t| (1..=t.single.len()).map(|k| eval::random_topk_relative_accuracy(&t.single, k)).collect())
        .collect::<Result<Vec<Vec<f64>>>>()?;
    rows(RANDOM_RANKING.into(), "expected".into(), random)?;
    csv_text(w)
}

fn mra_csv(targets: &[TargetEval]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["metric", "representation", "task", "mra_all_k", "mra_k_below_s"])?;
    let mut rows = |metric: String, kind: String, values: Vec<(f64, f64)>| -> Result<()> {
        for (t, (all, below)) in targets.iter().zip(&values) {
            w.write_record([metric.clone(), kind.clone(), t.name.clone(), all.to_string(), below.to_string()])?;
        }
        let all = mean(&values.iter().map(|v| v.0).collect::<Vec<_>>());
        let below = mean(&values.iter().map(|v| v.1).collect::<Vec<_>>());
        w.write_record([metric, kind, "mean".into(), all.to_string(), below.to_string()])?;
        Ok(())
    };
    for metric in Metric::ALL {
        for kind in RepresentationKind::ALL {
            let values = targets
                .iter()
                .map(|t| {
                    let eval = RankingEval::from_scores(&t.scores[&(metric, kind)], &t.single)?;
                    Ok((eval::mean_relative_accuracy(&eval)?, below_s_or_one(&eval)?))
                })
                .collect::<Result<Vec<_>>>()?;
            rows(metric.to_string(), kind.to_string(), values)?;
        }
    }
    let random = targets
        .iter()
        .map(|t| {
            let below = if t.single.len() < 2 { 1.0 } else { eval::random_mean_relative_accuracy(&t.single, true)? };
            Ok((eval::random_mean_relative_accuracy(&t.single, false)?, below))
        })
        .collect::<Result<Vec<_>>>()?;
    rows(RANDOM_RANKING.into(), "expected".into(), random)?;
    csv_text(w)
}

/// With a single source there is no `k < S`; the ratio is then 1.
fn below_s_or_one(eval: &RankingEval) -> Result<f64> {
    if eval.len() < 2 {
        Ok(1.0)
    } else {
        eval::mean_relative_accuracy_below_s(eval)
    }
}

/// Builds the report tables from scores and distillation results of every
/// target. Scheme rows cover the configured schemes that were distilled for
/// all targets.
pub fn cmd_eval(cfg: &PipelineConfig) -> Result<()> {
    run_stage(EVAL, || {
        let root = &cfg.output_dir;
        let mut inputs = Vec::new();
        let targets = (0..cfg.num_targets).map(|i| gather(root, i, &mut inputs)).collect::<Result<Vec<_>>>()?;

        let columns: Vec<String> = targets.iter().map(|t| t.name.clone()).collect();
        let mut schemes: Vec<WeightingSpec> = cfg.schemes.clone();
        if !schemes.contains(&cfg.scheme) {
            schemes.push(cfg.scheme);
        }
        let mut results = BTreeMap::new();
        for spec in &schemes {
            let rels: Vec<PathBuf> = (0..cfg.num_targets).map(|i| distill_rel(i, &scheme_slug(spec))).collect();
            if !rels.iter().all(|r| root.join(r).join("result.json").exists()) {
                if cfg.schemes.contains(spec) {
                    warn!("scheme {spec} has not been distilled for every target; left out of {FIG1}");
                }
                continue;
            }
            let accs = rels
                .iter()
                .map(|r| load_result(root, r, DISTILL).map(|res| res.test_accuracy))
                .collect::<Result<Vec<_>>>()?;
            inputs.extend(rels.iter().map(|r| r.join("result.json")));
            results.insert(spec.label(), accs);
        }

        let reports = targets
            .iter()
            .map(|t| eval::correlation_report(&t.name, &t.scores, &t.single))
            .collect::<Result<Vec<CorrelationReport>>>()?;

        let mut dir = StageDir::create(root, PathBuf::from(REPORT_DIR))?;
        for p in inputs {
            dir.input(p);
        }
        if results.is_empty() {
            io::write_text(&dir.path(FIG1), "scheme,mean\n")?;
        } else {
            io::write_text(&dir.path(FIG1), &eval::scheme_comparison(&columns, &results)?.to_csv())?;
        }
        io::write_text(&dir.path(FIG3), &fig3_csv(&targets)?)?;
        io::write_text(&dir.path(TABLE2), &eval::correlation_csv(&reports))?;
        io::write_text(&dir.path(TABLE3), &topk_csv(&targets)?)?;
        io::write_text(&dir.path(TABLE8), &mra_csv(&targets)?)?;
        dir.finish(EVAL, cfg.seed, stage_config(cfg)?)?;
        Ok(())
    })
}

/// Runs every stage in order: gen, train-sources, score, weigh and distill
/// for each configured scheme, single-source distillation, eval.
pub fn cmd_pipeline(cfg: &PipelineConfig) -> Result<()> {
    cfg.validate()?;
    cmd_gen(cfg)?;
    cmd_train_sources(cfg)?;
    cmd_score(cfg)?;
    for spec in &cfg.schemes {
        cmd_weigh(cfg, spec)?;
        cmd_distill(cfg, spec)?;
    }
    cmd_distill_single(cfg)?;
    cmd_eval(cfg)?;
    io::write_json(&cfg.output_dir.join("config.json"), &cfg.manifest_value()?)
}
