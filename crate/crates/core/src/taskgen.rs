//! Synthetic task universe with known task relatedness.
//!
//! A universe is a set of well-separated Gaussian clusters. A task picks a
//! subset of clusters and partitions it into classes. Two tasks are related
//! to the degree their cluster subsets overlap (Jaccard index), which gives
//! a ground truth to check similarity metrics against.

use std::collections::BTreeSet;

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::accuracy_from_probs;
use crate::model::{init_mlp, Activation, HeadSpec, LossTerm, Mlp, TrainHyper};
use crate::numerics::Matrix;
use crate::seed;
use crate::similarity::{ProbeSet, RepresentationKind, RepresentationSource, SourceRepresentation};

/// Head name carried by every source model.
pub const SOURCE_HEAD: &str = "source";

const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;
const MAX_SPLIT_RETRIES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Universe {
    pub centroids: Vec<Vec<f64>>,
    pub sigma: f64,
    pub seed: u64,
}

impl Universe {
    pub fn num_clusters(&self) -> usize {
        self.centroids.len()
    }

    pub fn dim(&self) -> usize {
        self.centroids.first().map_or(0, Vec::len)
    }

    pub fn min_pairwise_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.centroids.len() {
            for j in (i + 1)..self.centroids.len() {
                best = best.min(euclidean(&self.centroids[i], &self.centroids[j]));
            }
        }
        best
    }

    pub fn centroid_matrix(&self) -> Matrix {
        Matrix::from_rows(&self.centroids).expect("universe has clusters")
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Centroids uniform in `[-1, 1]^dim`, at least `4σ` apart (by rejection).
pub fn build_universe(seed: u64, num_clusters: usize, dim: usize, sigma: f64) -> Result<Universe> {
    if num_clusters < 2 || dim < 2 || !(sigma > 0.0) {
        return Err(Error::InvalidArgument(
            "universe needs num_clusters >= 2, dim >= 2, sigma > 0".into(),
        ));
    }
    let min_dist = 4.0 * sigma;
    let mut rng = seed::rng(seed::derive(seed, &["universe"]));
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(num_clusters);
    let mut attempts = 0;
    while centroids.len() < num_clusters {
        if attempts == MAX_PLACEMENT_ATTEMPTS {
            return Err(Error::UniverseTooCrowded { clusters: num_clusters, min_dist, attempts });
        }
        attempts += 1;
        let c: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
        if centroids.iter().all(|o| euclidean(o, &c) >= min_dist) {
            centroids.push(c);
        }
    }
    Ok(Universe { centroids, sigma, seed })
}

/// A classification task over a subset of universe clusters.
///
/// Stored canonically (cells sorted, cells ordered by smallest member), so
/// structural equality is task equality.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    classes: Vec<Vec<usize>>,
}

impl TaskSpec {
    /// `classes[c]` lists the clusters that make up class `c`.
    pub fn new(mut classes: Vec<Vec<usize>>) -> Result<Self> {
        if classes.len() < 2 {
            return Err(Error::InvalidArgument("a task needs at least 2 classes".into()));
        }
        let mut seen = BTreeSet::new();
        for cell in &mut classes {
            if cell.is_empty() {
                return Err(Error::InvalidArgument("empty class in partition".into()));
            }
            cell.sort_unstable();
            for &c in cell.iter() {
                if !seen.insert(c) {
                    return Err(Error::InvalidArgument(format!("cluster {c} in two classes")));
                }
            }
        }
        classes.sort_by_key(|cell| cell[0]);
        Ok(Self { classes })
    }

    pub fn validate_against(&self, universe: &Universe) -> Result<()> {
        match self.clusters().last() {
            Some(&c) if c >= universe.num_clusters() => Err(Error::InvalidArgument(format!(
                "cluster {c} outside universe of {}",
                universe.num_clusters()
            ))),
            _ => Ok(()),
        }
    }

    pub fn classes(&self) -> &[Vec<usize>] {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Sorted cluster subset.
    pub fn clusters(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.classes.iter().flatten().copied().collect();
        all.sort_unstable();
        all
    }

    pub fn class_of(&self, cluster: usize) -> Option<usize> {
        self.classes.iter().position(|cell| cell.contains(&cluster))
    }
}

/// Jaccard index of two tasks' cluster subsets.
pub fn ground_truth_overlap(a: &TaskSpec, b: &TaskSpec) -> f64 {
    let sa: BTreeSet<usize> = a.clusters().into_iter().collect();
    let sb: BTreeSet<usize> = b.clusters().into_iter().collect();
    let union = sa.union(&sb).count();
    if union == 0 {
        return 0.0;
    }
    sa.intersection(&sb).count() as f64 / union as f64
}

/// Inputs with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn onehot(&self, num_classes: usize) -> Result<Matrix> {
        Matrix::one_hot(&self.labels, num_classes)
    }
}

/// Target-task data: labeled, unlabeled, probe (a subset of labeled) and test.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSplit {
    pub num_classes: usize,
    pub labeled: LabeledSet,
    pub unlabeled: Option<Matrix>,
    pub probe: ProbeSet,
    /// Positions of the probe examples inside `labeled`.
    pub probe_indices: Vec<usize>,
    pub test: LabeledSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSizes {
    /// Labeled + unlabeled pool size.
    pub n_total: usize,
    pub labeled_fraction: f64,
    /// Defaults to `min(|labeled|, 500)`.
    #[serde(default)]
    pub probe_size: Option<usize>,
    pub n_test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        SplitSizes { n_total: 1000, labeled_fraction: 0.2, probe_size: None, n_test: 500 }
    }
}

impl SplitSizes {
    pub fn labeled_count(&self) -> usize {
        ((self.n_total as f64) * self.labeled_fraction).round() as usize
    }
}

fn sample_points(
    universe: &Universe,
    task: &TaskSpec,
    n: usize,
    rng: &mut seed::Rng,
) -> (Vec<f64>, Vec<usize>) {
    let clusters = task.clusters();
    let dim = universe.dim();
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    // Balanced cluster counts (leftovers go to randomly chosen clusters),
    // visited in shuffled order.
    let mut extra: Vec<usize> = (0..clusters.len()).collect();
    extra.shuffle(rng);
    extra.truncate(n % clusters.len());
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for (i, &c) in clusters.iter().enumerate() {
        let count = n / clusters.len() + usize::from(extra.contains(&i));
        order.extend(std::iter::repeat_n(c, count));
    }
    order.shuffle(rng);
    for c in order {
        let centroid = &universe.centroids[c];
        for &mu in centroid {
            let z: f64 = StandardNormal.sample(rng);
            data.push(mu + universe.sigma * z);
        }
        labels.push(task.class_of(c).expect("cluster belongs to task"));
    }
    (data, labels)
}

fn all_classes_present(labels: &[usize], num_classes: usize) -> bool {
    let mut seen = vec![false; num_classes];
    labels.iter().for_each(|&c| seen[c] = true);
    seen.into_iter().all(|s| s)
}

/// Round-robin over classes (each class list shuffled), then sorted.
fn stratified_subset(labels: &[usize], num_classes: usize, size: usize, rng: &mut seed::Rng) -> Vec<usize> {
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &c) in labels.iter().enumerate() {
        per_class[c].push(i);
    }
    for list in &mut per_class {
        list.shuffle(rng);
    }
    let mut picked = Vec::with_capacity(size);
    let mut depth = 0;
    while picked.len() < size {
        for list in &per_class {
            if picked.len() == size {
                break;
            }
            if let Some(&i) = list.get(depth) {
                picked.push(i);
            }
        }
        depth += 1;
    }
    picked.sort_unstable();
    picked
}

/// Draws labeled, unlabeled and test sets from the task distribution, each
/// with balanced cluster counts. Retries when a class is missing from the
/// labeled or test part.
pub fn sample_split(universe: &Universe, task: &TaskSpec, sizes: &SplitSizes, seed: u64) -> Result<DataSplit> {
    task.validate_against(universe)?;
    if !(sizes.labeled_fraction > 0.0 && sizes.labeled_fraction <= 1.0) {
        return Err(Error::InvalidArgument("labeled_fraction must lie in (0, 1]".into()));
    }
    let n_labeled = sizes.labeled_count();
    if n_labeled < 2 || sizes.n_test == 0 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 labeled and 1 test example (got {n_labeled} labeled)"
        )));
    }
    let probe_size = sizes.probe_size.unwrap_or(n_labeled.min(500));
    if probe_size > n_labeled {
        return Err(Error::InvalidArgument(format!(
            "probe size {probe_size} exceeds labeled count {n_labeled}"
        )));
    }
    if probe_size < 2 {
        return Err(Error::InvalidArgument("probe size must be at least 2".into()));
    }
    let k = task.num_classes();
    let dim = universe.dim();
    for attempt in 0..MAX_SPLIT_RETRIES {
        let mut rng = seed::rng(seed::derive(seed, &["split", &attempt.to_string()]));
        let (lab, lab_labels) = sample_points(universe, task, n_labeled, &mut rng);
        let (unlab, _) = sample_points(universe, task, sizes.n_total - n_labeled, &mut rng);
        let (test, test_labels) = sample_points(universe, task, sizes.n_test, &mut rng);
        if !all_classes_present(&lab_labels, k) || !all_classes_present(&test_labels, k) {
            continue;
        }
        let unlabeled = if n_labeled < sizes.n_total {
            Some(Matrix::new(sizes.n_total - n_labeled, dim, unlab)?)
        } else {
            None
        };
        let labeled = LabeledSet { inputs: Matrix::new(n_labeled, dim, lab)?, labels: lab_labels };
        let probe_indices = stratified_subset(&labeled.labels, k, probe_size, &mut rng);
        let probe = ProbeSet::new(
            labeled.inputs.select_rows(&probe_indices),
            probe_indices.iter().map(|&i| labeled.labels[i]).collect(),
            k,
        )?;
        return Ok(DataSplit {
            num_classes: k,
            labeled,
            unlabeled,
            probe,
            probe_indices,
            test: LabeledSet { inputs: Matrix::new(sizes.n_test, dim, test)?, labels: test_labels },
        });
    }
    Err(Error::Sampling(format!("a class stayed empty after {MAX_SPLIT_RETRIES} attempts")))
}

/// A frozen source model and the task it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceModelHandle {
    pub id: String,
    pub task: TaskSpec,
    pub model: Mlp,
}

impl SourceModelHandle {
    pub fn new(id: impl Into<String>, task: TaskSpec, model: Mlp) -> Result<Self> {
        let id = id.into();
        match model.head_classes(SOURCE_HEAD) {
            Some(c) if c == task.num_classes() => Ok(Self { id, task, model }),
            other => Err(Error::Source {
                source_id: id,
                reason: format!(
                    "head `{SOURCE_HEAD}` has {other:?} classes, task has {}",
                    task.num_classes()
                ),
            }),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.task.num_classes()
    }

    pub fn pseudo_labels(&self, x: &Matrix) -> Result<Matrix> {
        self.model.predict(x, SOURCE_HEAD)
    }
}

impl RepresentationSource for SourceModelHandle {
    fn id(&self) -> &str {
        &self.id
    }

    fn represent(&self, inputs: &Matrix, kind: RepresentationKind) -> Result<SourceRepresentation> {
        let values = match kind {
            RepresentationKind::Feature => self.model.features(inputs)?,
            RepresentationKind::Pseudo => self.pseudo_labels(inputs)?,
        };
        SourceRepresentation::new(kind, values)
    }
}

/// How sources are trained on their own tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceTraining {
    pub hyper: TrainHyper,
    /// Hidden layer widths, cycled over sources for architectural variety.
    pub architectures: Vec<Vec<usize>>,
    pub activation: Activation,
    pub n_train: usize,
    pub n_test: usize,
    /// Sources below this test accuracy are excluded.
    pub accuracy_floor: f64,
    /// Training stops early once test accuracy reaches this value.
    pub stop_accuracy: f64,
}

impl Default for SourceTraining {
    fn default() -> Self {
        SourceTraining {
            hyper: TrainHyper { learning_rate: 0.1, weight_decay: 1e-4, batch_size: 32, epochs: 60, seed: 0 },
            architectures: vec![vec![8], vec![16], vec![32], vec![64]],
            activation: Activation::Tanh,
            n_train: 600,
            n_test: 300,
            accuracy_floor: 0.9,
            stop_accuracy: 0.9,
        }
    }
}

/// Outcome of training one source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceTrainingReport {
    pub id: String,
    pub epochs_run: usize,
    pub test_accuracy: f64,
    pub accepted: bool,
}

pub fn source_id(index: usize) -> String {
    format!("source-{index}")
}

/// Trains one supervised model per task spec until it reaches the stopping
/// accuracy on its own test data or runs out of epochs. Sources below the floor
/// are dropped with a warning.
pub fn train_source_models(
    universe: &Universe,
    specs: &[TaskSpec],
    training: &SourceTraining,
    seed: u64,
) -> Result<(Vec<SourceModelHandle>, Vec<SourceTrainingReport>)> {
    training.hyper.validate()?;
    if training.architectures.is_empty() {
        return Err(Error::Config("source architectures must not be empty".into()));
    }
    let mut handles = Vec::new();
    let mut reports = Vec::new();
    for (i, spec) in specs.iter().enumerate() {
        let id = source_id(i);
        let sizes = SplitSizes {
            n_total: training.n_train,
            labeled_fraction: 1.0,
            probe_size: Some(2),
            n_test: training.n_test,
        };
        let data = sample_split(universe, spec, &sizes, seed::derive(seed, &["source-data", &id]))?;
        let hidden = &training.architectures[i % training.architectures.len()];
        let mut model = init_mlp(
            universe.dim(),
            hidden,
            training.activation,
            &[HeadSpec::new(SOURCE_HEAD, spec.num_classes())],
            seed::derive(seed, &["source-init", &id]),
        )?;
        let targets = data.labeled.onehot(spec.num_classes())?;
        let mut rng = seed::rng(seed::derive(seed, &["source-batches", &id]));
        let mut order: Vec<usize> = (0..data.labeled.len()).collect();
        let mut acc = 0.0;
        let mut epochs_run = 0;
        for _ in 0..training.hyper.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(training.hyper.batch_size) {
                let x = data.labeled.inputs.select_rows(chunk);
                let y = targets.select_rows(chunk);
                let out = model.backward(
                    &[&x],
                    &[LossTerm { head: SOURCE_HEAD, batch: 0, targets: &y, coeff: 1.0 }],
                )?;
                model.sgd_step(&out.grads, &training.hyper)?;
            }
            epochs_run += 1;
            acc = accuracy_from_probs(&model.predict(&data.test.inputs, SOURCE_HEAD)?, &data.test.labels)?;
            if acc >= training.stop_accuracy {
                break;
            }
        }
        let accepted = acc >= training.accuracy_floor;
        if accepted {
            handles.push(SourceModelHandle::new(id.clone(), spec.clone(), model)?);
        } else {
            warn!("{id} reached only {acc:.3} test accuracy; excluded");
        }
        reports.push(SourceTrainingReport { id, epochs_run, test_accuracy: acc, accepted });
    }
    Ok((handles, reports))
}

/// Drops sources trained on exactly the target task.
pub fn exclude_target_leakage(sources: Vec<SourceModelHandle>, target: &TaskSpec) -> Vec<SourceModelHandle> {
    sources.into_iter().filter(|s| &s.task != target).collect()
}

/// How source tasks partition their clusters into classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PartitionStyle {
    /// One class per cluster.
    Singleton,
    /// Random partition into (at most) this many non-empty classes.
    Random { classes: usize },
}

/// Recipe for a target task and a family of sources at chosen overlaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskDesign {
    pub target_clusters: usize,
    pub target_classes: usize,
    /// Desired Jaccard overlap of each source with the target.
    pub source_overlaps: Vec<f64>,
    pub source_partition: PartitionStyle,
}

impl Default for TaskDesign {
    fn default() -> Self {
        TaskDesign {
            target_clusters: 4,
            target_classes: 2,
            source_overlaps: vec![0.0, 0.25, 0.5, 0.75, 1.0, 0.5],
            source_partition: PartitionStyle::Singleton,
        }
    }
}

fn random_partition(clusters: &[usize], classes: usize, rng: &mut seed::Rng) -> Vec<Vec<usize>> {
    let mut shuffled = clusters.to_vec();
    shuffled.shuffle(rng);
    let c = classes.clamp(2, shuffled.len());
    let mut cells: Vec<Vec<usize>> = vec![Vec::new(); c];
    for (i, &cl) in shuffled.iter().enumerate() {
        if i < c {
            cells[i].push(cl);
        } else {
            cells[rng.random_range(0..c)].push(cl);
        }
    }
    cells
}

/// Shared/extra cluster counts whose Jaccard overlap with a target of
/// `target_size` clusters is closest to `overlap`.
fn overlap_counts(target_size: usize, outside: usize, overlap: f64) -> (usize, usize) {
    let mut best = (0, 2.min(outside), f64::INFINITY);
    for shared in 0..=target_size {
        for extra in 0..=outside {
            if shared + extra < 2 {
                continue;
            }
            let j = shared as f64 / (target_size + extra) as f64;
            let err = (j - overlap).abs();
            let size_gap = (shared + extra).abs_diff(target_size);
            let best_gap = (best.0 + best.1).abs_diff(target_size);
            if err < best.2 - 1e-12 || ((err - best.2).abs() <= 1e-12 && size_gap < best_gap) {
                best = (shared, extra, err);
            }
        }
    }
    (best.0, best.1)
}

/// Draws a target task and one source task per requested overlap.
pub fn design_tasks(universe: &Universe, design: &TaskDesign, seed: u64) -> Result<(TaskSpec, Vec<TaskSpec>)> {
    let m = universe.num_clusters();
    if design.target_clusters < 2 || design.target_clusters > m {
        return Err(Error::Config(format!("target_clusters must lie in 2..={m}")));
    }
    if design.target_classes < 2 || design.target_classes > design.target_clusters {
        return Err(Error::Config("target_classes must lie in 2..=target_clusters".into()));
    }
    let mut rng = seed::rng(seed::derive(seed, &["tasks"]));
    let mut all: Vec<usize> = (0..m).collect();
    all.shuffle(&mut rng);
    let target_clusters: Vec<usize> = all[..design.target_clusters].to_vec();
    let outside: Vec<usize> = all[design.target_clusters..].to_vec();
    let target = TaskSpec::new(random_partition(&target_clusters, design.target_classes, &mut rng))?;

    let mut sources = Vec::with_capacity(design.source_overlaps.len());
    for &overlap in &design.source_overlaps {
        if !(0.0..=1.0).contains(&overlap) {
            return Err(Error::Config(format!("overlap {overlap} outside [0, 1]")));
        }
        let (shared, extra) = overlap_counts(target_clusters.len(), outside.len(), overlap);
        let mut t = target_clusters.clone();
        t.shuffle(&mut rng);
        let mut o = outside.clone();
        o.shuffle(&mut rng);
        let mut subset: Vec<usize> = t[..shared].iter().chain(&o[..extra]).copied().collect();
        subset.sort_unstable();
        let cells = match design.source_partition {
            PartitionStyle::Singleton => subset.iter().map(|&c| vec![c]).collect(),
            PartitionStyle::Random { classes } => random_partition(&subset, classes, &mut rng),
        };
        sources.push(TaskSpec::new(cells)?);
    }
    Ok((target, sources))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn universe_is_deterministic_and_separated() {
        let u = build_universe(3, 10, 16, 0.25).unwrap();
        assert_eq!(u, build_universe(3, 10, 16, 0.25).unwrap());
        assert!(u.min_pairwise_distance() >= 1.0);
        let small = build_universe(0, 2, 2, 0.1).unwrap();
        assert_eq!(small.centroid_matrix().shape(), (2, 2));
    }

    #[test]
    fn crowded_universe_fails() {
        let err = build_universe(0, 50, 2, 0.5).unwrap_err();
        assert!(matches!(err, Error::UniverseTooCrowded { .. }));
        assert!(build_universe(0, 1, 2, 0.1).is_err());
    }

    #[test]
    fn task_spec_is_canonical() {
        let a = TaskSpec::new(vec![vec![5, 1], vec![0]]).unwrap();
        let b = TaskSpec::new(vec![vec![0], vec![1, 5]]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.clusters(), vec![0, 1, 5]);
        assert_eq!(a.class_of(5), Some(1));
        assert!(TaskSpec::new(vec![vec![1], vec![1]]).is_err());
        assert!(TaskSpec::new(vec![vec![1]]).is_err());
        assert!(TaskSpec::new(vec![vec![1], vec![]]).is_err());
    }

    #[test]
    fn overlap_examples() {
        let a = TaskSpec::new(vec![vec![0], vec![1]]).unwrap();
        assert_eq!(ground_truth_overlap(&a, &a), 1.0);
        let b = TaskSpec::new(vec![vec![2], vec![3]]).unwrap();
        assert_eq!(ground_truth_overlap(&a, &b), 0.0);
        let c = TaskSpec::new(vec![vec![1], vec![2]]).unwrap();
        assert!((ground_truth_overlap(&a, &c) - 1.0 / 3.0).abs() < 1e-15);
    }

    fn split(fraction: f64) -> DataSplit {
        let u = build_universe(1, 6, 4, 0.2).unwrap();
        let task = TaskSpec::new(vec![vec![0, 2], vec![1], vec![4]]).unwrap();
        let sizes = SplitSizes { n_total: 1000, labeled_fraction: fraction, probe_size: None, n_test: 300 };
        sample_split(&u, &task, &sizes, 9).unwrap()
    }

    #[test]
    fn split_sizes_follow_labeled_fraction() {
        let s = split(0.2);
        assert_eq!(s.labeled.len(), 200);
        assert_eq!(s.unlabeled.as_ref().unwrap().rows(), 800);
        let s = split(0.05);
        assert_eq!(s.labeled.len(), 50);
        assert_eq!(s.unlabeled.as_ref().unwrap().rows(), 950);
        assert_eq!(s.probe.len(), 50);
    }

    #[test]
    fn split_labels_valid_and_probe_is_subset() {
        let s = split(0.2);
        assert!(s.labeled.labels.iter().chain(&s.test.labels).all(|&c| c < 3));
        for (k, &i) in s.probe_indices.iter().enumerate() {
            assert_eq!(s.probe.inputs().row(k), s.labeled.inputs.row(i));
            assert_eq!(s.probe.labels()[k], s.labeled.labels[i]);
        }
        for row in s.probe.labels_onehot().row_iter() {
            assert_eq!(row.iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn probe_is_stratified() {
        let u = build_universe(1, 6, 4, 0.2).unwrap();
        let task = TaskSpec::new(vec![vec![0, 2, 3], vec![1]]).unwrap();
        let sizes = SplitSizes { n_total: 400, labeled_fraction: 0.5, probe_size: Some(20), n_test: 10 };
        let s = sample_split(&u, &task, &sizes, 2).unwrap();
        let ones = s.probe.labels().iter().filter(|&&c| c == 1).count();
        assert_eq!(ones, 10);
    }

    #[test]
    fn split_rejects_bad_sizes() {
        let u = build_universe(1, 6, 4, 0.2).unwrap();
        let task = TaskSpec::new(vec![vec![0], vec![1]]).unwrap();
        let sizes = SplitSizes { n_total: 100, labeled_fraction: 0.2, probe_size: Some(21), n_test: 10 };
        assert!(sample_split(&u, &task, &sizes, 0).is_err());
        let sizes = SplitSizes { n_total: 100, labeled_fraction: 0.0, probe_size: None, n_test: 10 };
        assert!(sample_split(&u, &task, &sizes, 0).is_err());
        let outside = TaskSpec::new(vec![vec![0], vec![9]]).unwrap();
        let sizes = SplitSizes { n_total: 100, labeled_fraction: 0.2, probe_size: None, n_test: 10 };
        assert!(sample_split(&u, &outside, &sizes, 0).is_err());
    }

    #[test]
    fn leakage_exclusion() {
        let target = TaskSpec::new(vec![vec![0], vec![1]]).unwrap();
        let model = init_mlp(2, &[], Activation::Tanh, &[HeadSpec::new(SOURCE_HEAD, 2)], 0).unwrap();
        let same = SourceModelHandle::new("a", target.clone(), model.clone()).unwrap();
        let overlapping =
            SourceModelHandle::new("b", TaskSpec::new(vec![vec![0], vec![2]]).unwrap(), model.clone()).unwrap();
        let kept = exclude_target_leakage(vec![same.clone(), overlapping], &target);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].id, "b");
        assert!(exclude_target_leakage(vec![same], &target).is_empty());
    }

    #[test]
    fn overlap_counts_hit_requested_levels() {
        assert_eq!(overlap_counts(4, 6, 0.0), (0, 4));
        assert_eq!(overlap_counts(4, 6, 1.0), (4, 0));
        let (s, e) = overlap_counts(4, 6, 0.5);
        assert!((s as f64 / (4 + e) as f64 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn designed_sources_have_requested_overlap() {
        let u = build_universe(0, 10, 16, 0.25).unwrap();
        let design = TaskDesign::default();
        let (target, sources) = design_tasks(&u, &design, 4).unwrap();
        assert_eq!(target.clusters().len(), 4);
        assert_eq!(target.num_classes(), 2);
        for (s, &want) in sources.iter().zip(&design.source_overlaps) {
            let got = ground_truth_overlap(s, &target);
            assert!((got - want).abs() < 0.1, "wanted {want}, got {got}");
        }
    }
}
