//! Weighted multi-source distillation.
//!
//! The target model minimizes
//! `λ · CE(target head, labels) + (1 - λ) · Σ_s α_s · CE(aux head s, source s outputs)`
//! where the labeled term runs on labeled data and every distillation term
//! runs on unlabeled data. Each source with `α_s > 0` gets its own auxiliary
//! head on the target features; these heads are dropped after training.
//! Source outputs on the unlabeled set are computed once up front.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::test_accuracy;
use crate::model::{cross_entropy, init_mlp, Activation, HeadSpec, LossTerm, Mlp, TrainHyper, TARGET_HEAD};
use crate::numerics::Matrix;
use crate::seed;
use crate::similarity::{RepresentationKind, RepresentationSource};
use crate::taskgen::DataSplit;
use crate::weighting::SourceWeights;

/// Name of the auxiliary head that distills source `id`.
pub fn aux_head(id: &str) -> String {
    format!("aux:{id}")
}

/// Source output probabilities over the unlabeled set, one matrix per
/// source, in source order.
#[derive(Debug)]
pub struct PseudoLabelCache {
    ids: Vec<String>,
    labels: Vec<Matrix>,
    reads: Vec<AtomicUsize>,
}

impl PseudoLabelCache {
    pub fn new(entries: Vec<(String, Matrix)>) -> Result<Self> {
        let rows = entries.first().map(|e| e.1.rows());
        for (id, m) in &entries {
            if Some(m.rows()) != rows {
                return Err(Error::Source { source_id: id.clone(), reason: "row count differs from other sources".into() });
            }
            for row in m.row_iter() {
                let sum: f64 = row.iter().sum();
                if row.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > 1e-6 {
                    return Err(Error::Source { source_id: id.clone(), reason: "pseudo-labels are not distributions".into() });
                }
            }
        }
        let reads = entries.iter().map(|_| AtomicUsize::new(0)).collect();
        let (ids, labels) = entries.into_iter().unzip();
        Ok(Self { ids, labels, reads })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn num_classes(&self, source: usize) -> usize {
        self.labels[source].cols()
    }

    pub fn rows(&self) -> usize {
        self.labels.first().map_or(0, Matrix::rows)
    }

    /// Full matrix for a source, without touching the read counter.
    pub fn matrix(&self, source: usize) -> &Matrix {
        &self.labels[source]
    }

    /// Pseudo-label rows for one batch; counted in [`Self::reads`].
    pub fn batch(&self, source: usize, rows: &[usize]) -> Matrix {
        self.reads[source].fetch_add(1, Ordering::Relaxed);
        self.labels[source].select_rows(rows)
    }

    /// How many batches have been read per source.
    pub fn reads(&self) -> Vec<usize> {
        self.reads.iter().map(|r| r.load(Ordering::Relaxed)).collect()
    }
}

/// One forward pass of every source over the unlabeled inputs.
pub fn cache_pseudo_labels<S: RepresentationSource>(sources: &[S], unlabeled: &Matrix) -> Result<PseudoLabelCache> {
    let mut entries = Vec::with_capacity(sources.len());
    for s in sources {
        let rep = s.represent(unlabeled, RepresentationKind::Pseudo).map_err(|e| Error::Source {
            source_id: s.id().to_string(),
            reason: e.to_string(),
        })?;
        entries.push((s.id().to_string(), rep.values().clone()));
    }
    PseudoLabelCache::new(entries)
}

/// Hidden layout of the target model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TargetArch {
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
}

impl Default for TargetArch {
    fn default() -> Self {
        TargetArch { hidden_dims: vec![16], activation: Activation::Tanh }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillConfig {
    pub lambda: f64,
    /// Aligned with the pseudo-label cache's source order.
    pub weights: SourceWeights,
    pub hyper: TrainHyper,
    pub arch: TargetArch,
    /// Labeled : unlabeled examples per optimization step.
    pub batch_ratio: (usize, usize),
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidArgument(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if self.batch_ratio.0 == 0 || self.batch_ratio.1 == 0 {
            return Err(Error::InvalidArgument("batch ratio counts must be >= 1".into()));
        }
        self.hyper.validate()
    }

    /// Labeled and unlabeled sub-batch sizes for one step.
    pub fn sub_batches(&self) -> (usize, usize) {
        let (l, u) = self.batch_ratio;
        let bs = self.hyper.batch_size.max(2);
        let lb = ((bs * l) / (l + u)).clamp(1, bs - 1);
        (lb, bs - lb)
    }
}

/// Loss components of one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub total: f64,
    pub labeled: f64,
    /// Distillation CE per active source, in cache order.
    pub distill: Vec<(usize, f64)>,
}

/// Weighted multi-source objective and its gradient on one labeled batch
/// and one unlabeled batch (given as row indices into the cache).
pub fn multi_distill_loss(
    target: &Mlp,
    labeled: (&Matrix, &Matrix),
    unlabeled: Option<(&Matrix, &[usize])>,
    cache: &PseudoLabelCache,
    lambda: f64,
    weights: &SourceWeights,
) -> Result<(StepLosses, crate::model::Gradients)> {
    if weights.len() != cache.len() {
        return Err(Error::LengthMismatch { left: weights.len(), right: cache.len() });
    }
    let active: Vec<usize> = if lambda < 1.0 { weights.active().collect() } else { Vec::new() };
    let heads: Vec<String> = active.iter().map(|&s| aux_head(&cache.ids()[s])).collect();
    for h in &heads {
        if !target.has_head(h) {
            return Err(Error::MissingHead(h.clone()));
        }
    }
    let pseudo: Vec<Matrix> = match (active.is_empty(), unlabeled) {
        (true, _) => Vec::new(),
        (false, Some((_, rows))) => active.iter().map(|&s| cache.batch(s, rows)).collect(),
        (false, None) => return Err(Error::InvalidArgument("distillation needs an unlabeled batch".into())),
    };
    let mut batches = vec![labeled.0];
    let mut terms = vec![LossTerm { head: TARGET_HEAD, batch: 0, targets: labeled.1, coeff: lambda }];
    if let (false, Some((x_u, _))) = (active.is_empty(), unlabeled) {
        batches.push(x_u);
        for ((&s, head), targets) in active.iter().zip(&heads).zip(&pseudo) {
            terms.push(LossTerm { head, batch: 1, targets, coeff: (1.0 - lambda) * weights.alphas()[s] });
        }
    }
    let out = target.backward(&batches, &terms)?;
    let labeled_ce = out.term_losses[0];
    let distill: Vec<(usize, f64)> = active.iter().copied().zip(out.term_losses[1..].iter().copied()).collect();
    let weighted: f64 = distill.iter().fold(0.0, |acc, &(s, ce)| acc + weights.alphas()[s] * ce);
    let total = lambda * labeled_ce + (1.0 - lambda) * weighted;
    Ok((StepLosses { total, labeled: labeled_ce, distill }, out.grads))
}

/// Single-source objective `λ · CE_labeled + (1 - λ) · CE_distill`, computed
/// directly from forward passes.
pub fn single_source_loss(
    target: &Mlp,
    labeled: (&Matrix, &Matrix),
    unlabeled: &Matrix,
    pseudo: &Matrix,
    source_id: &str,
    lambda: f64,
) -> Result<f64> {
    let lab = cross_entropy(&target.predict(labeled.0, TARGET_HEAD)?, labeled.1)?;
    let dis = cross_entropy(&target.predict(unlabeled, &aux_head(source_id))?, pseudo)?;
    Ok(lambda * lab + (1.0 - lambda) * dis)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_labeled: f64,
    /// Mean distillation CE per active source, aligned with `History::sources`.
    pub loss_distill: Vec<f64>,
    pub test_acc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    /// Ids of the sources that were distilled.
    pub sources: Vec<String>,
    pub epochs: Vec<EpochRecord>,
    pub steps: Vec<StepLosses>,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss_total,loss_labeled");
        for s in &self.sources {
            out.push_str(",loss_distill_");
            out.push_str(s);
        }
        out.push_str(",test_acc\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{},{}", e.epoch, e.loss_total, e.loss_labeled));
            for d in &e.loss_distill {
                out.push_str(&format!(",{d}"));
            }
            match e.test_acc {
                Some(a) => out.push_str(&format!(",{a}\n")),
                None => out.push_str(",\n"),
            }
        }
        out
    }

    pub fn final_test_acc(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.test_acc)
    }
}

fn init_target(split: &DataSplit, arch: &TargetArch, seed: u64) -> Result<Mlp> {
    init_mlp(
        split.labeled.inputs.cols(),
        &arch.hidden_dims,
        arch.activation,
        &[HeadSpec::new(TARGET_HEAD, split.num_classes)],
        seed::derive(seed, &["target-init"]),
    )
}

/// Endless reshuffled walk over `0..n`.
struct IndexStream {
    order: Vec<usize>,
    pos: usize,
}

impl IndexStream {
    fn new(n: usize) -> Self {
        Self { order: (0..n).collect(), pos: n }
    }

    fn take(&mut self, k: usize, rng: &mut seed::Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            let end = (self.pos + k - out.len()).min(self.order.len());
            out.extend_from_slice(&self.order[self.pos..end]);
            self.pos = end;
        }
        out
    }
}

fn epoch_record(epoch: usize, steps: &[StepLosses], n_sources: usize, test_acc: Option<f64>) -> EpochRecord {
    let n = steps.len().max(1) as f64;
    let mut distill = vec![0.0; n_sources];
    for s in steps {
        for (slot, (_, ce)) in distill.iter_mut().zip(&s.distill) {
            *slot += ce;
        }
    }
    EpochRecord {
        epoch,
        loss_total: steps.iter().map(|s| s.total).sum::<f64>() / n,
        loss_labeled: steps.iter().map(|s| s.labeled).sum::<f64>() / n,
        loss_distill: distill.into_iter().map(|d| d / n).collect(),
        test_acc,
    }
}

/// Trains a target model on `split` with the weighted distillation objective.
///
/// With `λ < 1` an epoch is one pass over the unlabeled set, each step
/// pairing an unlabeled sub-batch with a labeled sub-batch drawn from an
/// endlessly reshuffled labeled stream. With `λ = 1` the unlabeled data is
/// never touched and an epoch is one pass over the labeled set. Auxiliary
/// heads are stripped from the returned model.
pub fn train_target(split: &DataSplit, cache: &PseudoLabelCache, cfg: &DistillConfig) -> Result<(Mlp, History)> {
    cfg.validate()?;
    if split.labeled.is_empty() {
        return Err(Error::InvalidArgument("empty labeled set".into()));
    }
    if cfg.lambda >= 1.0 {
        return train_baseline_supervised(split, &cfg.hyper, &cfg.arch);
    }
    if cfg.weights.len() != cache.len() {
        return Err(Error::LengthMismatch { left: cfg.weights.len(), right: cache.len() });
    }
    let seed = cfg.hyper.seed;
    let mut model = init_target(split, &cfg.arch, seed)?;
    let y_all = split.labeled.onehot(split.num_classes)?;
    let mut rng = seed::rng(seed::derive(seed, &["batches"]));
    let mut history = History::default();

    let unlabeled = split
        .unlabeled
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("empty unlabeled set with lambda < 1".into()))?;
    if unlabeled.rows() != cache.rows() {
        return Err(Error::LengthMismatch { left: unlabeled.rows(), right: cache.rows() });
    }
    let active: Vec<usize> = cfg.weights.active().collect();
    for &s in &active {
        let id = &cache.ids()[s];
        model.add_head(&aux_head(id), cache.num_classes(s), seed::derive(seed, &["aux", id]))?;
    }
    history.sources = active.iter().map(|&s| cache.ids()[s].clone()).collect();
    let (lb, ub) = cfg.sub_batches();
    let mut labeled_stream = IndexStream::new(split.labeled.len());
    for epoch in 0..cfg.hyper.epochs {
        let mut order: Vec<usize> = (0..unlabeled.rows()).collect();
        order.shuffle(&mut rng);
        let mut steps = Vec::new();
        for chunk in order.chunks(ub) {
            let l_idx = labeled_stream.take(lb, &mut rng);
            let x_l = split.labeled.inputs.select_rows(&l_idx);
            let y_l = y_all.select_rows(&l_idx);
            let x_u = unlabeled.select_rows(chunk);
            let (losses, grads) =
                multi_distill_loss(&model, (&x_l, &y_l), Some((&x_u, chunk)), cache, cfg.lambda, &cfg.weights)?;
            model.sgd_step(&grads, &cfg.hyper)?;
            steps.push(losses);
        }
        let acc = Some(test_accuracy(&model, &split.test)?);
        history.epochs.push(epoch_record(epoch, &steps, active.len(), acc));
        history.steps.extend(steps);
    }
    model.retain_head(TARGET_HEAD);
    Ok((model, history))
}

/// Supervised training on the labeled set only. [`train_target`] with
/// `λ = 1` delegates here, so both follow the same parameter trajectory.
pub fn train_baseline_supervised(split: &DataSplit, hyper: &TrainHyper, arch: &TargetArch) -> Result<(Mlp, History)> {
    hyper.validate()?;
    if split.labeled.is_empty() {
        return Err(Error::InvalidArgument("empty labeled set".into()));
    }
    let mut model = init_target(split, arch, hyper.seed)?;
    let y_all = split.labeled.onehot(split.num_classes)?;
    let mut rng = seed::rng(seed::derive(hyper.seed, &["batches"]));
    let mut history = History::default();
    for epoch in 0..hyper.epochs {
        let mut order: Vec<usize> = (0..split.labeled.len()).collect();
        order.shuffle(&mut rng);
        let mut steps = Vec::new();
        for chunk in order.chunks(hyper.batch_size) {
            let x = split.labeled.inputs.select_rows(chunk);
            let y = y_all.select_rows(chunk);
            let out = model.backward(&[&x], &[LossTerm { head: TARGET_HEAD, batch: 0, targets: &y, coeff: 1.0 }])?;
            model.sgd_step(&out.grads, hyper)?;
            let ce = out.term_losses[0];
            steps.push(StepLosses { total: ce, labeled: ce, distill: Vec::new() });
        }
        let acc = Some(test_accuracy(&model, &split.test)?);
        history.epochs.push(epoch_record(epoch, &steps, 0, acc));
        history.steps.extend(steps);
    }
    Ok((model, history))
}

/// Builds the cache from `sources` and trains; convenience over
/// [`cache_pseudo_labels`] + [`train_target`].
pub fn distill_from_sources<S: RepresentationSource>(
    split: &DataSplit,
    sources: &[S],
    cfg: &DistillConfig,
) -> Result<(Mlp, History)> {
    let cache = match &split.unlabeled {
        Some(u) => cache_pseudo_labels(sources, u)?,
        None if cfg.lambda >= 1.0 => PseudoLabelCache::new(Vec::new())?,
        None => return Err(Error::InvalidArgument("empty unlabeled set with lambda < 1".into())),
    };
    train_target(split, &cache, cfg)
}
