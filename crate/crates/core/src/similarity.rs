//! Task-similarity metrics between a source model's representation of the
//! probe set and the probe labels.
//!
//! * PARC: Spearman correlation of the lower triangles of the two Pearson
//!   distance matrices, raw representation vs one-hot labels.
//! * RSA: the same after z-normalizing every column of both sides.
//! * CKA: linear centered kernel alignment, closed form on column-centered
//!   data.
//!
//! None of the metrics depends on the representation's dimension, so
//! sources with different architectures score on the same scale.

use std::fmt;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{self, hsic, linear_kernel, lower_triangle, pairwise_pearson_distance, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Parc,
    Rsa,
    Cka,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Cka, Metric::Parc, Metric::Rsa];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Parc => "parc",
            Metric::Rsa => "rsa",
            Metric::Cka => "cka",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "parc" => Ok(Metric::Parc),
            "rsa" => Ok(Metric::Rsa),
            "cka" => Ok(Metric::Cka),
            other => Err(Error::InvalidArgument(format!("unknown metric `{other}`"))),
        }
    }
}

/// Which output of a source model is compared against the labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RepresentationKind {
    /// Penultimate features `φ(x)`.
    Feature,
    /// Class probabilities `h(φ(x))`.
    #[serde(alias = "pseudolabel")]
    Pseudo,
}

impl RepresentationKind {
    pub const ALL: [RepresentationKind; 2] = [RepresentationKind::Pseudo, RepresentationKind::Feature];

    pub fn name(self) -> &'static str {
        match self {
            RepresentationKind::Feature => "feature",
            RepresentationKind::Pseudo => "pseudo",
        }
    }
}

impl fmt::Display for RepresentationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RepresentationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "feature" | "features" => Ok(RepresentationKind::Feature),
            "pseudo" | "pseudolabel" | "pseudo-label" => Ok(RepresentationKind::Pseudo),
            other => Err(Error::InvalidArgument(format!("unknown representation `{other}`"))),
        }
    }
}

/// Small labeled subset of the target data used to score sources.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSet {
    inputs: Matrix,
    labels: Vec<usize>,
    labels_onehot: Matrix,
}

impl ProbeSet {
    pub fn new(inputs: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if labels.len() != inputs.rows() {
            return Err(Error::LengthMismatch { left: inputs.rows(), right: labels.len() });
        }
        if labels.len() < 2 {
            return Err(Error::TooShort { needed: 2, got: labels.len() });
        }
        let labels_onehot = Matrix::one_hot(&labels, num_classes)?;
        Ok(Self { inputs, labels, labels_onehot })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn labels_onehot(&self) -> &Matrix {
        &self.labels_onehot
    }

    pub fn num_classes(&self) -> usize {
        self.labels_onehot.cols()
    }

    /// Number of classes with at least one probe example.
    pub fn classes_present(&self) -> usize {
        let mut seen = vec![false; self.num_classes()];
        self.labels.iter().for_each(|&c| seen[c] = true);
        seen.into_iter().filter(|&s| s).count()
    }
}

/// A source model's view of the probe inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceRepresentation {
    kind: RepresentationKind,
    values: Matrix,
}

impl SourceRepresentation {
    pub fn new(kind: RepresentationKind, values: Matrix) -> Result<Self> {
        if kind == RepresentationKind::Pseudo {
            for (i, row) in values.row_iter().enumerate() {
                let sum: f64 = row.iter().sum();
                if row.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > 1e-6 {
                    return Err(Error::InvalidArgument(format!(
                        "pseudo-label row {i} is not a probability vector (sum {sum})"
                    )));
                }
            }
        }
        Ok(Self { kind, values })
    }

    pub fn features(values: Matrix) -> Self {
        Self { kind: RepresentationKind::Feature, values }
    }

    pub fn kind(&self) -> RepresentationKind {
        self.kind
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }
}

/// One metric evaluation of one source against the probe set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityScore {
    pub source_id: String,
    pub metric: Metric,
    pub representation: RepresentationKind,
    pub value: f64,
    pub degenerate: bool,
}

/// Score without provenance; see [`score`] for the tagged variant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawScore {
    pub value: f64,
    pub degenerate: bool,
}

impl RawScore {
    const DEGENERATE: RawScore = RawScore { value: 0.0, degenerate: true };
}

fn check_sizes(rep: &SourceRepresentation, probe: &ProbeSet) -> Result<()> {
    if rep.values.rows() != probe.len() {
        return Err(Error::LengthMismatch { left: rep.values.rows(), right: probe.len() });
    }
    Ok(())
}

fn spearman_of_distances(x: &Matrix, y: &Matrix) -> Result<RawScore> {
    if x.cols() < 2 || y.cols() < 2 {
        return Ok(RawScore::DEGENERATE);
    }
    let (dx, const_x) = pairwise_pearson_distance(x)?;
    let (dy, const_y) = pairwise_pearson_distance(y)?;
    if const_x || const_y {
        warn!("constant rows in distance construction; they correlate as 0 with every row");
    }
    let c = numerics::spearman(&lower_triangle(&dx)?, &lower_triangle(&dy)?)?;
    Ok(RawScore { value: c.value, degenerate: c.degenerate })
}

pub fn parc(rep: &SourceRepresentation, probe: &ProbeSet) -> Result<RawScore> {
    check_sizes(rep, probe)?;
    if probe.classes_present() < 2 {
        return Ok(RawScore::DEGENERATE);
    }
    spearman_of_distances(&rep.values, &probe.labels_onehot)
}

/// Per-column `(v - mean) / std` with population std; constant columns are
/// dropped. Returns `None` if nothing is left.
pub fn zscore_columns(m: &Matrix) -> Option<Matrix> {
    let means = m.col_means();
    let n = m.rows() as f64;
    let mut keep = Vec::new();
    let mut stds = Vec::new();
    for c in 0..m.cols() {
        let var = (0..m.rows()).map(|r| (m.get(r, c) - means[c]).powi(2)).sum::<f64>() / n;
        if var >= numerics::VARIANCE_EPS {
            keep.push(c);
            stds.push(var.sqrt());
        }
    }
    if keep.is_empty() {
        return None;
    }
    if keep.len() < m.cols() {
        warn!("dropping {} constant column(s) before z-normalization", m.cols() - keep.len());
    }
    let mut out = m.select_cols(&keep);
    for r in 0..out.rows() {
        for (k, v) in out.row_mut(r).iter_mut().enumerate() {
            *v = (*v - means[keep[k]]) / stds[k];
        }
    }
    Some(out)
}

pub fn rsa(rep: &SourceRepresentation, probe: &ProbeSet) -> Result<RawScore> {
    check_sizes(rep, probe)?;
    if probe.classes_present() < 2 {
        return Ok(RawScore::DEGENERATE);
    }
    let (Some(x), Some(y)) = (zscore_columns(&rep.values), zscore_columns(&probe.labels_onehot))
    else {
        return Ok(RawScore::DEGENERATE);
    };
    spearman_of_distances(&x, &y)
}

const CKA_EPS: f64 = 1e-12;

/// Linear CKA, `‖YᵀX‖²_F / (‖XᵀX‖_F ‖YᵀY‖_F)` on column-centered `X`, `Y`.
pub fn cka_linear_matrices(x: &Matrix, y: &Matrix) -> Result<RawScore> {
    if x.rows() != y.rows() {
        return Err(Error::LengthMismatch { left: x.rows(), right: y.rows() });
    }
    let xc = x.center_columns();
    let yc = y.center_columns();
    if xc.frobenius_norm() < CKA_EPS || yc.frobenius_norm() < CKA_EPS {
        return Ok(RawScore::DEGENERATE);
    }
    let cross = yc.t_matmul(&xc)?.frobenius_norm();
    let xx = xc.t_matmul(&xc)?.frobenius_norm();
    let yy = yc.t_matmul(&yc)?.frobenius_norm();
    Ok(RawScore { value: (cross * cross / (xx * yy)).clamp(0.0, 1.0), degenerate: false })
}

/// CKA straight from its definition `HSIC(K,L) / sqrt(HSIC(K,K) HSIC(L,L))`
/// with linear kernels. Quadratic in the number of rows.
pub fn cka_from_kernels(x: &Matrix, y: &Matrix) -> Result<RawScore> {
    let k = linear_kernel(x);
    let l = linear_kernel(y);
    let kl = hsic(&k, &l)?;
    let kk = hsic(&k, &k)?;
    let ll = hsic(&l, &l)?;
    if kk <= 0.0 || ll <= 0.0 {
        return Ok(RawScore::DEGENERATE);
    }
    Ok(RawScore { value: kl / (kk * ll).sqrt(), degenerate: false })
}

pub fn cka_linear(rep: &SourceRepresentation, probe: &ProbeSet) -> Result<RawScore> {
    check_sizes(rep, probe)?;
    if probe.classes_present() < 2 {
        return Ok(RawScore::DEGENERATE);
    }
    cka_linear_matrices(&rep.values, &probe.labels_onehot)
}

/// Evaluates `metric` and tags the result with its provenance.
pub fn score(
    source_id: &str,
    metric: Metric,
    rep: &SourceRepresentation,
    probe: &ProbeSet,
) -> Result<SimilarityScore> {
    let raw = match metric {
        Metric::Parc => parc(rep, probe)?,
        Metric::Rsa => rsa(rep, probe)?,
        Metric::Cka => cka_linear(rep, probe)?,
    };
    Ok(SimilarityScore {
        source_id: source_id.to_string(),
        metric,
        representation: rep.kind,
        value: raw.value,
        degenerate: raw.degenerate,
    })
}

/// Anything that can embed probe inputs: an in-process model, or matrices
/// exported by an external model.
pub trait RepresentationSource {
    fn id(&self) -> &str;

    fn represent(&self, inputs: &Matrix, kind: RepresentationKind) -> Result<SourceRepresentation>;
}

/// Representations computed elsewhere (e.g. loaded from FMAT files).
#[derive(Debug, Clone)]
pub struct PrecomputedSource {
    pub id: String,
    pub features: Option<Matrix>,
    pub pseudo: Option<Matrix>,
}

impl RepresentationSource for PrecomputedSource {
    fn id(&self) -> &str {
        &self.id
    }

    fn represent(&self, inputs: &Matrix, kind: RepresentationKind) -> Result<SourceRepresentation> {
        let values = match kind {
            RepresentationKind::Feature => self.features.as_ref(),
            RepresentationKind::Pseudo => self.pseudo.as_ref(),
        }
        .ok_or_else(|| Error::Source {
            source_id: self.id.clone(),
            reason: format!("no {kind} matrix available"),
        })?;
        if values.rows() != inputs.rows() {
            return Err(Error::Source {
                source_id: self.id.clone(),
                reason: format!("{} rows for {} probe inputs", values.rows(), inputs.rows()),
            });
        }
        SourceRepresentation::new(kind, values.clone())
    }
}

/// Scores every source, keeping order. A failing source yields an `Err`
/// entry and does not stop the others.
pub fn score_all_sources<S: RepresentationSource>(
    sources: &[S],
    probe: &ProbeSet,
    metric: Metric,
    kind: RepresentationKind,
) -> Vec<Result<SimilarityScore>> {
    sources
        .iter()
        .map(|s| {
            let rep = s.represent(probe.inputs(), kind).map_err(|e| match e {
                e @ Error::Source { .. } => e,
                other => Error::Source { source_id: s.id().to_string(), reason: other.to_string() },
            })?;
            score(s.id(), metric, &rep, probe)
        })
        .collect()
}
