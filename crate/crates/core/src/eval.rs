//! Analysis of experiment results: accuracy, similarity-vs-accuracy
//! correlations, top-k relative accuracy and per-scheme summaries.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Mlp, TARGET_HEAD};
use crate::numerics::{self, Correlation, Matrix};
use crate::similarity::{Metric, RepresentationKind};
use crate::taskgen::LabeledSet;

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
pub fn accuracy_from_probs(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::TooShort { needed: 1, got: 0 });
    }
    if probs.rows() != labels.len() {
        return Err(Error::LengthMismatch { left: probs.rows(), right: labels.len() });
    }
    let correct = labels.iter().enumerate().filter(|&(r, &y)| probs.row_argmax(r) == y).count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Accuracy of the model's `target` head.
pub fn test_accuracy(model: &Mlp, test: &LabeledSet) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::TooShort { needed: 1, got: 0 });
    }
    accuracy_from_probs(&model.predict(&test.inputs, TARGET_HEAD)?, &test.labels)
}

/// Spearman, Pearson and Kendall correlation of one score column with accuracy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationTriple {
    pub spearman: Correlation,
    pub pearson: Correlation,
    pub kendall: Correlation,
}

impl CorrelationTriple {
    pub fn degenerate(&self) -> bool {
        self.spearman.degenerate || self.pearson.degenerate || self.kendall.degenerate
    }
}

/// Correlations for every (metric, representation) cell of one task.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationReport {
    pub task: String,
    pub cells: BTreeMap<(Metric, RepresentationKind), CorrelationTriple>,
}

pub fn correlate(scores: &[f64], accuracies: &[f64]) -> Result<CorrelationTriple> {
    if scores.len() != accuracies.len() {
        return Err(Error::LengthMismatch { left: scores.len(), right: accuracies.len() });
    }
    if scores.len() < 3 {
        let d = Correlation::DEGENERATE;
        return Ok(CorrelationTriple { spearman: d, pearson: d, kendall: d });
    }
    Ok(CorrelationTriple {
        spearman: numerics::spearman(scores, accuracies)?,
        pearson: numerics::pearson(scores, accuracies)?,
        kendall: numerics::kendall_tau(scores, accuracies)?,
    })
}

pub fn correlation_report(
    task: &str,
    scores_by_metric: &BTreeMap<(Metric, RepresentationKind), Vec<f64>>,
    accuracies: &[f64],
) -> Result<CorrelationReport> {
    let cells = scores_by_metric
        .iter()
        .map(|(&key, scores)| Ok((key, correlate(scores, accuracies)?)))
        .collect::<Result<_>>()?;
    Ok(CorrelationReport { task: task.to_string(), cells })
}

/// Long-format CSV of several task reports plus a per-cell `mean` task.
pub fn correlation_csv(reports: &[CorrelationReport]) -> String {
    let mut out = String::from("metric,representation,task,spearman,pearson,kendall,degenerate\n");
    let mut sums: BTreeMap<(Metric, RepresentationKind), ([f64; 3], usize)> = BTreeMap::new();
    for r in reports {
        for (&(m, k), c) in &r.cells {
            let _ = writeln!(
                out,
                "{m},{k},{},{},{},{},{}",
                r.task,
                c.spearman.value,
                c.pearson.value,
                c.kendall.value,
                c.degenerate()
            );
            let e = sums.entry((m, k)).or_insert(([0.0; 3], 0));
            e.0[0] += c.spearman.value;
            e.0[1] += c.pearson.value;
            e.0[2] += c.kendall.value;
            e.1 += 1;
        }
    }
    for ((m, k), (s, n)) in sums {
        let n = n as f64;
        let _ = writeln!(out, "{m},{k},mean,{},{},{},false", s[0] / n, s[1] / n, s[2] / n);
    }
    out
}

/// Sources ranked by similarity alongside their true accuracies.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingEval {
    ranking: Vec<usize>,
    accuracy_by_source: Vec<f64>,
}

impl RankingEval {
    /// Ranks sources by descending score (ties by lower index).
    pub fn from_scores(scores: &[f64], accuracies: &[f64]) -> Result<Self> {
        if scores.len() != accuracies.len() {
            return Err(Error::LengthMismatch { left: scores.len(), right: accuracies.len() });
        }
        let mut ranking: Vec<usize> = (0..scores.len()).collect();
        ranking.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        Self::new(ranking, accuracies.to_vec())
    }

    pub fn new(ranking: Vec<usize>, accuracy_by_source: Vec<f64>) -> Result<Self> {
        let s = accuracy_by_source.len();
        let mut seen = vec![false; s];
        if ranking.len() != s || !ranking.iter().all(|&i| i < s && !std::mem::replace(&mut seen[i], true)) {
            return Err(Error::InvalidArgument("ranking must be a permutation of source indices".into()));
        }
        if s == 0 {
            return Err(Error::TooShort { needed: 1, got: 0 });
        }
        Ok(Self { ranking, accuracy_by_source })
    }

    pub fn ranking(&self) -> &[usize] {
        &self.ranking
    }

    pub fn accuracies(&self) -> &[f64] {
        &self.accuracy_by_source
    }

    pub fn len(&self) -> usize {
        self.ranking.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranking.is_empty()
    }
}

/// Mean accuracy of the top-`k` sources by similarity over the mean of the
/// `k` best accuracies.
pub fn topk_relative_accuracy(eval: &RankingEval, k: usize) -> Result<f64> {
    let s = eval.len();
    if k == 0 || k > s {
        return Err(Error::InvalidArgument(format!("k = {k} outside 1..={s}")));
    }
    let acc = &eval.accuracy_by_source;
    let picked: f64 = eval.ranking[..k].iter().map(|&i| acc[i]).sum();
    let mut best: Vec<usize> = (0..s).collect();
    best.sort_by(|&a, &b| acc[b].total_cmp(&acc[a]).then(a.cmp(&b)));
    let ideal: f64 = best[..k].iter().map(|&i| acc[i]).sum();
    if ideal <= 0.0 {
        return Ok(1.0);
    }
    Ok(picked / ideal)
}

/// Average of [`topk_relative_accuracy`] over `k = 1..=S`.
pub fn mean_relative_accuracy(eval: &RankingEval) -> Result<f64> {
    mean_relative_accuracy_upto(eval, eval.len())
}

/// Average over `k = 1..S-1`, leaving out the trivial `k = S` term.
pub fn mean_relative_accuracy_below_s(eval: &RankingEval) -> Result<f64> {
    if eval.len() < 2 {
        return Err(Error::TooShort { needed: 2, got: eval.len() });
    }
    mean_relative_accuracy_upto(eval, eval.len() - 1)
}

fn mean_relative_accuracy_upto(eval: &RankingEval, max_k: usize) -> Result<f64> {
    let mut total = 0.0;
    for k in 1..=max_k {
        total += topk_relative_accuracy(eval, k)?;
    }
    Ok(total / max_k as f64)
}

/// Expected [`topk_relative_accuracy`] of a uniformly random ranking: any
/// `k` sources have mean accuracy equal to the overall mean in expectation.
pub fn random_topk_relative_accuracy(accuracies: &[f64], k: usize) -> Result<f64> {
    let s = accuracies.len();
    if k == 0 || k > s {
        return Err(Error::InvalidArgument(format!("k = {k} outside 1..={s}")));
    }
    let mean = accuracies.iter().sum::<f64>() / s as f64;
    let mut sorted = accuracies.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let ideal: f64 = sorted[..k].iter().sum();
    if ideal <= 0.0 {
        return Ok(1.0);
    }
    Ok(k as f64 * mean / ideal)
}

/// Expected [`mean_relative_accuracy`] (`below_s == false`) or
/// [`mean_relative_accuracy_below_s`] of a uniformly random ranking.
pub fn random_mean_relative_accuracy(accuracies: &[f64], below_s: bool) -> Result<f64> {
    let s = accuracies.len();
    let max_k = if below_s { s.saturating_sub(1) } else { s };
    if max_k == 0 {
        return Err(Error::TooShort { needed: if below_s { 2 } else { 1 }, got: s });
    }
    let mut total = 0.0;
    for k in 1..=max_k {
        total += random_topk_relative_accuracy(accuracies, k)?;
    }
    Ok(total / max_k as f64)
}

/// Mean accuracy per scheme, plus the per-run breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeTable {
    pub columns: Vec<String>,
    /// `(scheme, mean, per-column values)`, sorted by scheme name.
    pub rows: Vec<(String, f64, Vec<f64>)>,
}

pub fn scheme_comparison(columns: &[String], results: &BTreeMap<String, Vec<f64>>) -> Result<SchemeTable> {
    let mut rows = Vec::with_capacity(results.len());
    for (scheme, values) in results {
        if values.len() != columns.len() {
            return Err(Error::InvalidArgument(format!(
                "scheme `{scheme}` has {} values for {} columns",
                values.len(),
                columns.len()
            )));
        }
        if values.is_empty() {
            return Err(Error::TooShort { needed: 1, got: 0 });
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        rows.push((scheme.clone(), mean, values.clone()));
    }
    Ok(SchemeTable { columns: columns.to_vec(), rows })
}

impl SchemeTable {
    pub fn mean_of(&self, scheme: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.0 == scheme).map(|r| r.1)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("scheme,mean");
        for c in &self.columns {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (scheme, mean, values) in &self.rows {
            let _ = write!(out, "{scheme},{mean}");
            for v in values {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_examples() {
        let probs = Matrix::from_rows(&[[0.9, 0.1], [0.2, 0.8], [0.6, 0.4], [0.5, 0.5]]).unwrap();
        assert_eq!(accuracy_from_probs(&probs, &[0, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(accuracy_from_probs(&probs, &[1, 0, 1, 1]).unwrap(), 0.0);
        assert_eq!(accuracy_from_probs(&probs, &[0, 1, 1, 0]).unwrap(), 0.75);
        assert!(accuracy_from_probs(&probs, &[]).is_err());
    }

    #[test]
    fn correlation_examples() {
        let acc = [0.5, 0.7, 0.6, 0.9];
        let same = correlate(&acc, &acc).unwrap();
        for c in [same.spearman, same.pearson, same.kendall] {
            assert!((c.value - 1.0).abs() < 1e-12);
        }
        let neg: Vec<f64> = acc.iter().map(|a| -a).collect();
        let opp = correlate(&neg, &acc).unwrap();
        assert!((opp.spearman.value + 1.0).abs() < 1e-12);
        assert!((opp.kendall.value + 1.0).abs() < 1e-12);
        let c = correlate(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((c.spearman.value - 0.8).abs() < 1e-12);
        assert!(correlate(&[1.0, 2.0], &[1.0, 2.0]).unwrap().degenerate());
    }

    #[test]
    fn topk_examples() {
        let acc = vec![0.9, 0.8, 0.7, 0.6];
        let perfect = RankingEval::new(vec![0, 1, 2, 3], acc.clone()).unwrap();
        for k in 1..=4 {
            assert_eq!(topk_relative_accuracy(&perfect, k).unwrap(), 1.0);
        }
        let off = RankingEval::new(vec![1, 2, 0, 3], acc.clone()).unwrap();
        assert!((topk_relative_accuracy(&off, 2).unwrap() - 0.75 / 0.85).abs() < 1e-12);
        assert!((topk_relative_accuracy(&off, 4).unwrap() - 1.0).abs() < 1e-12);
        assert!(topk_relative_accuracy(&off, 0).is_err());
        assert!(topk_relative_accuracy(&off, 5).is_err());
    }

    #[test]
    fn mean_relative_examples() {
        let perfect = RankingEval::new(vec![0, 1], vec![0.9, 0.8]).unwrap();
        assert_eq!(mean_relative_accuracy(&perfect).unwrap(), 1.0);
        let swapped = RankingEval::new(vec![1, 0], vec![0.9, 0.8]).unwrap();
        let want = (0.8 / 0.9 + 1.0) / 2.0;
        assert!((mean_relative_accuracy(&swapped).unwrap() - want).abs() < 1e-12);
        assert!((mean_relative_accuracy_below_s(&swapped).unwrap() - 0.8 / 0.9).abs() < 1e-12);
    }

    #[test]
    fn ranking_must_be_permutation() {
        assert!(RankingEval::new(vec![0, 0], vec![0.1, 0.2]).is_err());
        assert!(RankingEval::new(vec![0], vec![0.1, 0.2]).is_err());
        let r = RankingEval::from_scores(&[0.2, 0.9, 0.9], &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(r.ranking(), &[1, 2, 0]);
    }

    #[test]
    fn scheme_table_examples() {
        let cols = vec!["t0".to_string(), "t1".to_string()];
        let mut res = BTreeMap::new();
        res.insert("nearest".to_string(), vec![0.8, 0.6]);
        res.insert("equal".to_string(), vec![0.5, 0.7]);
        let t = scheme_comparison(&cols, &res).unwrap();
        assert_eq!(t.rows[0].0, "equal");
        assert!((t.mean_of("equal").unwrap() - 0.6).abs() < 1e-12);
        assert!((t.mean_of("nearest").unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(t.to_csv().lines().next().unwrap(), "scheme,mean,t0,t1");
        res.insert("ragged".to_string(), vec![0.1]);
        assert!(scheme_comparison(&cols, &res).is_err());
    }
}
