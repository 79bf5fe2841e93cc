//! Turning similarity scores into per-source distillation weights.
//!
//! The main scheme min-max normalizes the scores to `[0, 1]` and raises them
//! to a power `p` before renormalizing. `p = 0` gives equal weights and large
//! `p` approaches putting all weight on the best source. Because of the
//! min-max step the lowest-scored source always gets weight 0 when `p > 0`.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::argmax;
use crate::seed;
use crate::similarity::SimilarityScore;

/// How a weight vector was produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scheme {
    Power { p: f64 },
    Softmax { temperature: f64 },
    Nearest,
    Equal,
    Inverse,
    RandomSimplex { seed: u64 },
    RandomSelection { seed: u64 },
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Power { .. } => "power",
            Scheme::Softmax { .. } => "softmax",
            Scheme::Nearest => "nearest",
            Scheme::Equal => "equal",
            Scheme::Inverse => "inverse",
            Scheme::RandomSimplex { .. } => "random-weights",
            Scheme::RandomSelection { .. } => "random-selection",
        }
    }

    /// Scheme parameter as written to weight files (empty when none).
    pub fn param(&self) -> String {
        match self {
            Scheme::Power { p } => format!("p={p}"),
            Scheme::Softmax { temperature } => format!("T={temperature}"),
            Scheme::RandomSimplex { seed } | Scheme::RandomSelection { seed } => {
                format!("seed={seed}")
            }
            _ => String::new(),
        }
    }
}

impl Scheme {
    /// Inverse of [`Scheme::name`] + [`Scheme::param`].
    pub fn from_parts(name: &str, param: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("bad scheme `{name}` / `{param}`"));
        let value = |key: &str| -> Result<&str> {
            match param.split_once('=') {
                Some((k, v)) if k == key => Ok(v),
                _ => Err(bad()),
            }
        };
        Ok(match name {
            "power" => Scheme::Power { p: value("p")?.parse().map_err(|_| bad())? },
            "softmax" => Scheme::Softmax { temperature: value("T")?.parse().map_err(|_| bad())? },
            "nearest" => Scheme::Nearest,
            "equal" => Scheme::Equal,
            "inverse" => Scheme::Inverse,
            "random-weights" => Scheme::RandomSimplex { seed: value("seed")?.parse().map_err(|_| bad())? },
            "random-selection" => Scheme::RandomSelection { seed: value("seed")?.parse().map_err(|_| bad())? },
            _ => return Err(bad()),
        })
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let param = self.param();
        if param.is_empty() {
            f.write_str(self.name())
        } else {
            write!(f, "{}:{}", self.name(), param)
        }
    }
}

/// Simplex vector over sources plus the scheme that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceWeights {
    alphas: Vec<f64>,
    scheme: Scheme,
}

pub const SIMPLEX_TOL: f64 = 1e-9;

impl SourceWeights {
    pub fn new(alphas: Vec<f64>, scheme: Scheme) -> Result<Self> {
        if alphas.is_empty() {
            return Err(Error::TooShort { needed: 1, got: 0 });
        }
        if alphas.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(Error::InvalidArgument("weights must be finite and nonnegative".into()));
        }
        let total: f64 = alphas.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidArgument(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { alphas, scheme })
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    /// Indices of sources with strictly positive weight.
    pub fn active(&self) -> impl Iterator<Item = usize> + '_ {
        self.alphas.iter().enumerate().filter(|(_, a)| **a > 0.0).map(|(i, _)| i)
    }

    fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn one_hot(len: usize, index: usize, scheme: Scheme) -> Self {
        let mut alphas = vec![0.0; len];
        alphas[index] = 1.0;
        Self { alphas, scheme }
    }
}

fn renormalize(v: Vec<f64>, scheme: Scheme) -> SourceWeights {
    let total: f64 = v.iter().sum();
    SourceWeights { alphas: v.into_iter().map(|x| x / total).collect(), scheme }
}

fn equal(len: usize, scheme: Scheme) -> SourceWeights {
    SourceWeights { alphas: vec![1.0 / len as f64; len], scheme }
}

fn ensure_nonempty(v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::TooShort { needed: 1, got: 0 });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("scores"));
    }
    Ok(())
}

/// Min-max normalization to `[0, 1]` followed by clipping at 0. All-equal
/// inputs map to all ones.
pub fn normalize_scores(scores: &[f64]) -> Result<Vec<f64>> {
    ensure_nonempty(scores)?;
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if range <= 0.0 {
        return Ok(vec![1.0; scores.len()]);
    }
    Ok(scores.iter().map(|s| ((s - lo) / range).max(0.0)).collect())
}

pub fn normalize_similarities(scores: &[SimilarityScore]) -> Result<Vec<f64>> {
    let values: Vec<f64> = scores.iter().map(|s| s.value).collect();
    normalize_scores(&values)
}

/// `α_i = ē_i^p / Σ ē_s^p`.
pub fn power_weights(normalized: &[f64], p: f64) -> Result<SourceWeights> {
    ensure_nonempty(normalized)?;
    if !(p >= 0.0) || !p.is_finite() {
        return Err(Error::InvalidArgument(format!("power must be finite and >= 0, got {p}")));
    }
    if normalized.iter().any(|e| !(0.0..=1.0).contains(e)) {
        return Err(Error::InvalidArgument("normalized scores must lie in [0, 1]".into()));
    }
    let scheme = Scheme::Power { p };
    if p == 0.0 {
        return Ok(equal(normalized.len(), scheme));
    }
    let raised: Vec<f64> = normalized.iter().map(|e| e.powf(p)).collect();
    let total: f64 = raised.iter().sum();
    if total <= 0.0 {
        if normalized.iter().any(|&e| e > 0.0) {
            // every positive entry underflowed: the limit is all weight on the maxima
            return Ok(nearest_weights(normalized)?.with_scheme(scheme));
        }
        return Err(Error::NoPositiveSimilarity);
    }
    Ok(renormalize(raised, scheme))
}

/// Temperature softmax over raw (unnormalized) scores.
pub fn softmax_weights(scores: &[f64], temperature: f64) -> Result<SourceWeights> {
    ensure_nonempty(scores)?;
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::InvalidArgument(format!("temperature must be > 0, got {temperature}")));
    }
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| ((s - hi) / temperature).exp()).collect();
    Ok(renormalize(exps, Scheme::Softmax { temperature }))
}

/// All weight on the highest score; ties go to the lowest index.
pub fn nearest_weights(scores: &[f64]) -> Result<SourceWeights> {
    ensure_nonempty(scores)?;
    Ok(SourceWeights::one_hot(scores.len(), argmax(scores), Scheme::Nearest))
}

/// Reference schemes that ignore (or invert) the similarity ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    Equal,
    Inverse,
    RandomSimplex,
    RandomSelection,
}

pub fn baseline_weights(baseline: Baseline, normalized: &[f64], seed: u64) -> Result<SourceWeights> {
    ensure_nonempty(normalized)?;
    let s = normalized.len();
    match baseline {
        Baseline::Equal => Ok(equal(s, Scheme::Equal)),
        Baseline::Inverse => {
            let comp: Vec<f64> = normalized.iter().map(|e| (1.0 - e).max(0.0)).collect();
            if comp.iter().sum::<f64>() <= 0.0 {
                return Err(Error::InverseUndefined);
            }
            Ok(renormalize(comp, Scheme::Inverse))
        }
        Baseline::RandomSimplex => {
            // normalized Exp(1) draws are a uniform Dirichlet(1, ..., 1) sample
            let mut rng = seed::rng(seed);
            let draws: Vec<f64> = (0..s)
                .map(|_| {
                    let x: f64 = Exp1.sample(&mut rng);
                    x.max(f64::MIN_POSITIVE)
                })
                .collect();
            Ok(renormalize(draws, Scheme::RandomSimplex { seed }))
        }
        Baseline::RandomSelection => {
            let mut rng = seed::rng(seed);
            let pick = rng.random_range(0..s);
            Ok(SourceWeights::one_hot(s, pick, Scheme::RandomSelection { seed }))
        }
    }
}

/// Indices of the `k` highest scores (ties by lower index), ascending.
pub fn top_k_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k.max(1));
    order.sort_unstable();
    order
}

/// A weighting request, as parsed from `NAME[:param]` strings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum WeightingSpec {
    Power { p: f64 },
    Softmax { temperature: f64 },
    Nearest,
    Equal,
    Inverse,
    RandomWeights { seed: Option<u64> },
    RandomSelection { seed: Option<u64> },
}

impl WeightingSpec {
    /// Label used in reports, e.g. `weighted:p=12`.
    pub fn label(&self) -> String {
        match self {
            WeightingSpec::Power { p } => format!("weighted:p={p}"),
            WeightingSpec::Softmax { temperature } => format!("softmax:T={temperature}"),
            WeightingSpec::Nearest => "nearest".into(),
            WeightingSpec::Equal => "equal".into(),
            WeightingSpec::Inverse => "inverse".into(),
            WeightingSpec::RandomWeights { seed: None } => "random-weights".into(),
            WeightingSpec::RandomWeights { seed: Some(s) } => format!("random-weights:seed={s}"),
            WeightingSpec::RandomSelection { seed: None } => "random-selection".into(),
            WeightingSpec::RandomSelection { seed: Some(s) } => format!("random-selection:seed={s}"),
        }
    }

    /// Computes weights from raw similarity values. With `top_k`, only the
    /// `k` best-scored sources take part and the rest get weight 0.
    pub fn weights(&self, raw: &[f64], top_k: Option<usize>, default_seed: u64) -> Result<SourceWeights> {
        ensure_nonempty(raw)?;
        let subset: Vec<usize> = match top_k {
            Some(k) if k < raw.len() => top_k_indices(raw, k),
            _ => (0..raw.len()).collect(),
        };
        let sub_raw: Vec<f64> = subset.iter().map(|&i| raw[i]).collect();
        let local = match *self {
            WeightingSpec::Power { p } => power_weights(&normalize_scores(&sub_raw)?, p)?,
            WeightingSpec::Softmax { temperature } => softmax_weights(&sub_raw, temperature)?,
            WeightingSpec::Nearest => nearest_weights(&sub_raw)?,
            WeightingSpec::Equal => baseline_weights(Baseline::Equal, &sub_raw, 0)?,
            WeightingSpec::Inverse => {
                baseline_weights(Baseline::Inverse, &normalize_scores(&sub_raw)?, 0)?
            }
            WeightingSpec::RandomWeights { seed } => baseline_weights(
                Baseline::RandomSimplex,
                &normalize_scores(&sub_raw)?,
                seed.unwrap_or(default_seed),
            )?,
            WeightingSpec::RandomSelection { seed } => baseline_weights(
                Baseline::RandomSelection,
                &normalize_scores(&sub_raw)?,
                seed.unwrap_or(default_seed),
            )?,
        };
        let mut alphas = vec![0.0; raw.len()];
        for (&i, &a) in subset.iter().zip(local.alphas()) {
            alphas[i] = a;
        }
        Ok(SourceWeights { alphas, scheme: local.scheme })
    }
}

impl fmt::Display for WeightingSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

fn param_value(param: &str, keys: &[&str]) -> Option<String> {
    match param.split_once('=') {
        Some((k, v)) if keys.iter().any(|key| key.eq_ignore_ascii_case(k.trim())) => {
            Some(v.trim().to_string())
        }
        Some(_) => None,
        None => Some(param.trim().to_string()),
    }
}

impl FromStr for WeightingSpec {
    type Err = Error;

    /// Accepts `power:p=12`, `weighted:12`, `softmax:T=0.05`, `nearest`,
    /// `equal`, `inverse`, `random-weights[:seed=N]`, `random-selection[:seed=N]`
    /// (alias `random`).
    fn from_str(s: &str) -> Result<Self> {
        let (name, param) = match s.split_once(':') {
            Some((n, p)) => (n.trim(), Some(p)),
            None => (s.trim(), None),
        };
        let bad = |what: &str| Error::InvalidArgument(format!("scheme `{s}`: {what}"));
        let number = |keys: &[&str]| -> Result<Option<f64>> {
            match param {
                None => Ok(None),
                Some(p) => {
                    let v = param_value(p, keys).ok_or_else(|| bad("unknown parameter"))?;
                    v.parse::<f64>().map(Some).map_err(|_| bad("parameter is not a number"))
                }
            }
        };
        let seed = || -> Result<Option<u64>> {
            match param {
                None => Ok(None),
                Some(p) => {
                    let v = param_value(p, &["seed"]).ok_or_else(|| bad("unknown parameter"))?;
                    v.parse::<u64>().map(Some).map_err(|_| bad("seed is not an integer"))
                }
            }
        };
        let no_param = |spec: WeightingSpec| match param {
            None => Ok(spec),
            Some(_) => Err(bad("takes no parameter")),
        };
        match name.to_ascii_lowercase().as_str() {
            "power" | "weighted" => Ok(WeightingSpec::Power {
                p: number(&["p"])?.ok_or_else(|| bad("needs p"))?,
            }),
            "softmax" => Ok(WeightingSpec::Softmax {
                temperature: number(&["t", "temp", "temperature"])?.ok_or_else(|| bad("needs T"))?,
            }),
            "nearest" => no_param(WeightingSpec::Nearest),
            "equal" => no_param(WeightingSpec::Equal),
            "inverse" => no_param(WeightingSpec::Inverse),
            "random-weights" | "random-simplex" | "randomweights" => {
                Ok(WeightingSpec::RandomWeights { seed: seed()? })
            }
            "random-selection" | "random" | "randomselection" => {
                Ok(WeightingSpec::RandomSelection { seed: seed()? })
            }
            _ => Err(bad("unknown scheme")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: &[f64], b: &[f64]) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-12, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn normalize_examples() {
        assert_close(&normalize_scores(&[0.9, 0.5, 0.1]).unwrap(), &[1.0, 0.5, 0.0]);
        assert_close(&normalize_scores(&[0.4, 0.4]).unwrap(), &[1.0, 1.0]);
        assert_close(&normalize_scores(&[-0.2, 0.8]).unwrap(), &[0.0, 1.0]);
        assert!(normalize_scores(&[]).is_err());
    }

    #[test]
    fn power_examples() {
        let e = [1.0, 0.5, 0.0];
        assert_close(power_weights(&e, 1.0).unwrap().alphas(), &[2.0 / 3.0, 1.0 / 3.0, 0.0]);
        assert_close(power_weights(&e, 2.0).unwrap().alphas(), &[0.8, 0.2, 0.0]);
        assert_close(power_weights(&e, 0.0).unwrap().alphas(), &[1.0 / 3.0; 3]);
        assert!(matches!(power_weights(&[0.0, 0.0], 1.0), Err(Error::NoPositiveSimilarity)));
        assert_close(power_weights(&[0.0, 0.0], 0.0).unwrap().alphas(), &[0.5, 0.5]);
    }

    #[test]
    fn power_underflow_falls_back_to_argmax() {
        let w = power_weights(&[1e-5, 2e-5, 0.0], 400.0).unwrap();
        assert_close(w.alphas(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn softmax_examples() {
        assert_close(softmax_weights(&[0.3; 3], 0.7).unwrap().alphas(), &[1.0 / 3.0; 3]);
        assert_close(
            softmax_weights(&[2f64.ln(), 0.0], 1.0).unwrap().alphas(),
            &[2.0 / 3.0, 1.0 / 3.0],
        );
        let flat = softmax_weights(&[1.0, 0.0], 1e6).unwrap();
        assert!((flat.alphas()[0] - 0.5).abs() < 1e-5);
        assert!(softmax_weights(&[1.0], 0.0).is_err());
        assert!(softmax_weights(&[1.0], -1.0).is_err());
    }

    #[test]
    fn nearest_examples() {
        assert_close(nearest_weights(&[0.2, 0.9, 0.4]).unwrap().alphas(), &[0.0, 1.0, 0.0]);
        assert_close(nearest_weights(&[0.9, 0.9]).unwrap().alphas(), &[1.0, 0.0]);
        assert_close(nearest_weights(&[0.1]).unwrap().alphas(), &[1.0]);
        assert!(nearest_weights(&[]).is_err());
    }

    #[test]
    fn baseline_examples() {
        let e = [1.0, 0.5, 0.0];
        assert_close(baseline_weights(Baseline::Equal, &[0.1; 4], 0).unwrap().alphas(), &[0.25; 4]);
        assert_close(
            baseline_weights(Baseline::Inverse, &e, 0).unwrap().alphas(),
            &[0.0, 1.0 / 3.0, 2.0 / 3.0],
        );
        assert!(matches!(
            baseline_weights(Baseline::Inverse, &[1.0, 1.0], 0),
            Err(Error::InverseUndefined)
        ));
        let r = baseline_weights(Baseline::RandomSimplex, &e, 7).unwrap();
        assert!((r.alphas().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(r, baseline_weights(Baseline::RandomSimplex, &e, 7).unwrap());
        let sel = baseline_weights(Baseline::RandomSelection, &e, 3).unwrap();
        assert_eq!(sel.alphas().iter().filter(|a| **a == 1.0).count(), 1);
    }

    #[test]
    fn top_k_preselection_zeroes_the_rest() {
        let raw = [0.1, 0.7, 0.4, 0.9];
        assert_eq!(top_k_indices(&raw, 2), vec![1, 3]);
        let w = WeightingSpec::Equal.weights(&raw, Some(2), 0).unwrap();
        assert_close(w.alphas(), &[0.0, 0.5, 0.0, 0.5]);
        let all = WeightingSpec::Equal.weights(&raw, Some(10), 0).unwrap();
        assert_close(all.alphas(), &[0.25; 4]);
    }

    #[test]
    fn parse_scheme_strings() {
        assert_eq!("weighted:p=12".parse::<WeightingSpec>().unwrap(), WeightingSpec::Power { p: 12.0 });
        assert_eq!("power:0".parse::<WeightingSpec>().unwrap(), WeightingSpec::Power { p: 0.0 });
        assert_eq!(
            "softmax:T=0.05".parse::<WeightingSpec>().unwrap(),
            WeightingSpec::Softmax { temperature: 0.05 }
        );
        assert_eq!(
            "random".parse::<WeightingSpec>().unwrap(),
            WeightingSpec::RandomSelection { seed: None }
        );
        assert_eq!(
            "random-weights:seed=4".parse::<WeightingSpec>().unwrap(),
            WeightingSpec::RandomWeights { seed: Some(4) }
        );
        assert!("power".parse::<WeightingSpec>().is_err());
        assert!("equal:3".parse::<WeightingSpec>().is_err());
        assert!("bogus".parse::<WeightingSpec>().is_err());
        assert!("weighted:q=2".parse::<WeightingSpec>().is_err());
    }

    #[test]
    fn display_round_trips_through_parse() {
        for s in ["weighted:p=12", "softmax:T=0.5", "nearest", "equal", "inverse"] {
            let spec: WeightingSpec = s.parse().unwrap();
            assert_eq!(spec.label(), s);
        }
    }
}
