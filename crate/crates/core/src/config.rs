//! Versioned JSON configuration of the staged pipeline.
//!
//! Every field has a default, so `{"version": 1}` is a complete config.
//! Unknown keys and other versions are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::experiment::{DistillSettings, ExperimentConfig, UniverseParams};
use crate::io;
use crate::similarity::{Metric, RepresentationKind};
use crate::taskgen::{SourceTraining, SplitSizes, TaskDesign, TaskSpec};
use crate::weighting::WeightingSpec;

pub const CONFIG_VERSION: u32 = 1;

/// Explicit target and source tasks, given as class lists of cluster ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitTasks {
    pub target: Vec<Vec<usize>>,
    pub sources: Vec<Vec<Vec<usize>>>,
}

impl ExplicitTasks {
    pub fn specs(&self) -> Result<(TaskSpec, Vec<TaskSpec>)> {
        let target = TaskSpec::new(self.target.clone())?;
        let sources = self.sources.iter().map(|c| TaskSpec::new(c.clone())).collect::<Result<_>>()?;
        Ok((target, sources))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub version: u32,
    pub seed: u64,
    /// Independent target tasks, each with its own sources.
    pub num_targets: usize,
    pub universe: UniverseParams,
    pub design: TaskDesign,
    /// Replaces `design` when present.
    pub tasks: Option<ExplicitTasks>,
    pub source_training: SourceTraining,
    pub split: SplitSizes,
    pub distill: DistillSettings,
    pub metric: Metric,
    pub representation: RepresentationKind,
    /// Scheme used by the `weigh` and `distill` stages.
    #[serde(serialize_with = "spec_out", deserialize_with = "spec_in")]
    pub scheme: WeightingSpec,
    /// Schemes run by the full pipeline.
    #[serde(serialize_with = "specs_out", deserialize_with = "specs_in")]
    pub schemes: Vec<WeightingSpec>,
    pub top_k: Option<usize>,
    pub output_dir: PathBuf,
}

fn spec_out<S: Serializer>(spec: &WeightingSpec, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&spec.label())
}

fn spec_in<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<WeightingSpec, D::Error> {
    let text = String::deserialize(d)?;
    text.parse().map_err(serde::de::Error::custom)
}

fn specs_out<S: Serializer>(specs: &[WeightingSpec], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(specs.iter().map(WeightingSpec::label))
}

fn specs_in<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<WeightingSpec>, D::Error> {
    let texts = Vec::<String>::deserialize(d)?;
    texts.iter().map(|t| t.parse().map_err(serde::de::Error::custom)).collect()
}

/// Schemes of the default pipeline run.
pub fn default_schemes() -> Vec<WeightingSpec> {
    vec![
        WeightingSpec::Nearest,
        WeightingSpec::Equal,
        WeightingSpec::Power { p: 12.0 },
        WeightingSpec::Inverse,
        WeightingSpec::RandomSelection { seed: None },
    ]
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig::from_experiment(&ExperimentConfig::default())
    }
}

impl PipelineConfig {
    /// Wraps experiment settings with pipeline defaults.
    pub fn from_experiment(exp: &ExperimentConfig) -> Self {
        PipelineConfig {
            version: CONFIG_VERSION,
            seed: 0,
            num_targets: 1,
            universe: exp.universe,
            design: exp.design.clone(),
            tasks: None,
            source_training: exp.source_training.clone(),
            split: exp.split,
            distill: exp.distill.clone(),
            metric: exp.metric,
            representation: exp.representation,
            scheme: WeightingSpec::Power { p: 12.0 },
            schemes: default_schemes(),
            top_k: exp.top_k,
            output_dir: PathBuf::from("out"),
        }
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            universe: self.universe,
            design: self.design.clone(),
            source_training: self.source_training.clone(),
            split: self.split,
            distill: self.distill.clone(),
            metric: self.metric,
            representation: self.representation,
            top_k: self.top_k,
        }
    }

    /// Parses and validates a config document.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("not valid JSON: {e}")))?;
        match value.get("version") {
            Some(v) if v.as_u64() == Some(CONFIG_VERSION as u64) => {}
            Some(v) => {
                return Err(Error::Config(format!("unsupported version {v}; expected {CONFIG_VERSION}")))
            }
            None => return Err(Error::Config("missing `version` field".into())),
        }
        let cfg: PipelineConfig = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&io::read_text(path)?).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }

    /// The config as recorded in manifests: everything but the output
    /// location, so identical runs in different directories match.
    pub fn manifest_value(&self) -> Result<serde_json::Value> {
        let mut value = serde_json::to_value(self)?;
        if let Some(map) = value.as_object_mut() {
            map.remove("output_dir");
        }
        Ok(value)
    }

    pub fn sha256(&self) -> Result<String> {
        Ok(io::sha256_hex(&serde_json::to_vec(&self.manifest_value()?)?))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.version != CONFIG_VERSION {
            return bad(format!("unsupported version {}", self.version));
        }
        if self.num_targets == 0 {
            return bad("num_targets must be >= 1".into());
        }
        let u = &self.universe;
        if u.num_clusters < 2 || u.dim == 0 || !(u.sigma > 0.0 && u.sigma.is_finite()) {
            return bad("universe needs >= 2 clusters, dim >= 1 and sigma > 0".into());
        }
        match &self.tasks {
            Some(tasks) => {
                let (target, sources) = tasks.specs()?;
                if sources.is_empty() {
                    return bad("tasks.sources must not be empty".into());
                }
                for spec in std::iter::once(&target).chain(&sources) {
                    if let Some(&c) = spec.clusters().iter().find(|&&c| c >= u.num_clusters) {
                        return bad(format!("task uses cluster {c} outside the universe"));
                    }
                }
            }
            None => {
                let d = &self.design;
                if d.target_clusters < 2 || d.target_clusters > u.num_clusters {
                    return bad(format!("design.target_clusters must lie in 2..={}", u.num_clusters));
                }
                if d.target_classes < 2 || d.target_classes > d.target_clusters {
                    return bad("design.target_classes must lie in 2..=target_clusters".into());
                }
                if d.source_overlaps.is_empty() || d.source_overlaps.iter().any(|o| !(0.0..=1.0).contains(o)) {
                    return bad("design.source_overlaps must be non-empty values in [0, 1]".into());
                }
            }
        }
        self.source_training.hyper.validate()?;
        if self.source_training.architectures.is_empty() {
            return bad("source_training.architectures must not be empty".into());
        }
        let s = &self.split;
        if !(s.labeled_fraction > 0.0 && s.labeled_fraction < 1.0) {
            return bad("split.labeled_fraction must lie in (0, 1)".into());
        }
        if let Some(p) = s.probe_size {
            if p < 2 || p > s.labeled_count() {
                return bad(format!("split.probe_size must lie in 2..={}", s.labeled_count()));
            }
        }
        if s.n_test == 0 {
            return bad("split.n_test must be >= 1".into());
        }
        let d = &self.distill;
        if !(0.0..=1.0).contains(&d.lambda) {
            return bad("distill.lambda must lie in [0, 1]".into());
        }
        d.hyper.validate()?;
        if d.batch_ratio.0 == 0 || d.batch_ratio.1 == 0 || d.repeats == 0 {
            return bad("distill.batch_ratio entries and distill.repeats must be >= 1".into());
        }
        if self.top_k == Some(0) {
            return bad("top_k must be >= 1".into());
        }
        if self.schemes.is_empty() {
            return bad("schemes must not be empty".into());
        }
        for spec in std::iter::once(&self.scheme).chain(&self.schemes) {
            validate_scheme(spec)?;
        }
        Ok(())
    }
}

fn validate_scheme(spec: &WeightingSpec) -> Result<()> {
    match *spec {
        WeightingSpec::Power { p } if !(p >= 0.0 && p.is_finite()) => {
            Err(Error::Config(format!("{spec}: p must be finite and >= 0")))
        }
        WeightingSpec::Softmax { temperature } if !(temperature > 0.0 && temperature.is_finite()) => {
            Err(Error::Config(format!("{spec}: T must be finite and > 0")))
        }
        _ => Ok(()),
    }
}

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub metric: Option<Metric>,
    pub representation: Option<RepresentationKind>,
    /// `NAME[:param]`.
    pub scheme: Option<String>,
    pub p: Option<f64>,
    pub temperature: Option<f64>,
    pub lambda: Option<f64>,
    pub labeled_fraction: Option<f64>,
    pub output_dir: Option<PathBuf>,
    /// Comma-separated scheme list.
    pub schemes: Option<String>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut PipelineConfig) -> Result<()> {
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.metric {
            cfg.metric = v;
        }
        if let Some(v) = self.representation {
            cfg.representation = v;
        }
        if let Some(v) = self.lambda {
            cfg.distill.lambda = v;
        }
        if let Some(v) = self.labeled_fraction {
            cfg.split.labeled_fraction = v;
        }
        if let Some(v) = &self.output_dir {
            cfg.output_dir = v.clone();
        }
        cfg.scheme = resolve_scheme(self.scheme.as_deref(), self.p, self.temperature, cfg.scheme)?;
        if let Some(list) = &self.schemes {
            cfg.schemes = list
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| resolve_scheme(Some(s.trim()), None, None, cfg.scheme))
                .collect::<Result<_>>()?;
        }
        cfg.validate()
    }
}

/// Combines a scheme name with separately given `p` or `T` values. A bare
/// `power` takes `p` from the flag, else from `current`, else 12.
pub fn resolve_scheme(
    name: Option<&str>,
    p: Option<f64>,
    temperature: Option<f64>,
    current: WeightingSpec,
) -> Result<WeightingSpec> {
    let base = match name {
        None => current,
        Some(n) if n.contains(':') => n.parse()?,
        Some(n) => match n.trim().to_ascii_lowercase().as_str() {
            "power" | "weighted" => WeightingSpec::Power {
                p: match current {
                    WeightingSpec::Power { p } => p,
                    _ => 12.0,
                },
            },
            "softmax" => match (temperature, current) {
                (Some(t), _) | (None, WeightingSpec::Softmax { temperature: t }) => {
                    WeightingSpec::Softmax { temperature: t }
                }
                _ => return Err(Error::Config("softmax needs a temperature (--temp)".into())),
            },
            _ => n.parse()?,
        },
    };
    let spec = match (base, p, temperature) {
        (WeightingSpec::Power { .. }, Some(p), _) => WeightingSpec::Power { p },
        (WeightingSpec::Softmax { .. }, _, Some(t)) => WeightingSpec::Softmax { temperature: t },
        (other, Some(_), _) => return Err(Error::Config(format!("--p given but scheme is {other}"))),
        (other, _, Some(_)) => return Err(Error::Config(format!("--temp given but scheme is {other}"))),
        (other, None, None) => other,
    };
    validate_scheme(&spec)?;
    Ok(spec)
}
