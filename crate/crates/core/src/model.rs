//! Small feed-forward classifiers `h ∘ φ` with exact hand-written gradients.
//!
//! The feature extractor `φ` is a stack of dense layers; any number of named
//! linear softmax heads read the features. Source models carry one head,
//! target models carry a `target` head plus one auxiliary head per source
//! being distilled.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::seed;

pub const TARGET_HEAD: &str = "target";

/// Floor applied to probabilities before taking logs.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::InvalidArgument(format!("unknown activation `{other}`"))),
        }
    }
}

/// Affine map `x W + b` with `W` stored `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    fn init(fan_in: usize, fan_out: usize, rng: &mut seed::Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
        Dense {
            weight: Matrix::new(fan_in, fan_out, data).expect("finite init"),
            bias: vec![0.0; fan_out],
        }
    }

    fn zeros_like(&self) -> Self {
        Dense { weight: Matrix::zeros(self.weight.rows(), self.weight.cols()), bias: vec![0.0; self.bias.len()] }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    fn apply(&self, x: &Matrix) -> Matrix {
        let mut z = x.matmul(&self.weight).expect("layer shapes chain");
        for r in 0..z.rows() {
            for (v, b) in z.row_mut(r).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        z
    }

    fn same_shape(&self, other: &Dense) -> bool {
        self.weight.shape() == other.weight.shape() && self.bias.len() == other.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureLayer {
    pub dense: Dense,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    input_dim: usize,
    layers: Vec<FeatureLayer>,
    heads: BTreeMap<String, Dense>,
}

/// Name and class count of one classifier head.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeadSpec {
    pub name: String,
    pub classes: usize,
}

impl HeadSpec {
    pub fn new(name: impl Into<String>, classes: usize) -> Self {
        Self { name: name.into(), classes }
    }
}

/// Builds an MLP with weights drawn uniformly from `±1/sqrt(fan_in)` and
/// zero biases. Heads are initialized from per-head seed streams so adding a
/// head never perturbs the others.
pub fn init_mlp(
    input_dim: usize,
    hidden_dims: &[usize],
    activation: Activation,
    heads: &[HeadSpec],
    seed: u64,
) -> Result<Mlp> {
    if input_dim == 0 || hidden_dims.contains(&0) || heads.iter().any(|h| h.classes == 0) {
        return Err(Error::InvalidArgument("dimensions must be positive".into()));
    }
    let mut rng = seed::rng(seed::derive(seed, &["trunk"]));
    let mut layers = Vec::with_capacity(hidden_dims.len());
    let mut fan_in = input_dim;
    for &h in hidden_dims {
        layers.push(FeatureLayer { dense: Dense::init(fan_in, h, &mut rng), activation });
        fan_in = h;
    }
    let mut mlp = Mlp { input_dim, layers, heads: BTreeMap::new() };
    for h in heads {
        mlp.add_head(&h.name, h.classes, seed)?;
    }
    Ok(mlp)
}

/// Output of [`Mlp::forward`].
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub features: Matrix,
    pub probs: BTreeMap<String, Matrix>,
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - hi).exp();
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    out
}

/// Mean over rows of `-Σ_c t_c log(max(p_c, 1e-12))`.
pub fn cross_entropy(probs: &Matrix, targets: &Matrix) -> Result<f64> {
    if probs.shape() != targets.shape() {
        return Err(Error::shape(
            format!("{}x{}", probs.rows(), probs.cols()),
            format!("{}x{}", targets.rows(), targets.cols()),
        ));
    }
    let total: f64 = probs
        .as_slice()
        .iter()
        .zip(targets.as_slice())
        .map(|(&p, &t)| if t == 0.0 { 0.0 } else { -t * p.max(LOG_FLOOR).ln() })
        .sum();
    Ok(total / probs.rows() as f64)
}

/// Same tree shape as an [`Mlp`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
    pub heads: BTreeMap<String, Dense>,
}

impl Gradients {
    /// Every gradient entry in the canonical parameter order of
    /// [`Mlp::params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for d in self.layers.iter().chain(self.heads.values()) {
            out.extend_from_slice(d.weight.as_slice());
            out.extend_from_slice(&d.bias);
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.flatten().iter().all(|&g| g == 0.0)
    }
}

/// One cross-entropy term of a weighted multi-head loss.
#[derive(Debug, Clone, Copy)]
pub struct LossTerm<'a> {
    pub head: &'a str,
    /// Index into the batch list passed to [`Mlp::backward`].
    pub batch: usize,
    pub targets: &'a Matrix,
    pub coeff: f64,
}

#[derive(Debug, Clone)]
pub struct BackwardOutput {
    /// `Σ coeff · CE` over all terms.
    pub loss: f64,
    /// Unweighted CE of each term, in input order.
    pub term_losses: Vec<f64>,
    pub grads: Gradients,
}

/// SGD settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainHyper {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper { learning_rate: 0.01, weight_decay: 1e-4, batch_size: 128, epochs: 10, seed: 0 }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidArgument("learning_rate must be > 0".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument("weight_decay must be >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

struct Trace {
    /// Layer inputs followed by the final features: `acts[0] = x`.
    acts: Vec<Matrix>,
    pre: Vec<Matrix>,
}

impl Mlp {
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn feature_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim, |l| l.dense.out_dim())
    }

    pub fn hidden_dims(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.dense.out_dim()).collect()
    }

    pub fn layers(&self) -> &[FeatureLayer] {
        &self.layers
    }

    pub fn heads(&self) -> &BTreeMap<String, Dense> {
        &self.heads
    }

    pub fn head_names(&self) -> Vec<&str> {
        self.heads.keys().map(String::as_str).collect()
    }

    pub fn has_head(&self, name: &str) -> bool {
        self.heads.contains_key(name)
    }

    pub fn head_classes(&self, name: &str) -> Option<usize> {
        self.heads.get(name).map(Dense::out_dim)
    }

    /// Adds (or replaces) a head, initialized from `(seed, name)`.
    pub fn add_head(&mut self, name: &str, classes: usize, seed: u64) -> Result<()> {
        if classes == 0 {
            return Err(Error::InvalidArgument("head needs at least one class".into()));
        }
        let mut rng = seed::rng(seed::derive(seed, &["head", name]));
        self.heads.insert(name.to_string(), Dense::init(self.feature_dim(), classes, &mut rng));
        Ok(())
    }

    pub fn remove_head(&mut self, name: &str) -> Option<Dense> {
        self.heads.remove(name)
    }

    /// Drops every head except `keep`.
    pub fn retain_head(&mut self, keep: &str) {
        self.heads.retain(|k, _| k == keep);
    }

    /// Reassembles a model from stored parameters, checking shapes.
    pub fn from_parts(
        input_dim: usize,
        layers: Vec<FeatureLayer>,
        heads: BTreeMap<String, Dense>,
    ) -> Result<Self> {
        let mut fan_in = input_dim;
        for (i, l) in layers.iter().enumerate() {
            if l.dense.in_dim() != fan_in || l.dense.bias.len() != l.dense.out_dim() {
                return Err(Error::shape(format!("layer {i} input {fan_in}"), l.dense.in_dim()));
            }
            fan_in = l.dense.out_dim();
        }
        for (name, h) in &heads {
            if h.in_dim() != fan_in || h.bias.len() != h.out_dim() {
                return Err(Error::shape(format!("head {name} input {fan_in}"), h.in_dim()));
            }
        }
        if input_dim == 0 {
            return Err(Error::InvalidArgument("input_dim must be positive".into()));
        }
        Ok(Mlp { input_dim, layers, heads })
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim {
            return Err(Error::shape(format!("{} input columns", self.input_dim), x.cols()));
        }
        Ok(())
    }

    fn trace(&self, x: &Matrix) -> Trace {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        acts.push(x.clone());
        for l in &self.layers {
            let z = l.dense.apply(acts.last().expect("non-empty"));
            let a = z.map(|v| l.activation.apply(v));
            pre.push(z);
            acts.push(a);
        }
        Trace { acts, pre }
    }

    /// Feature representation `φ(x)`.
    pub fn features(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        Ok(self.trace(x).acts.pop().expect("non-empty"))
    }

    pub fn predict(&self, x: &Matrix, head: &str) -> Result<Matrix> {
        let h = self.heads.get(head).ok_or_else(|| Error::MissingHead(head.to_string()))?;
        Ok(softmax_rows(&h.apply(&self.features(x)?)))
    }

    pub fn forward(&self, x: &Matrix) -> Result<ForwardOutput> {
        let features = self.features(x)?;
        let probs = self
            .heads
            .iter()
            .map(|(name, h)| (name.clone(), softmax_rows(&h.apply(&features))))
            .collect();
        Ok(ForwardOutput { features, probs })
    }

    /// Loss and exact gradient of `Σ_k coeff_k · CE(head_k(φ(batch_k)), targets_k)`.
    pub fn backward(&self, batches: &[&Matrix], terms: &[LossTerm<'_>]) -> Result<BackwardOutput> {
        if terms.is_empty() {
            return Err(Error::InvalidArgument("no loss terms".into()));
        }
        if terms.iter().any(|t| t.batch >= batches.len()) {
            return Err(Error::InvalidArgument("loss term references a missing batch".into()));
        }
        for b in batches {
            self.check_input(b)?;
        }
        let mut grads = Gradients {
            layers: self.layers.iter().map(|l| l.dense.zeros_like()).collect(),
            heads: self.heads.iter().map(|(k, h)| (k.clone(), h.zeros_like())).collect(),
        };
        let mut term_losses = vec![0.0; terms.len()];
        let mut loss = 0.0;

        for (b, batch) in batches.iter().enumerate() {
            let batch_terms: Vec<usize> = (0..terms.len()).filter(|&k| terms[k].batch == b).collect();
            if batch_terms.is_empty() {
                continue;
            }
            let trace = self.trace(batch);
            let feats = trace.acts.last().expect("non-empty");
            let n = batch.rows() as f64;
            let mut d_feat = Matrix::zeros(feats.rows(), feats.cols());
            for &k in &batch_terms {
                let t = &terms[k];
                let head = self.heads.get(t.head).ok_or_else(|| Error::MissingHead(t.head.to_string()))?;
                let probs = softmax_rows(&head.apply(feats));
                let ce = cross_entropy(&probs, t.targets)?;
                term_losses[k] = ce;
                loss += t.coeff * ce;
                if t.coeff == 0.0 {
                    continue;
                }
                // d/dz of coeff · mean CE with softmax outputs and unit-sum targets
                let mut d_logits = probs;
                for (d, &y) in d_logits.as_mut_slice().iter_mut().zip(t.targets.as_slice()) {
                    *d = t.coeff * (*d - y) / n;
                }
                let g = grads.heads.get_mut(t.head).expect("mirrors heads");
                accumulate_dense(g, feats, &d_logits);
                let back = d_logits.matmul(&head.weight.transpose())?;
                for (a, v) in d_feat.as_mut_slice().iter_mut().zip(back.as_slice()) {
                    *a += v;
                }
            }
            let mut upstream = d_feat;
            for (i, layer) in self.layers.iter().enumerate().rev() {
                let z = &trace.pre[i];
                let a = &trace.acts[i + 1];
                let mut dz = upstream;
                for ((d, &zv), &av) in dz.as_mut_slice().iter_mut().zip(z.as_slice()).zip(a.as_slice()) {
                    *d *= layer.activation.derivative(zv, av);
                }
                accumulate_dense(&mut grads.layers[i], &trace.acts[i], &dz);
                upstream = dz.matmul(&layer.dense.weight.transpose())?;
            }
        }
        Ok(BackwardOutput { loss, term_losses, grads })
    }

    /// `θ ← θ - lr·(g + wd·θ)` for weights, `θ ← θ - lr·g` for biases.
    pub fn sgd_step(&mut self, grads: &Gradients, hyper: &TrainHyper) -> Result<()> {
        let congruent = grads.layers.len() == self.layers.len()
            && grads.layers.iter().zip(&self.layers).all(|(g, l)| g.same_shape(&l.dense))
            && grads.heads.len() == self.heads.len()
            && grads
                .heads
                .iter()
                .all(|(k, g)| self.heads.get(k).is_some_and(|h| h.same_shape(g)));
        if !congruent {
            return Err(Error::shape("gradients congruent with model", "different shapes"));
        }
        let (lr, wd) = (hyper.learning_rate, hyper.weight_decay);
        let update = |p: &mut Dense, g: &Dense| {
            for (w, gw) in p.weight.as_mut_slice().iter_mut().zip(g.weight.as_slice()) {
                *w -= lr * (gw + wd * *w);
            }
            for (b, gb) in p.bias.iter_mut().zip(&g.bias) {
                *b -= lr * gb;
            }
        };
        for (l, g) in self.layers.iter_mut().zip(&grads.layers) {
            update(&mut l.dense, g);
        }
        for (k, g) in &grads.heads {
            update(self.heads.get_mut(k).expect("checked"), g);
        }
        Ok(())
    }

    /// All parameters in canonical order: trunk layers, then heads by name;
    /// within each, weights row-major then biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for d in self.layers.iter().map(|l| &l.dense).chain(self.heads.values()) {
            out.extend_from_slice(d.weight.as_slice());
            out.extend_from_slice(&d.bias);
        }
        out
    }

    /// Mutable access to parameter `index` in [`Mlp::params`] order.
    pub fn param_mut(&mut self, mut index: usize) -> Option<&mut f64> {
        let denses = self.layers.iter_mut().map(|l| &mut l.dense).chain(self.heads.values_mut());
        for d in denses {
            let nw = d.weight.as_slice().len();
            if index < nw {
                return Some(&mut d.weight.as_mut_slice()[index]);
            }
            index -= nw;
            if index < d.bias.len() {
                return Some(&mut d.bias[index]);
            }
            index -= d.bias.len();
        }
        None
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| &l.dense)
            .chain(self.heads.values())
            .map(|d| d.weight.as_slice().len() + d.bias.len())
            .sum()
    }
}

fn accumulate_dense(g: &mut Dense, input: &Matrix, d_out: &Matrix) {
    let gw = input.t_matmul(d_out).expect("batch rows agree");
    for (a, v) in g.weight.as_mut_slice().iter_mut().zip(gw.as_slice()) {
        *a += v;
    }
    for row in d_out.row_iter() {
        for (b, v) in g.bias.iter_mut().zip(row) {
            *b += v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Mlp {
        init_mlp(
            3,
            &[4],
            Activation::Tanh,
            &[HeadSpec::new(TARGET_HEAD, 3), HeadSpec::new("aux0", 5)],
            11,
        )
        .unwrap()
    }

    fn batch() -> Matrix {
        Matrix::from_rows(&[[0.1, -0.4, 0.9], [1.2, 0.3, -0.5], [-0.7, 0.8, 0.2]]).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let m = toy();
        assert_eq!(m, toy());
        assert_eq!(m.head_classes(TARGET_HEAD), Some(3));
        assert_eq!(m.head_classes("aux0"), Some(5));
        let linear = init_mlp(5, &[], Activation::Tanh, &[HeadSpec::new("t", 2)], 0).unwrap();
        assert_eq!(linear.feature_dim(), 5);
        assert!(init_mlp(0, &[], Activation::Tanh, &[], 0).is_err());
        assert!(init_mlp(2, &[0], Activation::Tanh, &[], 0).is_err());
    }

    #[test]
    fn bias_starts_at_zero_and_weights_are_bounded() {
        let m = init_mlp(16, &[8], Activation::Relu, &[HeadSpec::new("t", 2)], 3).unwrap();
        let l = &m.layers()[0].dense;
        assert!(l.bias.iter().all(|&b| b == 0.0));
        assert!(l.weight.as_slice().iter().all(|w| w.abs() <= 0.25));
    }

    #[test]
    fn zero_weights_give_uniform_probs() {
        let mut m = toy();
        for i in 0..m.num_params() {
            *m.param_mut(i).unwrap() = 0.0;
        }
        let out = m.forward(&batch()).unwrap();
        assert!(out.probs[TARGET_HEAD].as_slice().iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-15));
        assert!(out.probs["aux0"].as_slice().iter().all(|p| (p - 0.2).abs() < 1e-15));
    }

    #[test]
    fn batch_of_one_matches_row_of_batch() {
        let m = toy();
        let x = batch();
        let full = m.forward(&x).unwrap();
        for r in 0..x.rows() {
            let single = m.forward(&x.select_rows(&[r])).unwrap();
            assert_eq!(single.features.row(0), full.features.row(r));
            assert_eq!(single.probs[TARGET_HEAD].row(0), full.probs[TARGET_HEAD].row(r));
        }
        for row in full.probs[TARGET_HEAD].row_iter() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!(m.forward(&Matrix::zeros(2, 4)).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        let uniform = Matrix::filled(2, 2, 0.5);
        let y = Matrix::one_hot(&[0, 1], 2).unwrap();
        assert!((cross_entropy(&uniform, &y).unwrap() - 2f64.ln()).abs() < 1e-15);
        let soft = Matrix::from_rows(&[[0.2, 0.8]]).unwrap();
        let h = -(0.2f64 * 0.2f64.ln() + 0.8 * 0.8f64.ln());
        assert!((cross_entropy(&soft, &soft).unwrap() - h).abs() < 1e-15);
        assert_eq!(cross_entropy(&y, &y).unwrap(), 0.0);
        assert!(cross_entropy(&y, &Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn zero_coefficients_give_zero_gradients() {
        let m = toy();
        let x = batch();
        let y = Matrix::one_hot(&[0, 2, 1], 3).unwrap();
        let out = m
            .backward(&[&x], &[LossTerm { head: TARGET_HEAD, batch: 0, targets: &y, coeff: 0.0 }])
            .unwrap();
        assert!(out.grads.is_zero());
        assert_eq!(out.loss, 0.0);
    }

    #[test]
    fn doubling_coefficient_doubles_gradient() {
        let m = toy();
        let x = batch();
        let y = Matrix::one_hot(&[0, 2, 1], 3).unwrap();
        let g1 = m
            .backward(&[&x], &[LossTerm { head: TARGET_HEAD, batch: 0, targets: &y, coeff: 0.5 }])
            .unwrap()
            .grads
            .flatten();
        let g2 = m
            .backward(&[&x], &[LossTerm { head: TARGET_HEAD, batch: 0, targets: &y, coeff: 1.0 }])
            .unwrap()
            .grads
            .flatten();
        for (a, b) in g1.iter().zip(&g2) {
            assert!((2.0 * a - b).abs() <= 1e-15 * b.abs().max(1.0));
        }
    }

    #[test]
    fn inactive_head_gets_no_gradient() {
        let m = toy();
        let x = batch();
        let soft = m.predict(&x, "aux0").unwrap().map(|p| 1.0 - p).scale(0.25);
        let out = m
            .backward(&[&x], &[LossTerm { head: "aux0", batch: 0, targets: &soft, coeff: 1.0 }])
            .unwrap();
        let target = &out.grads.heads[TARGET_HEAD];
        assert!(target.weight.as_slice().iter().all(|&g| g == 0.0));
        assert!(target.bias.iter().all(|&g| g == 0.0));
        assert!(!out.grads.heads["aux0"].bias.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn missing_head_is_reported() {
        let m = toy();
        let x = batch();
        let y = Matrix::one_hot(&[0, 1, 0], 2).unwrap();
        let err = m.backward(&[&x], &[LossTerm { head: "aux9", batch: 0, targets: &y, coeff: 1.0 }]);
        assert!(matches!(err, Err(Error::MissingHead(h)) if h == "aux9"));
    }

    #[test]
    fn sgd_step_examples() {
        let hyper = |lr, wd| TrainHyper { learning_rate: lr, weight_decay: wd, ..TrainHyper::default() };
        let m0 = toy();
        let zero = Gradients {
            layers: m0.layers.iter().map(|l| l.dense.zeros_like()).collect(),
            heads: m0.heads.iter().map(|(k, h)| (k.clone(), h.zeros_like())).collect(),
        };

        let mut m = m0.clone();
        m.sgd_step(&zero, &hyper(0.1, 0.0)).unwrap();
        assert_eq!(m, m0);

        // g = θ with lr 1 zeroes everything
        let mut m = m0.clone();
        let mut g = zero.clone();
        for (gl, l) in g.layers.iter_mut().zip(&m0.layers) {
            *gl = l.dense.clone();
        }
        for (k, h) in &m0.heads {
            g.heads.insert(k.clone(), h.clone());
        }
        m.sgd_step(&g, &hyper(1.0, 0.0)).unwrap();
        assert!(m.params().iter().all(|&p| p == 0.0));

        // decay shrinks weights only
        let mut m = m0.clone();
        m.layers[0].dense.bias[0] = 0.5;
        m.sgd_step(&zero, &hyper(0.1, 0.01)).unwrap();
        let w0 = m0.layers[0].dense.weight.as_slice()[0];
        assert_eq!(m.layers[0].dense.weight.as_slice()[0], w0 - 0.1 * (0.0 + 0.01 * w0));
        assert_eq!(m.layers[0].dense.bias[0], 0.5);

        let mut other = init_mlp(3, &[5], Activation::Tanh, &[HeadSpec::new(TARGET_HEAD, 3)], 0).unwrap();
        assert!(other.sgd_step(&zero, &hyper(0.1, 0.0)).is_err());
    }
}
