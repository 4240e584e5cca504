//! Multi-head multi-loss classifier.
//!
//! A shared backbone produces features that `M` linear heads map to logits
//! `z^m`. Each head's softmax `p^m` is supervised by its own weighted
//! cross-entropy, and the averaged prediction `p^μ` by a plain cross-entropy:
//!
//! ```text
//! L = CE(p^μ, y) + Σ_m ω^m_y · CE(p^m, y)
//! ```
//!
//! With `p^μ` the mean of the head probabilities, the gradient reaching head
//! `m` is
//!
//! ```text
//! ∂L/∂z^m = (ω^m_y + p^m_y / Σ_i p^i_y) · (p^m − onehot(y))
//! ```
//!
//! Note the direction vector is the head's own `p^m`, not `p^μ`: the chain
//! rule through `softmax(z^m)` only ever produces `p^m`. The finite-difference
//! harness in [`crate::gradcheck`] confirms this form.

use std::fmt;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, mlp_backward, mlp_forward, ForwardTrace, Layer, Matrix, MlpParams};

/// Smallest probability fed to a logarithm.
pub const LOG_CLAMP: f64 = 1e-12;

/// How head outputs are combined into the final prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AveragingMode {
    /// `p^μ = mean_m softmax(z^m)`; the training mode.
    ProbAverage,
    /// `p^μ = softmax(mean_m z^m)`; lets a single temperature act on logits.
    LogitAverage,
}

impl AveragingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AveragingMode::ProbAverage => "prob-average",
            AveragingMode::LogitAverage => "logit-average",
        }
    }
}

impl fmt::Display for AveragingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AveragingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prob-average" => Ok(AveragingMode::ProbAverage),
            "logit-average" => Ok(AveragingMode::LogitAverage),
            other => Err(Error::Config(format!(
                "unknown averaging mode {other:?} (expected prob-average or logit-average)"
            ))),
        }
    }
}

/// Per-head class weights. Head `m` specializes in the classes assigned to it,
/// which receive `w_hi` in `ω^m`; every other class receives `w_lo`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightScheme {
    classes: usize,
    heads: usize,
    w_hi: f64,
    w_lo: f64,
    seed: Option<u64>,
    /// `assignment[j]` is the head specializing in class `j`.
    assignment: Vec<usize>,
    vectors: Vec<Vec<f64>>,
}

/// Default `(w_hi, w_lo)` for `M` heads: `(M, 1/M)`.
pub fn default_weights(heads: usize) -> (f64, f64) {
    let m = heads as f64;
    (m, 1.0 / m)
}

/// Shuffles the classes with a seeded RNG, deals contiguous blocks of
/// `K / M` classes to the heads, then hands the `K mod M` leftover classes
/// one each to distinct randomly chosen heads.
pub fn build_weight_scheme(
    classes: usize,
    heads: usize,
    w_hi: f64,
    w_lo: f64,
    seed: u64,
) -> Result<WeightScheme> {
    if heads == 0 || heads > classes {
        return Err(Error::Config(format!(
            "need 1 <= heads <= classes, got {heads} heads for {classes} classes"
        )));
    }
    if !(w_lo > 0.0 && w_hi > w_lo && w_hi.is_finite()) {
        return Err(Error::Config(format!(
            "need w_hi > w_lo > 0, got w_hi = {w_hi}, w_lo = {w_lo}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..classes).collect();
    order.shuffle(&mut rng);

    let block = classes / heads;
    let mut assignment = vec![0; classes];
    for (pos, &class) in order[..block * heads].iter().enumerate() {
        assignment[class] = pos / block;
    }
    let leftover = &order[block * heads..];
    let takers = index::sample(&mut rng, heads, leftover.len());
    for (&class, head) in leftover.iter().zip(takers.iter()) {
        assignment[class] = head;
    }
    let mut scheme = WeightScheme::from_assignment(classes, heads, w_hi, w_lo, assignment)?;
    scheme.seed = Some(seed);
    Ok(scheme)
}

impl WeightScheme {
    /// Scheme with an explicit class → head map.
    pub fn from_assignment(
        classes: usize,
        heads: usize,
        w_hi: f64,
        w_lo: f64,
        assignment: Vec<usize>,
    ) -> Result<Self> {
        let scheme = Self {
            classes,
            heads,
            w_hi,
            w_lo,
            seed: None,
            vectors: build_vectors(classes, heads, w_hi, w_lo, &assignment),
            assignment,
        };
        scheme.validate()?;
        Ok(scheme)
    }

    /// Every head weights every class by `weight`. Classes are dealt round
    /// robin, so the covering invariants hold even when `heads > classes`.
    /// `weight = 0` switches off the per-head terms of the loss.
    pub fn uniform(classes: usize, heads: usize, weight: f64) -> Result<Self> {
        let assignment = (0..classes).map(|j| j % heads.max(1)).collect();
        Self::from_assignment(classes, heads, weight, weight, assignment)
    }

    pub fn validate(&self) -> Result<()> {
        let (k, m) = (self.classes, self.heads);
        if k == 0 || m == 0 {
            return Err(Error::Config("scheme needs at least one class and one head".into()));
        }
        if !(self.w_hi >= 0.0 && self.w_lo >= 0.0 && self.w_hi.is_finite() && self.w_lo.is_finite()) {
            return Err(Error::Config(format!(
                "scheme weights must be finite and non-negative (w_hi = {}, w_lo = {})",
                self.w_hi, self.w_lo
            )));
        }
        if self.assignment.len() != k {
            return Err(Error::shape("WeightScheme assignment", k, self.assignment.len()));
        }
        let mut load = vec![0usize; m];
        for (class, &head) in self.assignment.iter().enumerate() {
            if head >= m {
                return Err(Error::Config(format!(
                    "class {class} assigned to head {head} of {m}"
                )));
            }
            load[head] += 1;
        }
        let floor = k / m;
        if let Some(h) = load.iter().position(|&c| c != floor && c != floor + 1) {
            return Err(Error::Config(format!(
                "head {h} specializes {} classes; expected {floor} or {}",
                load[h],
                floor + 1
            )));
        }
        if self.vectors != build_vectors(k, m, self.w_hi, self.w_lo, &self.assignment) {
            return Err(Error::Config("weight vectors disagree with the assignment".into()));
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn w_hi(&self) -> f64 {
        self.w_hi
    }

    pub fn w_lo(&self) -> f64 {
        self.w_lo
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    /// `ω^m` for every head.
    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn weight(&self, head: usize, class: usize) -> f64 {
        self.vectors[head][class]
    }

    /// Classes head `m` specializes in, ascending.
    pub fn specialized_classes(&self, head: usize) -> Vec<usize> {
        (0..self.classes)
            .filter(|&j| self.assignment[j] == head)
            .collect()
    }

    /// Same scheme with heads reordered: new head `i` is old head `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let mut inverse = vec![usize::MAX; self.heads];
        if order.len() != self.heads {
            return Err(Error::shape("head permutation", self.heads, order.len()));
        }
        for (new, &old) in order.iter().enumerate() {
            if old >= self.heads || inverse[old] != usize::MAX {
                return Err(Error::Input(format!("{order:?} is not a permutation")));
            }
            inverse[old] = new;
        }
        let assignment = self.assignment.iter().map(|&h| inverse[h]).collect();
        let mut scheme =
            Self::from_assignment(self.classes, self.heads, self.w_hi, self.w_lo, assignment)?;
        scheme.seed = self.seed;
        Ok(scheme)
    }
}

fn build_vectors(
    classes: usize,
    heads: usize,
    w_hi: f64,
    w_lo: f64,
    assignment: &[usize],
) -> Vec<Vec<f64>> {
    (0..heads)
        .map(|m| {
            (0..classes)
                .map(|j| if assignment.get(j) == Some(&m) { w_hi } else { w_lo })
                .collect()
        })
        .collect()
}

/// Logits and probabilities of every head for a batch, plus the combined
/// prediction. Each matrix is `batch × K`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs {
    pub mode: AveragingMode,
    pub z_heads: Vec<Matrix>,
    pub p_heads: Vec<Matrix>,
    pub p_mean: Matrix,
}

impl HeadOutputs {
    /// Builds outputs from per-head logits.
    pub fn from_logits(z_heads: Vec<Matrix>, mode: AveragingMode) -> Result<Self> {
        let first = z_heads
            .first()
            .ok_or_else(|| Error::Input("at least one head required".into()))?;
        let (rows, cols) = first.shape();
        for z in &z_heads {
            first.same_shape(z, "head logits")?;
        }
        let p_heads = z_heads.iter().map(nn::softmax_rows).collect::<Result<Vec<_>>>()?;
        let inv_m = 1.0 / z_heads.len() as f64;
        let mut acc = Matrix::zeros(rows, cols);
        let source = match mode {
            AveragingMode::ProbAverage => &p_heads,
            AveragingMode::LogitAverage => &z_heads,
        };
        for s in source {
            for (a, v) in acc.data_mut().iter_mut().zip(s.data()) {
                *a += v;
            }
        }
        for a in acc.data_mut() {
            *a *= inv_m;
        }
        let p_mean = match mode {
            AveragingMode::ProbAverage => acc,
            AveragingMode::LogitAverage => nn::softmax_rows(&acc)?,
        };
        Ok(Self {
            mode,
            z_heads,
            p_heads,
            p_mean,
        })
    }

    /// Single-sample outputs from one logit vector per head.
    pub fn from_sample_logits(z: &[Vec<f64>], mode: AveragingMode) -> Result<Self> {
        let z = z
            .iter()
            .map(|v| Matrix::from_vec(1, v.len(), v.clone()))
            .collect::<Result<Vec<_>>>()?;
        Self::from_logits(z, mode)
    }

    pub fn heads(&self) -> usize {
        self.z_heads.len()
    }

    pub fn batch_size(&self) -> usize {
        self.p_mean.rows()
    }

    pub fn classes(&self) -> usize {
        self.p_mean.cols()
    }

    /// `mean_m z^m`, the logits temperature scaling acts on.
    pub fn mean_logits(&self) -> Matrix {
        let mut acc = Matrix::zeros(self.batch_size(), self.classes());
        for z in &self.z_heads {
            for (a, v) in acc.data_mut().iter_mut().zip(z.data()) {
                *a += v;
            }
        }
        let inv_m = 1.0 / self.heads() as f64;
        for a in acc.data_mut() {
            *a *= inv_m;
        }
        acc
    }

    fn check(&self, labels: &[usize], scheme: &WeightScheme) -> Result<()> {
        if scheme.heads() != self.heads() {
            return Err(Error::shape("scheme heads", scheme.heads(), self.heads()));
        }
        if scheme.classes() != self.classes() {
            return Err(Error::shape("scheme classes", scheme.classes(), self.classes()));
        }
        if labels.len() != self.batch_size() {
            return Err(Error::shape("labels", self.batch_size(), labels.len()));
        }
        check_labels(labels, self.classes())
    }
}

pub(crate) fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    match labels.iter().find(|&&y| y >= classes) {
        Some(&label) => Err(Error::LabelOutOfRange { label, classes }),
        None => Ok(()),
    }
}

/// `−ω_y · log(max(p_y, 1e-12))`.
pub fn weighted_ce(p: &[f64], y: usize, omega: &[f64]) -> Result<f64> {
    if y >= p.len() {
        return Err(Error::LabelOutOfRange {
            label: y,
            classes: p.len(),
        });
    }
    if omega.len() != p.len() {
        return Err(Error::shape("weight vector", p.len(), omega.len()));
    }
    Ok(-omega[y] * p[y].max(LOG_CLAMP).ln())
}

/// `−log(max(p_y, 1e-12))`.
pub fn cross_entropy(p: &[f64], y: usize) -> Result<f64> {
    if y >= p.len() {
        return Err(Error::LabelOutOfRange {
            label: y,
            classes: p.len(),
        });
    }
    Ok(-p[y].max(LOG_CLAMP).ln())
}

/// Total multi-head loss averaged over the batch.
pub fn mh_loss(outputs: &HeadOutputs, labels: &[usize], scheme: &WeightScheme) -> Result<f64> {
    outputs.check(labels, scheme)?;
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let mut sample = -outputs.p_mean.get(i, y).max(LOG_CLAMP).ln();
        for (m, p) in outputs.p_heads.iter().enumerate() {
            sample -= scheme.weight(m, y) * p.get(i, y).max(LOG_CLAMP).ln();
        }
        total += sample;
    }
    Ok(total / labels.len() as f64)
}

/// Per-sample gradients of the multi-head loss with respect to each head's
/// logits. Row `i` of entry `m` is `∂L_i/∂z^m` for sample `i` (not divided by
/// the batch size).
pub fn mh_grad_logits(
    outputs: &HeadOutputs,
    labels: &[usize],
    scheme: &WeightScheme,
) -> Result<Vec<Matrix>> {
    if outputs.mode != AveragingMode::ProbAverage {
        return Err(Error::Mode {
            mode: outputs.mode.as_str(),
            reason: "the multi-head gradient assumes probability averaging; \
                     logit-average models are only used for inference"
                .into(),
        });
    }
    outputs.check(labels, scheme)?;
    let heads = outputs.heads();
    let (rows, cols) = outputs.p_mean.shape();
    let mut grads = vec![Matrix::zeros(rows, cols); heads];
    for (i, &y) in labels.iter().enumerate() {
        let mass: f64 = outputs.p_heads.iter().map(|p| p.get(i, y)).sum();
        for (m, (probs, grad)) in outputs.p_heads.iter().zip(grads.iter_mut()).enumerate() {
            let p = probs.row(i);
            let share = if mass > 0.0 {
                p[y] / mass
            } else {
                1.0 / heads as f64
            };
            let factor = scheme.weight(m, y) + share;
            let g = grad.row_mut(i);
            for (j, (gj, &pj)) in g.iter_mut().zip(p).enumerate() {
                let target = if j == y { 1.0 } else { 0.0 };
                *gj = factor * (pj - target);
            }
        }
    }
    Ok(grads)
}

/// Shared MLP backbone followed by `M` linear heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiHeadModel {
    pub backbone: MlpParams,
    pub heads: Vec<Layer>,
    pub scheme: WeightScheme,
    pub mode: AveragingMode,
}

/// Gradients mirroring [`MultiHeadModel`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub backbone: MlpParams,
    pub heads: Vec<Layer>,
}

impl ModelGrads {
    /// Backbone layers first, then heads; the order of [`MultiHeadModel::layers_mut`].
    pub fn layers(&self) -> impl Iterator<Item = &Layer> {
        self.backbone.layers.iter().chain(&self.heads)
    }

    pub fn is_zero(&self) -> bool {
        self.layers()
            .all(|l| l.weight.data().iter().chain(&l.bias).all(|&v| v == 0.0))
    }
}

/// Backbone activations plus the features the heads saw.
#[derive(Debug, Clone)]
pub struct ModelTrace {
    pub backbone: ForwardTrace,
}

impl ModelTrace {
    pub fn features(&self) -> &Matrix {
        self.backbone.features()
    }
}

/// Batch prediction: combined probabilities, confidence and predicted class.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probs: Matrix,
    pub confidence: Vec<f64>,
    pub predicted: Vec<usize>,
}

impl Prediction {
    pub fn from_probs(probs: Matrix) -> Self {
        let mut confidence = Vec::with_capacity(probs.rows());
        let mut predicted = Vec::with_capacity(probs.rows());
        for row in probs.iter_rows() {
            let j = nn::argmax(row);
            predicted.push(j);
            confidence.push(row[j]);
        }
        Self {
            probs,
            confidence,
            predicted,
        }
    }
}

impl MultiHeadModel {
    /// Backbone and every head draw from distinct streams of the same seed.
    pub fn new(
        input_dim: usize,
        hidden: &[usize],
        scheme: WeightScheme,
        mode: AveragingMode,
        seed: u64,
    ) -> Result<Self> {
        scheme.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let backbone = MlpParams::with_rng(input_dim, hidden, &mut rng)?;
        let features = backbone.output_dim();
        let heads = (0..scheme.heads())
            .map(|m| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(m as u64 + 1);
                Layer::glorot(features, scheme.classes(), &mut rng)
            })
            .collect();
        Ok(Self {
            backbone,
            heads,
            scheme,
            mode,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.scheme.validate()?;
        let backbone = MlpParams::from_layers(self.backbone.input_dim(), self.backbone.layers.clone())?;
        if self.heads.len() != self.scheme.heads() {
            return Err(Error::shape("model heads", self.scheme.heads(), self.heads.len()));
        }
        for head in &self.heads {
            if head.input_dim() != backbone.output_dim()
                || head.output_dim() != self.scheme.classes()
                || head.bias.len() != self.scheme.classes()
            {
                return Err(Error::shape(
                    "head layer",
                    format!("{}x{}", self.scheme.classes(), backbone.output_dim()),
                    format!("{}x{}", head.output_dim(), head.input_dim()),
                ));
            }
        }
        Ok(())
    }

    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    pub fn num_classes(&self) -> usize {
        self.scheme.classes()
    }

    pub fn input_dim(&self) -> usize {
        self.backbone.input_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.backbone.output_dim()
    }

    pub fn with_mode(&self, mode: AveragingMode) -> Self {
        Self {
            mode,
            ..self.clone()
        }
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Layer> {
        self.backbone.layers.iter_mut().chain(&mut self.heads)
    }

    pub fn layers(&self) -> impl Iterator<Item = &Layer> {
        self.backbone.layers.iter().chain(&self.heads)
    }

    /// Applies the heads to precomputed backbone features.
    pub fn forward_heads(&self, features: &Matrix) -> Result<HeadOutputs> {
        let z = self
            .heads
            .iter()
            .map(|h| h.apply(features))
            .collect::<Result<Vec<_>>>()?;
        HeadOutputs::from_logits(z, self.mode)
    }

    pub fn forward(&self, batch: &Matrix) -> Result<(HeadOutputs, ModelTrace)> {
        let (features, backbone) = mlp_forward(&self.backbone, batch)?;
        let outputs = self.forward_heads(&features)?;
        Ok((outputs, ModelTrace { backbone }))
    }

    /// Backpropagates per-sample logit gradients (already scaled as the
    /// caller wants them) through the heads and the backbone.
    pub fn backward_from_logit_grads(
        &self,
        trace: &ModelTrace,
        logit_grads: &[Matrix],
    ) -> Result<ModelGrads> {
        let features = trace.features();
        if logit_grads.len() != self.heads.len() {
            return Err(Error::shape("logit gradients", self.heads.len(), logit_grads.len()));
        }
        if features.cols() != self.feature_dim() {
            return Err(Error::shape("trace features", self.feature_dim(), features.cols()));
        }
        let mut heads = Vec::with_capacity(self.heads.len());
        let mut grad_features = Matrix::zeros(features.rows(), features.cols());
        for (head, g) in self.heads.iter().zip(logit_grads) {
            if g.shape() != (features.rows(), self.num_classes()) {
                return Err(Error::shape(
                    "logit gradient",
                    format!("{}x{}", features.rows(), self.num_classes()),
                    format!("{}x{}", g.rows(), g.cols()),
                ));
            }
            let mut hg = head.zeros_like();
            hg.accumulate_grad(g, features);
            heads.push(hg);
            nn::gemm(1.0, g, false, &head.weight, false, 1.0, &mut grad_features);
        }
        let (backbone, _) = mlp_backward(&self.backbone, &trace.backbone, &grad_features)?;
        Ok(ModelGrads { backbone, heads })
    }

    /// Gradient of the batch-mean multi-head loss for all parameters.
    pub fn backward(
        &self,
        trace: &ModelTrace,
        outputs: &HeadOutputs,
        labels: &[usize],
    ) -> Result<ModelGrads> {
        self.check_trace(trace, outputs)?;
        let mut grads = mh_grad_logits(outputs, labels, &self.scheme)?;
        let inv_b = 1.0 / labels.len() as f64;
        for g in &mut grads {
            for v in g.data_mut() {
                *v *= inv_b;
            }
        }
        self.backward_from_logit_grads(trace, &grads)
    }

    /// Rejects a trace that did not produce `outputs`: shapes must agree and
    /// head 0 applied to the first traced feature row must reproduce its logits.
    pub fn check_trace(&self, trace: &ModelTrace, outputs: &HeadOutputs) -> Result<()> {
        let features = trace.features();
        if features.rows() != outputs.batch_size()
            || outputs.heads() != self.num_heads()
            || features.cols() != self.feature_dim()
        {
            return Err(Error::Input(format!(
                "trace ({} samples, {} features) does not match outputs ({} samples, {} heads)",
                features.rows(),
                features.cols(),
                outputs.batch_size(),
                outputs.heads()
            )));
        }
        if features.rows() == 0 {
            return Ok(());
        }
        let first = features.select_rows(&[0]);
        let z = self.heads[0].apply(&first)?;
        let stale = z
            .row(0)
            .iter()
            .zip(outputs.z_heads[0].row(0))
            .any(|(a, b)| (a - b).abs() > 1e-9 * (1.0 + a.abs().max(b.abs())));
        if stale {
            return Err(Error::Input("stale trace: logits were not produced by this trace".into()));
        }
        Ok(())
    }

    pub fn predict(&self, batch: &Matrix) -> Result<Prediction> {
        let (outputs, _) = self.forward(batch)?;
        Ok(Prediction::from_probs(outputs.p_mean))
    }
}

const CHECKPOINT_FORMAT: &str = "mhml-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

/// On-disk model bundle: one model, or every member of an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub method: String,
    pub models: Vec<MultiHeadModel>,
}

impl Checkpoint {
    pub fn new(method: impl Into<String>, models: Vec<MultiHeadModel>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            method: method.into(),
            models,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text)?;
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Input(format!(
                "unsupported checkpoint {} v{}",
                ckpt.format, ckpt.version
            )));
        }
        if ckpt.models.is_empty() {
            return Err(Error::Input("checkpoint holds no models".into()));
        }
        for model in &ckpt.models {
            model.validate()?;
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Format {
            path: path.into(),
            message: e.to_string(),
        })
    }
}
