//! Baseline and multi-head trainers.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{Dataset, Split};
use crate::mhml::{build_weight_scheme, default_weights, AveragingMode, Checkpoint, MultiHeadModel, WeightScheme};
use crate::nn::{sgd_step, softmax_rows, Matrix, OptimizerState};
use crate::{Error, Result};

/// RNG stream for mini-batch shuffling; model initialization uses streams
/// `0..=M` of the same seed.
const SHUFFLE_STREAM: u64 = 1 << 32;
const ENSEMBLE_STREAM: u64 = (1 << 32) + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MethodKind {
    #[serde(rename = "SL1H")]
    Sl1h,
    #[serde(rename = "LS")]
    Ls,
    #[serde(rename = "D-Ens")]
    DEns,
    #[serde(rename = "2HSL")]
    TwoHsl,
    #[serde(rename = "2HML")]
    TwoHml,
    #[serde(rename = "4HML")]
    FourHml,
}

impl MethodKind {
    pub const ALL: [MethodKind; 6] = [
        MethodKind::Sl1h,
        MethodKind::Ls,
        MethodKind::DEns,
        MethodKind::TwoHsl,
        MethodKind::TwoHml,
        MethodKind::FourHml,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodKind::Sl1h => "SL1H",
            MethodKind::Ls => "LS",
            MethodKind::DEns => "D-Ens",
            MethodKind::TwoHsl => "2HSL",
            MethodKind::TwoHml => "2HML",
            MethodKind::FourHml => "4HML",
        }
    }

    /// Head count unless overridden.
    pub fn default_heads(self) -> usize {
        match self {
            MethodKind::Sl1h | MethodKind::Ls | MethodKind::DEns => 1,
            MethodKind::TwoHsl | MethodKind::TwoHml => 2,
            MethodKind::FourHml => 4,
        }
    }

    pub fn is_multi_head(self) -> bool {
        self.default_heads() > 1
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        MethodKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown method {s:?}; expected one of {}",
                    MethodKind::ALL.map(|k| k.name()).join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub kind: MethodKind,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::lr")]
    pub lr: f64,
    #[serde(default = "defaults::momentum")]
    pub momentum: f64,
    #[serde(default = "defaults::hidden")]
    pub hidden: Vec<usize>,
    /// Label-smoothing strength (LS only).
    #[serde(default = "defaults::ls_epsilon")]
    pub ls_epsilon: f64,
    /// Number of members (D-Ens only).
    #[serde(default = "defaults::ensemble_size")]
    pub ensemble_size: usize,
    /// Head-count override for the multi-head kinds.
    #[serde(default)]
    pub heads: Option<usize>,
    /// Weight overrides for 2HML/4HML; defaults are `(M, 1/M)`.
    #[serde(default)]
    pub w_hi: Option<f64>,
    #[serde(default)]
    pub w_lo: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

mod defaults {
    pub fn epochs() -> usize {
        40
    }
    pub fn batch_size() -> usize {
        128
    }
    pub fn lr() -> f64 {
        1e-2
    }
    pub fn momentum() -> f64 {
        0.9
    }
    pub fn hidden() -> Vec<usize> {
        vec![64, 64]
    }
    pub fn ls_epsilon() -> f64 {
        0.1
    }
    pub fn ensemble_size() -> usize {
        5
    }
}

impl MethodConfig {
    pub fn new(kind: MethodKind) -> Self {
        Self {
            kind,
            epochs: defaults::epochs(),
            batch_size: defaults::batch_size(),
            lr: defaults::lr(),
            momentum: defaults::momentum(),
            hidden: defaults::hidden(),
            ls_epsilon: defaults::ls_epsilon(),
            ensemble_size: defaults::ensemble_size(),
            heads: None,
            w_hi: None,
            w_lo: None,
            seed: 0,
        }
    }

    pub fn heads(&self) -> usize {
        self.heads.unwrap_or(self.kind.default_heads())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(format!("{}: {m}", self.kind)));
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return fail(format!("lr must be non-negative, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.hidden.contains(&0) {
            return fail("hidden widths must be positive".into());
        }
        if self.heads.is_some() && !self.kind.is_multi_head() {
            return fail("a head-count override applies only to 2HSL, 2HML and 4HML".into());
        }
        if self.heads == Some(0) {
            return fail("heads must be at least 1".into());
        }
        if (self.w_hi.is_some() || self.w_lo.is_some())
            && !matches!(self.kind, MethodKind::TwoHml | MethodKind::FourHml)
        {
            return fail("weight overrides apply only to 2HML and 4HML".into());
        }
        if !(0.0..1.0).contains(&self.ls_epsilon) {
            return fail(format!("ls_epsilon must lie in [0, 1), got {}", self.ls_epsilon));
        }
        if self.kind == MethodKind::DEns && self.ensemble_size < 2 {
            return fail(format!("ensemble_size must be at least 2, got {}", self.ensemble_size));
        }
        Ok(())
    }

    fn scheme(&self, classes: usize) -> Result<WeightScheme> {
        let m = self.heads();
        match self.kind {
            MethodKind::Sl1h | MethodKind::Ls | MethodKind::DEns => WeightScheme::uniform(classes, 1, 0.0),
            MethodKind::TwoHsl => WeightScheme::uniform(classes, m, 1.0),
            MethodKind::TwoHml | MethodKind::FourHml => {
                let (hi, lo) = default_weights(m);
                build_weight_scheme(classes, m, self.w_hi.unwrap_or(hi), self.w_lo.unwrap_or(lo), self.seed)
            }
        }
    }
}

/// A trained single model or ensemble.
#[derive(Debug, Clone, PartialEq)]
pub enum Predictor {
    Single(MultiHeadModel),
    /// Members' softmax outputs are averaged.
    Ensemble(Vec<MultiHeadModel>),
}

impl Predictor {
    pub fn models(&self) -> &[MultiHeadModel] {
        match self {
            Predictor::Single(m) => std::slice::from_ref(m),
            Predictor::Ensemble(ms) => ms,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.models()[0].num_classes()
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Self {
        let mut models = ckpt.models;
        if models.len() == 1 {
            Predictor::Single(models.remove(0))
        } else {
            Predictor::Ensemble(models)
        }
    }

    pub fn to_checkpoint(&self, method: &str) -> Checkpoint {
        Checkpoint::new(method, self.models().to_vec())
    }

    /// Combined probabilities: each model in its own averaging mode, then
    /// the mean over ensemble members.
    pub fn probs(&self, x: &Matrix) -> Result<Matrix> {
        self.average(x, |m, x| Ok(m.forward(x)?.0.p_mean))
    }

    /// Mean logits: `mean_m z^m` per model, then the mean over members.
    pub fn mean_logits(&self, x: &Matrix) -> Result<Matrix> {
        self.average(x, |m, x| Ok(m.forward(x)?.0.mean_logits()))
    }

    /// `softmax` of the mean logits, the prediction temperature scaling acts on.
    pub fn logit_average_probs(&self, x: &Matrix) -> Result<Matrix> {
        softmax_rows(&self.mean_logits(x)?)
    }

    fn average(&self, x: &Matrix, f: impl Fn(&MultiHeadModel, &Matrix) -> Result<Matrix>) -> Result<Matrix> {
        let models = self.models();
        let mut acc = f(&models[0], x)?;
        for m in &models[1..] {
            for (a, v) in acc.data_mut().iter_mut().zip(f(m, x)?.data()) {
                *a += v;
            }
        }
        let inv = 1.0 / models.len() as f64;
        for a in acc.data_mut() {
            *a *= inv;
        }
        Ok(acc)
    }
}

enum Objective {
    /// The multi-head loss with the model's own weight scheme.
    MultiHead,
    /// Cross-entropy against `(1 − ε)·onehot + ε/K` on a single head.
    Smoothed(f64),
}

fn fit(model: &mut MultiHeadModel, train: &Split, cfg: &MethodConfig, objective: Objective) -> Result<()> {
    if cfg.epochs > 0 && train.is_empty() {
        return Err(Error::Input("training split is empty".into()));
    }
    let classes = model.num_classes();
    let mut opt = OptimizerState::new(cfg.lr, cfg.momentum, model.layers());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for idx in order.chunks(cfg.batch_size) {
            let x = train.x.select_rows(idx);
            let y: Vec<usize> = idx.iter().map(|&i| train.y[i]).collect();
            let (outputs, trace) = model.forward(&x)?;
            let grads = match objective {
                Objective::MultiHead => model.backward(&trace, &outputs, &y)?,
                Objective::Smoothed(eps) => {
                    let inv_b = 1.0 / y.len() as f64;
                    let off = eps / classes as f64;
                    let mut g = outputs.p_heads[0].clone();
                    for (row, &label) in y.iter().enumerate() {
                        for (j, v) in g.row_mut(row).iter_mut().enumerate() {
                            let target = if j == label { 1.0 - eps + off } else { off };
                            *v = (*v - target) * inv_b;
                        }
                    }
                    model.backward_from_logit_grads(&trace, &[g])?
                }
            };
            sgd_step(model.layers_mut(), grads.layers(), &mut opt)?;
        }
        if !model.layers().all(|l| l.is_finite()) {
            return Err(Error::Input(format!(
                "{}: parameters diverged to non-finite values in epoch {}",
                cfg.kind,
                epoch + 1
            )));
        }
    }
    Ok(())
}

fn train_single(cfg: &MethodConfig, data: &Dataset, objective: Objective) -> Result<MultiHeadModel> {
    let scheme = cfg.scheme(data.classes)?;
    let mut model = MultiHeadModel::new(data.dim(), &cfg.hidden, scheme, AveragingMode::ProbAverage, cfg.seed)?;
    fit(&mut model, &data.train, cfg, objective)?;
    Ok(model)
}

/// Trains one method. SL1H is the one-head case of the multi-head loss with
/// zero head weight, i.e. plain cross-entropy; LS replaces the one-hot
/// target by its smoothed version.
pub fn train_method(cfg: &MethodConfig, data: &Dataset) -> Result<Predictor> {
    cfg.validate()?;
    match cfg.kind {
        MethodKind::DEns => train_deep_ensemble(cfg, data),
        MethodKind::Ls => Ok(Predictor::Single(train_single(cfg, data, Objective::Smoothed(cfg.ls_epsilon))?)),
        _ => Ok(Predictor::Single(train_single(cfg, data, Objective::MultiHead)?)),
    }
}

/// Seeds of the `E` ensemble members, derived from the config seed.
pub fn member_seeds(seed: u64, members: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(ENSEMBLE_STREAM);
    (0..members).map(|_| rng.next_u64()).collect()
}

pub fn train_deep_ensemble(cfg: &MethodConfig, data: &Dataset) -> Result<Predictor> {
    if cfg.ensemble_size < 2 {
        return Err(Error::Config(format!(
            "deep ensemble needs at least 2 members, got {}",
            cfg.ensemble_size
        )));
    }
    train_ensemble_members(cfg, data, &member_seeds(cfg.seed, cfg.ensemble_size))
}

/// Trains one SL1H member per seed.
pub fn train_ensemble_members(cfg: &MethodConfig, data: &Dataset, seeds: &[u64]) -> Result<Predictor> {
    let members = seeds
        .iter()
        .map(|&seed| {
            let member = MethodConfig {
                kind: MethodKind::Sl1h,
                seed,
                ..cfg.clone()
            };
            train_single(&member, data, Objective::MultiHead)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Predictor::Ensemble(members))
}
