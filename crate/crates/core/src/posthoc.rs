//! Temperature scaling fitted on held-out logits.
//!
//! Multi-head models are scaled through their averaged logits: the
//! calibrated prediction is `softmax(mean_m z^m / T)` with one shared `T`.

use serde::{Deserialize, Serialize};

use crate::metrics;
use crate::mhml::{AveragingMode, MultiHeadModel, Prediction};
use crate::nn::{softmax_rows, Matrix};
use crate::{Error, Result};

pub const LOG_T_MIN: f64 = -3.0;
pub const LOG_T_MAX: f64 = 3.0;
pub const GRID_POINTS: usize = 61;
pub const LOG_T_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Temperature(f64);

impl Temperature {
    pub const ONE: Temperature = Temperature(1.0);

    pub fn new(t: f64) -> Result<Self> {
        if t.is_finite() && t > 0.0 {
            Ok(Self(t))
        } else {
            Err(Error::Config(format!("temperature must be positive and finite, got {t}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Temperature {
    type Error = Error;
    fn try_from(t: f64) -> Result<Self> {
        Self::new(t)
    }
}

impl From<Temperature> for f64 {
    fn from(t: Temperature) -> f64 {
        t.0
    }
}

/// Every `(T, validation NLL)` pair the fit evaluated, in evaluation order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitTrace {
    pub evaluations: Vec<(f64, f64)>,
    pub temperature: f64,
    pub nll: f64,
    pub nll_at_one: f64,
}

/// `softmax(z / T)` row by row.
pub fn apply_temperature(z: &Matrix, t: Temperature) -> Result<Matrix> {
    let inv = 1.0 / t.value();
    let scaled: Vec<f64> = z.data().iter().map(|v| v * inv).collect();
    softmax_rows(&Matrix::from_vec(z.rows(), z.cols(), scaled)?)
}

fn nll_at(z: &Matrix, labels: &[usize], log_t: f64) -> Result<f64> {
    let t = Temperature::new(log_t.exp())?;
    metrics::nll(&apply_temperature(z, t)?, labels)
}

/// Minimizes validation NLL over `log T ∈ [-3, 3]`: a 61-point grid, then
/// golden-section search inside the bracket around the best grid point.
/// The returned temperature is the best of all evaluated points, so it is
/// never worse than `T = 1` (a grid point) or any other grid sample.
pub fn fit_temperature(val_logits: &Matrix, val_labels: &[usize]) -> Result<(Temperature, FitTrace)> {
    if val_logits.rows() == 0 {
        return Err(Error::Input("temperature fit needs a nonempty validation set".into()));
    }
    if !val_logits.is_finite() {
        return Err(Error::NonFinite("validation logits"));
    }
    let mut evaluations = Vec::new();
    let mut eval = |log_t: f64| -> Result<f64> {
        let v = nll_at(val_logits, val_labels, log_t)?;
        evaluations.push((log_t.exp(), v));
        Ok(v)
    };

    let step = (LOG_T_MAX - LOG_T_MIN) / (GRID_POINTS - 1) as f64;
    let half = (GRID_POINTS - 1) / 2;
    let grid: Vec<f64> = (0..GRID_POINTS)
        .map(|i| (i as f64 - half as f64) * step)
        .collect();
    let mut grid_nll = Vec::with_capacity(GRID_POINTS);
    for &g in &grid {
        grid_nll.push(eval(g)?);
    }
    let best = (0..GRID_POINTS)
        .min_by(|&a, &b| grid_nll[a].total_cmp(&grid_nll[b]))
        .expect("grid is nonempty");

    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (grid[best.saturating_sub(1)], grid[(best + 1).min(GRID_POINTS - 1)]);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (eval(c)?, eval(d)?);
    while b - a >= LOG_T_TOL {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = eval(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = eval(d)?;
        }
    }
    eval((a + b) / 2.0)?;

    let nll_at_one = grid_nll[half];
    let &(t, nll) = evaluations
        .iter()
        .min_by(|x, y| x.1.total_cmp(&y.1).then(x.0.total_cmp(&y.0)))
        .expect("evaluations are nonempty");
    let trace = FitTrace {
        evaluations,
        temperature: t,
        nll,
        nll_at_one,
    };
    Ok((Temperature::new(t)?, trace))
}

/// A multi-head model with a fitted temperature on its averaged logits.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedModel {
    pub model: MultiHeadModel,
    pub temperature: Temperature,
    pub fit: FitTrace,
}

impl CalibratedModel {
    pub fn predict(&self, batch: &Matrix) -> Result<Prediction> {
        let (outputs, _) = self.model.forward(batch)?;
        Ok(Prediction::from_probs(apply_temperature(
            &outputs.mean_logits(),
            self.temperature,
        )?))
    }
}

/// Fits one temperature on the model's averaged validation logits.
///
/// With more than one head the model must be in logit-average mode, since
/// a temperature on `mean z^m` calibrates `softmax(mean z^m)` and not the
/// probability average.
pub fn ts_for_multihead(
    model: &MultiHeadModel,
    val_x: &Matrix,
    val_y: &[usize],
) -> Result<CalibratedModel> {
    if model.num_heads() > 1 && model.mode == AveragingMode::ProbAverage {
        return Err(Error::Mode {
            mode: AveragingMode::ProbAverage.as_str(),
            reason: "temperature scaling acts on averaged logits; re-run forward in \
                     logit-average mode (MultiHeadModel::with_mode(AveragingMode::LogitAverage))"
                .into(),
        });
    }
    let (outputs, _) = model.forward(val_x)?;
    let (temperature, fit) = fit_temperature(&outputs.mean_logits(), val_y)?;
    Ok(CalibratedModel {
        model: model.clone(),
        temperature,
        fit,
    })
}
