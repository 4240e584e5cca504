//! Finite-difference oracle and the gradient-property harnesses.
//!
//! The oracle never touches the analytic gradient code: it only evaluates
//! scalar losses, recomputed from their definitions in double-double
//! arithmetic (see [`dd`]) so the difference quotient is not swamped by
//! `f64` rounding. Every harness is deterministic given its trial count and
//! master seed; trial `t` uses seed `master + t`.

mod dd;

use dd::Dd;

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mhml::{
    build_weight_scheme, check_labels, mh_grad_logits, AveragingMode, HeadOutputs, MultiHeadModel,
    WeightScheme, LOG_CLAMP,
};
use crate::nn::{Layer, Matrix};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_TOL: f64 = 1e-6;

/// Central differences: `(f(x + eps·e_i) − f(x − eps·e_i)) / (2·eps)`.
pub fn finite_diff<F>(mut f: F, point: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {eps}")));
    }
    let mut x = point.to_vec();
    let mut grad = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let plus = f(&x);
        x[i] = orig - eps;
        let minus = f(&x);
        x[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Input(format!(
                "non-finite function value at coordinate {i}: f(x+eps) = {plus}, f(x-eps) = {minus}"
            )));
        }
        grad.push((plus - minus) / (2.0 * eps));
    }
    Ok(grad)
}

/// `|a − n| / max(1e-8, |a|, |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Central differences evaluated in double-double: `x ± eps` is formed
/// exactly and the quotient is rounded to `f64` only at the end.
fn finite_diff_dd<F>(mut f: F, point: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[Dd]) -> Dd,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {eps}")));
    }
    let mut x: Vec<Dd> = point.iter().map(|&v| Dd::from(v)).collect();
    let two_eps = Dd::from(2.0 * eps);
    let mut grad = Vec::with_capacity(point.len());
    for (i, &orig) in point.iter().enumerate() {
        x[i] = Dd::exact_sum(orig, eps);
        let plus = f(&x);
        x[i] = Dd::exact_sum(orig, -eps);
        let minus = f(&x);
        x[i] = Dd::from(orig);
        if !plus.to_f64().is_finite() || !minus.to_f64().is_finite() {
            return Err(Error::Input(format!(
                "non-finite function value at coordinate {i}: f(x+eps) = {}, f(x-eps) = {}",
                plus.to_f64(),
                minus.to_f64()
            )));
        }
        grad.push(((plus - minus) / two_eps).to_f64());
    }
    Ok(grad)
}

/// `−log(max(p, 1e-12))` for `log p` given in double-double.
fn clamped_nll(log_p: Dd) -> Dd {
    let floor = Dd::from(LOG_CLAMP.ln());
    -log_p.max(floor)
}

/// Reference multi-head loss of one sample, straight from the definition:
/// `−log p^μ_y − Σ_m ω^m_y log p^m_y` with `p^m = softmax(z^m)`.
fn reference_sample_loss(z: &[Vec<Dd>], y: usize, scheme: &WeightScheme) -> Dd {
    let log_p_y: Vec<Dd> = z
        .iter()
        .map(|zm| {
            let max = zm.iter().copied().fold(zm[0], Dd::max);
            let sum: Dd = zm.iter().map(|&v| (v - max).exp()).sum();
            zm[y] - max - sum.ln()
        })
        .collect();
    let mean_p: Dd = log_p_y.iter().map(|l| l.exp()).sum::<Dd>() / Dd::from(z.len() as f64);
    let mut loss = clamped_nll(mean_p.ln());
    for (m, &l) in log_p_y.iter().enumerate() {
        loss = loss + Dd::from(scheme.weight(m, y)) * clamped_nll(l);
    }
    loss
}

/// Batch-mean loss of a model whose parameters are given flattened, in
/// [`MultiHeadModel::layers`] order. Plain scalar loops, no GEMM.
fn reference_model_loss(
    model: &MultiHeadModel,
    theta: &[Dd],
    batch: &Matrix,
    labels: &[usize],
) -> Dd {
    let mut offset = 0;
    let mut layers = Vec::new();
    for layer in model.layers() {
        let (out, inp) = (layer.output_dim(), layer.input_dim());
        let w = &theta[offset..offset + out * inp];
        let b = &theta[offset + out * inp..offset + out * inp + out];
        offset += out * inp + out;
        layers.push((out, inp, w, b));
    }
    let (backbone, heads) = layers.split_at(model.backbone.layers.len());
    let affine = |(out, inp, w, b): &(usize, usize, &[Dd], &[Dd]), a: &[Dd]| -> Vec<Dd> {
        (0..*out)
            .map(|o| (0..*inp).map(|j| w[o * inp + j] * a[j]).sum::<Dd>() + b[o])
            .collect()
    };
    let mut total = Dd::ZERO;
    for (i, &y) in labels.iter().enumerate() {
        let mut a: Vec<Dd> = batch.row(i).iter().map(|&v| Dd::from(v)).collect();
        for layer in backbone {
            a = affine(layer, &a)
                .into_iter()
                .map(|v| if v > Dd::ZERO { v } else { Dd::ZERO })
                .collect();
        }
        let z: Vec<Vec<Dd>> = heads.iter().map(|h| affine(h, &a)).collect();
        total = total + reference_sample_loss(&z, y, &model.scheme);
    }
    total / Dd::from(labels.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradFailure {
    pub trial_seed: u64,
    pub coordinate: String,
    pub analytic: f64,
    pub numeric: f64,
}

/// Outcome of one harness.
///
/// `max_rel_err` is the worst normalized error and `failures` lists every
/// coordinate whose normalized error exceeded `tolerance`. The
/// finite-difference harnesses normalize with [`relative_error`]; the symmetry
/// harness divides each absolute discrepancy by its allowed bound, so its
/// tolerance is 1.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub check: String,
    pub trials: usize,
    pub tolerance: f64,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub failures: Vec<GradFailure>,
    /// For the logit-gradient harnesses: trials on which the simpler
    /// direction `(p^μ − y)` would also have passed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_direction_matches: Option<usize>,
}

impl GradCheckReport {
    fn new(check: &str, trials: usize, tolerance: f64) -> Self {
        Self {
            check: check.into(),
            trials,
            tolerance,
            max_abs_err: 0.0,
            max_rel_err: 0.0,
            failures: Vec::new(),
            mean_direction_matches: None,
        }
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    fn record(
        &mut self,
        trial_seed: u64,
        coordinate: impl FnOnce() -> String,
        analytic: f64,
        numeric: f64,
        abs_err: f64,
        normalized: f64,
    ) {
        self.max_abs_err = self.max_abs_err.max(abs_err);
        self.max_rel_err = self.max_rel_err.max(normalized);
        // NaN compares false, so test for "not within" explicitly
        if normalized.is_nan() || normalized > self.tolerance {
            self.failures.push(GradFailure {
                trial_seed,
                coordinate: coordinate(),
                analytic,
                numeric,
            });
        }
    }

    fn compare(&mut self, trial_seed: u64, coordinate: impl FnOnce() -> String, analytic: f64, numeric: f64) {
        let abs = (analytic - numeric).abs();
        self.record(trial_seed, coordinate, analytic, numeric, abs, relative_error(analytic, numeric));
    }

    /// Merges per-trial reports (in order) into one.
    fn absorb(&mut self, other: GradCheckReport) {
        self.max_abs_err = self.max_abs_err.max(other.max_abs_err);
        self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
        self.failures.extend(other.failures);
        if let Some(n) = other.mean_direction_matches {
            *self.mean_direction_matches.get_or_insert(0) += n;
        }
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<12} trials {:>4}  max_abs {:>10.3e}  max_rel {:>10.3e}  tol {:.1e}  {}",
            self.check,
            self.trials,
            self.max_abs_err,
            self.max_rel_err,
            self.tolerance,
            if self.passed() { "PASS" } else { "FAIL" }
        )?;
        if let Some(n) = self.mean_direction_matches {
            writeln!(f, "{:<12} (p^mu - y) direction would pass on {n}/{} trials", "", self.trials)?;
        }
        for fail in self.failures.iter().take(20) {
            writeln!(
                f,
                "  seed {:>6}  {:<18} analytic {:>14.8e}  numeric {:>14.8e}",
                fail.trial_seed, fail.coordinate, fail.analytic, fail.numeric
            )?;
        }
        if self.failures.len() > 20 {
            writeln!(f, "  ... {} more failures", self.failures.len() - 20)?;
        }
        Ok(())
    }
}

/// Shared knobs for the harnesses.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckConfig {
    pub trials: usize,
    pub tol: f64,
    pub eps: f64,
    pub seed: u64,
    /// Test hook: scales the first analytic coordinate of every trial by 1.01
    /// so the failure path can be exercised end to end.
    pub inject_fault: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            trials: 100,
            tol: DEFAULT_TOL,
            eps: DEFAULT_EPS,
            seed: 0,
            inject_fault: false,
        }
    }
}

impl GradCheckConfig {
    fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("at least one trial required".into()));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(Error::Config(format!("tolerance must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

struct Trial {
    seed: u64,
    logits: Vec<Vec<f64>>,
    label: usize,
}

fn draw_trial(seed: u64, rng: &mut ChaCha8Rng, classes: usize, heads: usize) -> Trial {
    let logits = (0..heads)
        .map(|_| (0..classes).map(|_| rng.random_range(-3.0..=3.0)).collect())
        .collect();
    Trial {
        seed,
        logits,
        label: rng.random_range(0..classes),
    }
}

/// Checks `mh_grad_logits` against finite differences of the reference loss
/// for one sample, head by head.
fn check_logit_gradients(
    report: &mut GradCheckReport,
    trial: &Trial,
    scheme: &WeightScheme,
    cfg: &GradCheckConfig,
) -> Result<()> {
    let y = trial.label;
    let outputs = HeadOutputs::from_sample_logits(&trial.logits, AveragingMode::ProbAverage)?;
    let mut analytic = mh_grad_logits(&outputs, &[y], scheme)?;
    if cfg.inject_fault {
        let v = analytic[0].get(0, 0);
        analytic[0].set(0, 0, v * 1.01);
    }
    let heads = trial.logits.len();
    let mass: f64 = outputs.p_heads.iter().map(|p| p.get(0, y)).sum();
    let mut mean_direction_ok = true;
    let z_dd: Vec<Vec<Dd>> = trial
        .logits
        .iter()
        .map(|zm| zm.iter().map(|&v| Dd::from(v)).collect())
        .collect();
    for m in 0..heads {
        let mut z = z_dd.clone();
        let numeric = finite_diff_dd(
            |zm| {
                z[m].copy_from_slice(zm);
                reference_sample_loss(&z, y, scheme)
            },
            &trial.logits[m],
            cfg.eps,
        )?;
        let factor = scheme.weight(m, y) + outputs.p_heads[m].get(0, y) / mass;
        for (j, &n) in numeric.iter().enumerate() {
            report.compare(trial.seed, || format!("head {m} z[{j}]"), analytic[m].get(0, j), n);
            let target = if j == y { 1.0 } else { 0.0 };
            let alt = factor * (outputs.p_mean.get(0, j) - target);
            mean_direction_ok &= relative_error(alt, n) <= cfg.tol;
        }
    }
    if mean_direction_ok {
        *report.mean_direction_matches.get_or_insert(0) += 1;
    }
    Ok(())
}

/// Gradient of the averaged-prediction cross-entropy alone (every head weight
/// zero): `∂CE(p^μ, y)/∂z^m = p^m_y / Σ_i p^i_y · (p^m − y)`.
pub fn verify_property1(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    cfg.validate()?;
    let mut report = GradCheckReport::new("property1", cfg.trials, cfg.tol);
    report.mean_direction_matches = Some(0);
    for t in 0..cfg.trials {
        let seed = cfg.seed.wrapping_add(t as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let classes = rng.random_range(2..=6);
        let heads = rng.random_range(1..=4);
        let trial = draw_trial(seed, &mut rng, classes, heads);
        let scheme = WeightScheme::uniform(classes, heads, 0.0)?;
        check_logit_gradients(&mut report, &trial, &scheme, cfg)?;
    }
    Ok(report)
}

/// Gradient of the full multi-head loss under random complementary schemes:
/// `∂L/∂z^m = (ω^m_y + p^m_y / Σ_i p^i_y) · (p^m − y)`.
pub fn verify_property2(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    cfg.validate()?;
    let mut report = GradCheckReport::new("property2", cfg.trials, cfg.tol);
    report.mean_direction_matches = Some(0);
    for t in 0..cfg.trials {
        let seed = cfg.seed.wrapping_add(t as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let classes = rng.random_range(2..=6);
        // complementary schemes need heads <= classes
        let heads = rng.random_range(1..=classes.min(4));
        let w_hi = rng.random_range(1.5..=4.0);
        let w_lo = rng.random_range(0.1..1.0);
        let scheme = build_weight_scheme(classes, heads, w_hi, w_lo, rng.random())?;
        let trial = draw_trial(seed, &mut rng, classes, heads);
        check_logit_gradients(&mut report, &trial, &scheme, cfg)?;
    }
    Ok(report)
}

/// Bound on the per-head gradient L1 difference for tied heads with equal weights.
pub const SYMMETRY_EQUAL_TOL: f64 = 1e-12;
/// Bound on `| ‖g_i − g_j‖₁ − |Δω_y|·‖p − y‖₁ |` for tied heads with different weights.
pub const SYMMETRY_DIFF_TOL: f64 = 1e-9;

/// Tied heads (identical logits): equal weights give identical gradients;
/// different weights give an L1 gap of exactly `|ω^i_y − ω^j_y| · ‖p − y‖₁`.
pub fn verify_symmetry(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    cfg.validate()?;
    let mut report = GradCheckReport::new("symmetry", cfg.trials, 1.0);
    for t in 0..cfg.trials {
        let seed = cfg.seed.wrapping_add(t as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let classes = rng.random_range(2..=6);
        let heads = rng.random_range(1..=classes.min(4));
        let shared = draw_trial(seed, &mut rng, classes, 1);
        let y = shared.label;
        let logits = vec![shared.logits[0].clone(); heads];
        let outputs = HeadOutputs::from_sample_logits(&logits, AveragingMode::ProbAverage)?;
        let p = outputs.p_heads[0].row(0).to_vec();
        let residual_l1: f64 = p
            .iter()
            .enumerate()
            .map(|(j, &v)| (v - if j == y { 1.0 } else { 0.0 }).abs())
            .sum();

        let equal = WeightScheme::uniform(classes, heads, rng.random_range(0.1..=4.0))?;
        let w_hi = rng.random_range(1.5..=4.0);
        let w_lo = rng.random_range(0.1..1.0);
        let differing = build_weight_scheme(classes, heads, w_hi, w_lo, rng.random())?;

        for (name, scheme, bound) in [
            ("equal", &equal, SYMMETRY_EQUAL_TOL),
            ("differing", &differing, SYMMETRY_DIFF_TOL),
        ] {
            let mut g = mh_grad_logits(&outputs, &[y], scheme)?;
            if cfg.inject_fault {
                let v = g[0].get(0, 0);
                g[0].set(0, 0, v * 1.01 + 1e-3);
            }
            for i in 0..heads {
                for j in i + 1..heads {
                    let gap: f64 = g[i]
                        .row(0)
                        .iter()
                        .zip(g[j].row(0))
                        .map(|(a, b)| (a - b).abs())
                        .sum();
                    let expected = (scheme.weight(i, y) - scheme.weight(j, y)).abs() * residual_l1;
                    let abs = (gap - expected).abs();
                    report.record(
                        seed,
                        || format!("{name} heads {i},{j}"),
                        gap,
                        expected,
                        abs,
                        abs / bound,
                    );
                }
            }
        }
    }
    Ok(report)
}

/// Flattened view of every parameter, in `layers()` order.
fn flatten<'a>(layers: impl Iterator<Item = &'a Layer>) -> Vec<f64> {
    layers
        .flat_map(|l| l.weight.data().iter().chain(&l.bias).copied())
        .collect()
}

/// Compares [`MultiHeadModel::backward`] with finite differences of the
/// batch-mean multi-head loss over every parameter.
pub fn check_model_gradients(
    model: &MultiHeadModel,
    batch: &Matrix,
    labels: &[usize],
    eps: f64,
    tol: f64,
    trial_seed: u64,
) -> Result<GradCheckReport> {
    let (outputs, trace) = model.forward(batch)?;
    let grads = model.backward(&trace, &outputs, labels)?;
    let analytic = flatten(grads.layers());
    let point = flatten(model.layers());
    check_labels(labels, model.num_classes())?;
    let numeric = finite_diff_dd(|theta| reference_model_loss(model, theta, batch, labels), &point, eps)?;
    let mut report = GradCheckReport::new("backward", 1, tol);
    for (i, (&a, &n)) in analytic.iter().zip(&numeric).enumerate() {
        report.compare(trial_seed, || format!("param {i}"), a, n);
    }
    Ok(report)
}

/// Random multi-head networks (backbone up to 3 layers, widths up to 16):
/// every parameter gradient against finite differences.
pub fn verify_backward(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    cfg.validate()?;
    let mut report = GradCheckReport::new("backward", cfg.trials, cfg.tol);
    for t in 0..cfg.trials {
        let seed = cfg.seed.wrapping_add(t as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = rng.random_range(1..=6);
        let depth = rng.random_range(1..=3);
        let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(2..=16)).collect();
        let classes = rng.random_range(2..=5);
        let heads = rng.random_range(1..=classes.min(3));
        let scheme = build_weight_scheme(classes, heads, 2.0, 0.5, rng.random())?;
        let mut model =
            MultiHeadModel::new(input, &hidden, scheme, AveragingMode::ProbAverage, rng.random())?;
        // zero biases put dead units exactly on the ReLU kink, where central
        // differences see half a one-sided slope
        for layer in model.layers_mut() {
            for b in &mut layer.bias {
                *b = rng.random_range(-0.5..0.5);
            }
        }
        let batch_size = rng.random_range(1..=4);
        let rows: Vec<Vec<f64>> = (0..batch_size)
            .map(|_| (0..input).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let labels: Vec<usize> = (0..batch_size).map(|_| rng.random_range(0..classes)).collect();
        let batch = Matrix::from_rows(&rows)?;
        report.absorb(check_model_gradients(&model, &batch, &labels, cfg.eps, cfg.tol, seed)?);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mhml::mh_loss;
    use crate::nn::softmax;

    #[test]
    fn quadratic_and_constant() {
        let g = finite_diff(|x| x[0] * x[0], &[3.0], 1e-5).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-9);
        let g = finite_diff(|_| 4.2, &[1.0, -2.0, 0.5], 1e-5).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn rejects_bad_step_and_non_finite_values() {
        assert!(finite_diff(|x| x[0], &[1.0], 0.0).is_err());
        assert!(finite_diff(|x| x[0], &[1.0], -1e-5).is_err());
        let err = finite_diff(|x| if x[1] > 0.0 { f64::NAN } else { 0.0 }, &[0.0, 0.0], 1e-5).unwrap_err();
        assert!(err.to_string().contains("coordinate 1"));
    }

    #[test]
    fn softmax_cross_entropy_gradient() {
        let z = [0.7, -1.2, 2.1, 0.3];
        let y = 2;
        let numeric = finite_diff(|z| -softmax(z).unwrap()[y].ln(), &z, 1e-5).unwrap();
        let p = softmax(&z).unwrap();
        for j in 0..4 {
            let analytic = p[j] - if j == y { 1.0 } else { 0.0 };
            assert!(relative_error(analytic, numeric[j]) < 1e-6);
        }
    }

    /// f(x) = x⁴ has f''' ≠ 0, so the truncation error is visible; halving eps
    /// should shrink it roughly fourfold.
    #[test]
    fn central_differences_are_second_order() {
        let x = 1.3;
        let exact = 4.0 * x * x * x;
        let err = |eps: f64| (finite_diff(|v| v[0].powi(4), &[x], eps).unwrap()[0] - exact).abs();
        for eps in [1e-1, 5e-2, 2e-2] {
            assert!(err(eps) / err(eps / 2.0) >= 3.0, "eps {eps}");
        }
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1e-10, 0.0) - 1e-2).abs() < 1e-15);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn single_head_property1() {
        // M = 1: analytic gradient is p − y, matched by the oracle
        let cfg = GradCheckConfig::default();
        let trial = Trial {
            seed: 0,
            logits: vec![vec![0.2, -0.4, 1.5]],
            label: 1,
        };
        let mut report = GradCheckReport::new("t", 1, cfg.tol);
        let scheme = WeightScheme::uniform(3, 1, 0.0).unwrap();
        check_logit_gradients(&mut report, &trial, &scheme, &cfg).unwrap();
        assert!(report.passed(), "{report}");
        let out = HeadOutputs::from_sample_logits(&trial.logits, AveragingMode::ProbAverage).unwrap();
        let g = mh_grad_logits(&out, &[1], &scheme).unwrap();
        let p = softmax(&trial.logits[0]).unwrap();
        for j in 0..3 {
            assert!((g[0].get(0, j) - (p[j] - if j == 1 { 1.0 } else { 0.0 })).abs() < 1e-15);
        }
    }

    #[test]
    fn tied_heads_have_identical_numeric_gradients() {
        let z = vec![0.4, -1.0, 2.2];
        let logits = vec![z.clone(); 3];
        let scheme = WeightScheme::uniform(3, 3, 0.0).unwrap();
        let grads: Vec<Vec<f64>> = (0..3)
            .map(|m| {
                let mut all = logits.clone();
                finite_diff(
                    |zm| {
                        all[m].copy_from_slice(zm);
                        let o = HeadOutputs::from_sample_logits(&all, AveragingMode::ProbAverage).unwrap();
                        mh_loss(&o, &[0], &scheme).unwrap()
                    },
                    &z,
                    1e-5,
                )
                .unwrap()
            })
            .collect();
        for g in &grads[1..] {
            for (a, b) in g.iter().zip(&grads[0]) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn unit_weights_property2_example() {
        let cfg = GradCheckConfig::default();
        let trial = Trial {
            seed: 0,
            logits: vec![vec![0.2, -0.4, 1.5, 0.0], vec![-1.0, 0.3, 0.3, 2.0]],
            label: 3,
        };
        let mut report = GradCheckReport::new("t", 1, cfg.tol);
        check_logit_gradients(&mut report, &trial, &WeightScheme::uniform(4, 2, 1.0).unwrap(), &cfg).unwrap();
        let scheme = build_weight_scheme(4, 2, 2.0, 0.5, 3).unwrap();
        check_logit_gradients(&mut report, &trial, &scheme, &cfg).unwrap();
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn symmetry_worked_example() {
        // p = [0.8, 0.2], y = 0, ω^1_y = 2, ω^2_y = ½: gap = 1.5 · 0.4 = 0.6
        let z = vec![0.8f64.ln(), 0.2f64.ln()];
        let out = HeadOutputs::from_sample_logits(&[z.clone(), z], AveragingMode::ProbAverage).unwrap();
        let scheme = WeightScheme::from_assignment(2, 2, 2.0, 0.5, vec![0, 1]).unwrap();
        let g = mh_grad_logits(&out, &[0], &scheme).unwrap();
        let gap: f64 = g[0].row(0).iter().zip(g[1].row(0)).map(|(a, b)| (a - b).abs()).sum();
        assert!((gap - 0.6).abs() < 1e-12, "{gap}");
    }

    #[test]
    fn harnesses_pass_and_are_deterministic() {
        let cfg = GradCheckConfig {
            trials: 20,
            seed: 7,
            ..Default::default()
        };
        for run in [verify_property1, verify_property2, verify_symmetry] {
            let a = run(&cfg).unwrap();
            assert!(a.passed(), "{a}");
            assert_eq!(a, run(&cfg).unwrap());
        }
    }

    #[test]
    fn injected_fault_is_caught() {
        let cfg = GradCheckConfig {
            trials: 5,
            inject_fault: true,
            ..Default::default()
        };
        for run in [verify_property1, verify_property2, verify_symmetry] {
            let r = run(&cfg).unwrap();
            assert!(!r.passed());
            assert!(r.max_rel_err > r.tolerance);
        }
    }

    #[test]
    fn zero_trials_rejected() {
        let cfg = GradCheckConfig {
            trials: 0,
            ..Default::default()
        };
        assert!(verify_property1(&cfg).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let cfg = GradCheckConfig {
            trials: 10,
            seed: 100,
            ..Default::default()
        };
        let r = verify_backward(&cfg).unwrap();
        assert!(r.passed(), "{r}");
    }
}
