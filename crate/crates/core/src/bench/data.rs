//! Gaussian-mixture benchmark with a closed-form Bayes posterior, and the
//! CSV formats for datasets and predictions.

use std::f64::consts::TAU;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::mhml::check_labels;
use crate::nn::Matrix;
use crate::{Error, Result};

/// Class means sit evenly on a circle of `radius` in the first two
/// coordinates; samples are `mean + sigma · N(0, I)`. Splits are drawn in
/// the order train, validation, test from one seeded stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub dim: usize,
    pub radius: f64,
    pub sigma: f64,
    pub priors: Vec<f64>,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 8,
            dim: 8,
            radius: 2.0,
            sigma: 1.2,
            priors: geometric_priors(8, 0.8),
            n_train: 20_000,
            n_val: 4_000,
            n_test: 10_000,
            seed: 0,
        }
    }
}

/// `π_k ∝ ratio^k`, normalized.
pub fn geometric_priors(classes: usize, ratio: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..classes).map(|k| ratio.powi(k as i32)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|p| p / total).collect()
}

pub fn uniform_priors(classes: usize) -> Vec<f64> {
    vec![1.0 / classes as f64; classes]
}

impl SyntheticSpec {
    /// Default geometry with `classes` classes in `dim` dimensions and the
    /// default geometric imbalance.
    pub fn with_shape(classes: usize, dim: usize) -> Self {
        Self {
            classes,
            dim,
            priors: geometric_priors(classes, 0.8),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.classes < 2 {
            return fail(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.dim < 2 {
            return fail(format!("class means live in the first two coordinates; dim {} < 2", self.dim));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return fail(format!("sigma must be positive, got {}", self.sigma));
        }
        if !(self.radius >= 0.0 && self.radius.is_finite()) {
            return fail(format!("radius must be non-negative, got {}", self.radius));
        }
        if self.priors.len() != self.classes {
            return fail(format!("{} priors for {} classes", self.priors.len(), self.classes));
        }
        let total: f64 = self.priors.iter().sum();
        if self.priors.iter().any(|p| p.is_nan() || *p < 0.0) || (total - 1.0).abs() > 1e-12 {
            return fail(format!("priors must be non-negative and sum to 1 (sum {total})"));
        }
        Ok(())
    }

    pub fn means(&self) -> Matrix {
        let mut m = Matrix::zeros(self.classes, self.dim);
        for k in 0..self.classes {
            let angle = TAU * k as f64 / self.classes as f64;
            m.set(k, 0, self.radius * angle.cos());
            m.set(k, 1, self.radius * angle.sin());
        }
        m
    }
}

/// Features and labels of one split.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub x: Matrix,
    pub y: Vec<usize>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub classes: usize,
    /// Generator parameters, when the data is synthetic.
    pub spec: Option<SyntheticSpec>,
    pub train: Split,
    pub val: Split,
    pub test: Split,
}

impl Dataset {
    /// Cuts consecutive rows into train, validation and test splits.
    pub fn from_rows(
        x: Matrix,
        y: Vec<usize>,
        classes: usize,
        sizes: (usize, usize, usize),
    ) -> Result<Self> {
        let (n_train, n_val, n_test) = sizes;
        if x.rows() != y.len() {
            return Err(Error::shape("labels", x.rows(), y.len()));
        }
        if n_train + n_val + n_test != y.len() {
            return Err(Error::Config(format!(
                "split sizes {n_train}+{n_val}+{n_test} do not cover {} rows",
                y.len()
            )));
        }
        check_labels(&y, classes)?;
        if !x.is_finite() {
            return Err(Error::NonFinite("dataset features"));
        }
        let take = |from: usize, n: usize| Split {
            x: x.select_rows(&(from..from + n).collect::<Vec<_>>()),
            y: y[from..from + n].to_vec(),
        };
        Ok(Self {
            classes,
            spec: None,
            train: take(0, n_train),
            val: take(n_train, n_val),
            test: take(n_train + n_val, n_test),
        })
    }

    pub fn dim(&self) -> usize {
        self.train.x.cols()
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }

    /// All rows, train then validation then test.
    pub fn all_rows(&self) -> (Matrix, Vec<usize>) {
        let dim = self.dim();
        let mut data = Vec::with_capacity((self.train.len() + self.val.len() + self.test.len()) * dim);
        let mut y = Vec::new();
        for s in [&self.train, &self.val, &self.test] {
            data.extend_from_slice(s.x.data());
            y.extend_from_slice(&s.y);
        }
        let rows = y.len();
        (Matrix::from_vec(rows, dim, data).expect("splits share a width"), y)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let (x, y) = self.all_rows();
        write_dataset_csv(path, &x, &y)
    }
}

pub fn gen_gaussian_mixture(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let means = spec.means();
    let labels = WeightedIndex::new(&spec.priors)
        .map_err(|e| Error::Config(format!("priors: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut draw = |n: usize| {
        let mut x = Matrix::zeros(n, spec.dim);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let k = labels.sample(&mut rng);
            y.push(k);
            for (v, mu) in x.row_mut(i).iter_mut().zip(means.row(k)) {
                let e: f64 = StandardNormal.sample(&mut rng);
                *v = mu + spec.sigma * e;
            }
        }
        Split { x, y }
    };
    let train = draw(spec.n_train);
    let val = draw(spec.n_val);
    let test = draw(spec.n_test);
    Ok(Dataset {
        classes: spec.classes,
        spec: Some(spec.clone()),
        train,
        val,
        test,
    })
}

/// `P(y = k | x) ∝ π_k · exp(-‖x − μ_k‖² / 2σ²)`, evaluated in log space.
pub fn bayes_posterior(spec: &SyntheticSpec, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != spec.dim {
        return Err(Error::shape("posterior input", spec.dim, x.len()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("posterior input"));
    }
    let means = spec.means();
    let two_var = 2.0 * spec.sigma * spec.sigma;
    let log_w: Vec<f64> = (0..spec.classes)
        .map(|k| {
            let d2: f64 = x.iter().zip(means.row(k)).map(|(a, b)| (a - b) * (a - b)).sum();
            spec.priors[k].ln() - d2 / two_var
        })
        .collect();
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = p.iter().sum();
    for v in &mut p {
        *v /= total;
    }
    Ok(p)
}

/// Posterior rows for every sample of a feature matrix.
pub fn bayes_posterior_batch(spec: &SyntheticSpec, x: &Matrix) -> Result<Matrix> {
    let mut out = Matrix::zeros(x.rows(), spec.classes);
    for (i, row) in x.iter_rows().enumerate() {
        out.row_mut(i).copy_from_slice(&bayes_posterior(spec, row)?);
    }
    Ok(out)
}

/// Shortest decimal form of `x` rounded to 9 significant digits.
fn sig9(x: f64) -> String {
    let r: f64 = format!("{x:.8e}").parse().expect("formatted float parses");
    r.to_string()
}

fn write_table(path: &Path, prefix: char, x: &Matrix, y: &[usize]) -> Result<()> {
    if x.rows() != y.len() {
        return Err(Error::shape("labels", x.rows(), y.len()));
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..x.cols()).map(|j| format!("{prefix}{j}")).collect();
    header.push("label".into());
    w.write_record(&header)?;
    for (row, label) in x.iter_rows().zip(y) {
        let mut record: Vec<String> = row.iter().map(|&v| sig9(v)).collect();
        record.push(label.to_string());
        w.write_record(&record)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_table(path: &Path, prefix: char) -> Result<(Matrix, Vec<usize>)> {
    let format = |message: String| Error::Format {
        path: path.into(),
        message,
    };
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => format(format!("{other:?}")),
    })?;
    let header = r.headers()?.clone();
    let width = header.len().saturating_sub(1);
    let expected: Vec<String> = (0..width)
        .map(|j| format!("{prefix}{j}"))
        .chain(std::iter::once("label".to_string()))
        .collect();
    if width == 0 || header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(format(format!(
            "header must be {prefix}0,...,{prefix}{{n-1}},label; found {}",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut data = Vec::new();
    let mut y = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record?;
        let row = line + 2;
        for field in record.iter().take(width) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| format(format!("row {row}: {field:?} is not a number")))?;
            if !v.is_finite() {
                return Err(format(format!("row {row}: non-finite value {field}")));
            }
            data.push(v);
        }
        let label = &record[width];
        y.push(
            label
                .trim()
                .parse()
                .map_err(|_| format(format!("row {row}: label {label:?} is not a class index")))?,
        );
    }
    let rows = y.len();
    Ok((Matrix::from_vec(rows, width, data)?, y))
}

/// Writes `f0,...,f{d-1},label` with 9 significant digits.
pub fn write_dataset_csv(path: &Path, x: &Matrix, y: &[usize]) -> Result<()> {
    write_table(path, 'f', x, y)
}

pub fn read_dataset_csv(path: &Path) -> Result<(Matrix, Vec<usize>)> {
    read_table(path, 'f')
}

/// Writes `p0,...,p{K-1},label`.
pub fn write_predictions_csv(path: &Path, probs: &Matrix, y: &[usize]) -> Result<()> {
    write_table(path, 'p', probs, y)
}

pub fn read_predictions_csv(path: &Path) -> Result<(Matrix, Vec<usize>)> {
    read_table(path, 'p')
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics;
    use proptest::prelude::*;

    fn small(seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            n_train: 300,
            n_val: 50,
            n_test: 100,
            seed,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn default_priors_are_geometric() {
        let s = SyntheticSpec::default();
        s.validate().unwrap();
        assert!((s.priors[1] / s.priors[0] - 0.8).abs() < 1e-15);
        assert!((s.priors.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn generator_is_deterministic() {
        let a = gen_gaussian_mixture(&small(3)).unwrap();
        let b = gen_gaussian_mixture(&small(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.sizes(), (300, 50, 100));
        assert_ne!(a, gen_gaussian_mixture(&small(4)).unwrap());
    }

    #[test]
    fn tiny_sigma_puts_samples_on_means() {
        let spec = SyntheticSpec {
            sigma: 1e-12,
            ..small(1)
        };
        let d = gen_gaussian_mixture(&spec).unwrap();
        let means = spec.means();
        for (row, &k) in d.test.x.iter_rows().zip(&d.test.y) {
            for (a, b) in row.iter().zip(means.row(k)) {
                assert!((a - b).abs() < 1e-10);
            }
            let p = bayes_posterior(&spec, row).unwrap();
            assert_eq!(p[k], 1.0);
        }
    }

    #[test]
    fn uniform_priors_give_balanced_classes() {
        let spec = SyntheticSpec {
            priors: uniform_priors(8),
            n_train: 100_000,
            n_val: 0,
            n_test: 0,
            ..SyntheticSpec::default()
        };
        let d = gen_gaussian_mixture(&spec).unwrap();
        let mut counts = [0usize; 8];
        for &y in &d.train.y {
            counts[y] += 1;
        }
        for c in counts {
            assert!((c as f64 / 1e5 - 0.125).abs() < 0.01);
        }
    }

    #[test]
    fn posterior_examples() {
        let spec = SyntheticSpec {
            classes: 2,
            dim: 2,
            radius: 1.0,
            sigma: 1.0,
            priors: uniform_priors(2),
            ..SyntheticSpec::default()
        };
        // means at (1, 0) and (-1, 0)
        let p = bayes_posterior(&spec, &[0.5, 0.0]).unwrap();
        assert!((p[0] - 0.7310585786300049).abs() < 1e-15);
        let center = bayes_posterior(&SyntheticSpec { priors: uniform_priors(8), ..SyntheticSpec::default() }, &[0.0; 8]).unwrap();
        assert!(center.iter().all(|v| (v - 0.125).abs() < 1e-15));
        assert!(bayes_posterior(&spec, &[0.0]).is_err());
        assert!(bayes_posterior(&spec, &[f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn invalid_specs_rejected() {
        let bad = [
            SyntheticSpec { sigma: 0.0, ..SyntheticSpec::default() },
            SyntheticSpec { classes: 1, priors: vec![1.0], ..SyntheticSpec::default() },
            SyntheticSpec { dim: 1, ..SyntheticSpec::default() },
            SyntheticSpec { priors: vec![0.5; 8], ..SyntheticSpec::default() },
        ];
        for s in bad {
            assert!(gen_gaussian_mixture(&s).is_err(), "{s:?}");
        }
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = gen_gaussian_mixture(&small(2)).unwrap();
        let path = dir.path().join("data.csv");
        d.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("f0,f1,f2,f3,f4,f5,f6,f7,label\n"));
        let (x, y) = read_dataset_csv(&path).unwrap();
        let back = Dataset::from_rows(x, y, 8, d.sizes()).unwrap();
        assert_eq!(back.test.y, d.test.y);
        for (a, b) in back.test.x.data().iter().zip(d.test.x.data()) {
            assert!((a - b).abs() <= 1e-8 * b.abs().max(1e-300));
        }
        assert!(read_predictions_csv(&path).is_err());
    }

    #[test]
    fn predictions_csv_feeds_metrics() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let probs = Matrix::from_rows(&[[0.8, 0.2], [0.4, 0.6]]).unwrap();
        write_predictions_csv(&path, &probs, &[0, 1]).unwrap();
        let (p, y) = read_predictions_csv(&path).unwrap();
        assert!((metrics::nll(&p, &y).unwrap() - 0.3669845875401002).abs() < 1e-12);
        std::fs::write(&path, "p0,p1,label\n0.5,x,1\n").unwrap();
        let err = read_predictions_csv(&path).unwrap_err().to_string();
        assert!(err.contains("p.csv") && err.contains("row 2"), "{err}");
    }

    proptest! {
        #[test]
        fn posterior_on_simplex(x in proptest::collection::vec(-50.0f64..50.0, 8)) {
            let p = bayes_posterior(&SyntheticSpec::default(), &x).unwrap();
            prop_assert!(p.iter().all(|v| *v >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
