//! Accuracy, expected calibration error, NLL, Brier score, reliability
//! tables and average-rank aggregation across methods.
//!
//! Confidence bins are right-inclusive: bin `s` (1-based) of `n` covers
//! `((s-1)/n, s/n]`, and a confidence of exactly 0 falls in bin 1.

use serde::{Deserialize, Serialize};

use crate::mhml::{check_labels, LOG_CLAMP};
use crate::nn::{argmax, Matrix};
use crate::{Error, Result};

pub const DEFAULT_BINS: usize = 15;

/// Tolerance used when validating that externally supplied rows are
/// probability vectors (CSV files carry 9 significant digits).
pub const SIMPLEX_TOL: f64 = 1e-6;

/// Rounds to six significant digits, the precision of emitted documents.
pub fn round_sig6(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.5e}").parse().expect("formatted float parses")
}

pub(crate) fn ser_sig6<S: serde::Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(round_sig6(*x))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinStats {
    #[serde(serialize_with = "ser_sig6")]
    pub lo: f64,
    #[serde(serialize_with = "ser_sig6")]
    pub hi: f64,
    pub count: usize,
    #[serde(serialize_with = "ser_sig6")]
    pub acc: f64,
    #[serde(serialize_with = "ser_sig6")]
    pub conf: f64,
}

/// Metrics for one method on one split. Values are stored unrounded; the
/// JSON form carries six significant digits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub method: String,
    pub split: String,
    pub n_samples: usize,
    #[serde(serialize_with = "ser_sig6")]
    pub accuracy: f64,
    #[serde(serialize_with = "ser_sig6")]
    pub ece: f64,
    #[serde(serialize_with = "ser_sig6")]
    pub nll: f64,
    #[serde(serialize_with = "ser_sig6")]
    pub brier: f64,
    pub bins: Vec<BinStats>,
}

impl CalibrationReport {
    /// Scores a batch of probability rows against labels.
    pub fn compute(
        method: impl Into<String>,
        split: impl Into<String>,
        probs: &Matrix,
        labels: &[usize],
        n_bins: usize,
    ) -> Result<Self> {
        check_probs(probs, labels)?;
        let (conf, correct) = confidences(probs, labels)?;
        let bins = reliability_table(&conf, &correct, n_bins)?;
        let report = Self {
            method: method.into(),
            split: split.into(),
            n_samples: labels.len(),
            accuracy: accuracy(probs, labels)?,
            ece: ece_from_table(&bins, labels.len()),
            nll: nll(probs, labels)?,
            brier: brier(probs, labels)?,
            bins,
        };
        report.validate()?;
        Ok(report)
    }

    pub fn validate(&self) -> Result<()> {
        let total: usize = self.bins.iter().map(|b| b.count).sum();
        if total != self.n_samples {
            return Err(Error::Input(format!(
                "report {}/{}: bin counts sum to {total}, n_samples is {}",
                self.method, self.split, self.n_samples
            )));
        }
        let finite = [self.accuracy, self.ece, self.nll, self.brier]
            .into_iter()
            .chain(self.bins.iter().flat_map(|b| [b.lo, b.hi, b.acc, b.conf]))
            .all(f64::is_finite);
        if !finite {
            return Err(Error::NonFinite("calibration report"));
        }
        Ok(())
    }

    /// The values this report takes after a trip through its JSON form.
    pub fn rounded(&self) -> Self {
        let mut r = self.clone();
        for v in [&mut r.accuracy, &mut r.ece, &mut r.nll, &mut r.brier] {
            *v = round_sig6(*v);
        }
        for b in &mut r.bins {
            for v in [&mut b.lo, &mut b.hi, &mut b.acc, &mut b.conf] {
                *v = round_sig6(*v);
            }
        }
        r
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(text)?;
        r.validate()?;
        Ok(r)
    }
}

fn check_probs(probs: &Matrix, labels: &[usize]) -> Result<()> {
    if probs.rows() != labels.len() {
        return Err(Error::shape("labels", probs.rows(), labels.len()));
    }
    if probs.rows() == 0 {
        return Err(Error::Input("empty prediction set".into()));
    }
    check_labels(labels, probs.cols())?;
    for (i, row) in probs.iter_rows().enumerate() {
        let sum: f64 = row.iter().sum();
        if row.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Input(format!("row {i} is not a probability vector (sum {sum})")));
        }
    }
    Ok(())
}

/// Top-class confidence and whether the top class is the label, per row.
pub fn confidences(probs: &Matrix, labels: &[usize]) -> Result<(Vec<f64>, Vec<bool>)> {
    if probs.rows() != labels.len() {
        return Err(Error::shape("labels", probs.rows(), labels.len()));
    }
    check_labels(labels, probs.cols())?;
    Ok(probs
        .iter_rows()
        .zip(labels)
        .map(|(row, &y)| {
            let j = argmax(row);
            (row[j].clamp(0.0, 1.0), j == y)
        })
        .unzip())
}

/// 0-based bin of a confidence in `[0, 1]`.
pub fn bin_index(conf: f64, n_bins: usize) -> usize {
    let n = n_bins as f64;
    let mut s = ((conf * n).ceil() as usize).clamp(1, n_bins);
    // Settle rounding in `conf * n` against the bounds as the table reports them.
    while s > 1 && conf <= (s - 1) as f64 / n {
        s -= 1;
    }
    while s < n_bins && conf > s as f64 / n {
        s += 1;
    }
    s - 1
}

fn check_ece_input(conf: &[f64], correct: &[bool], n_bins: usize) -> Result<()> {
    if conf.is_empty() {
        return Err(Error::Input("empty prediction set".into()));
    }
    if conf.len() != correct.len() {
        return Err(Error::shape("correctness flags", conf.len(), correct.len()));
    }
    if n_bins == 0 {
        return Err(Error::Config("n_bins must be at least 1".into()));
    }
    if let Some(c) = conf.iter().find(|c| !(0.0..=1.0).contains(*c)) {
        return Err(Error::Input(format!("confidence {c} outside [0, 1]")));
    }
    Ok(())
}

/// Per-bin counts, accuracy and mean confidence, empty bins included.
pub fn reliability_table(conf: &[f64], correct: &[bool], n_bins: usize) -> Result<Vec<BinStats>> {
    check_ece_input(conf, correct, n_bins)?;
    let mut count = vec![0usize; n_bins];
    let mut hits = vec![0usize; n_bins];
    let mut conf_sum = vec![0.0; n_bins];
    for (&c, &ok) in conf.iter().zip(correct) {
        let b = bin_index(c, n_bins);
        count[b] += 1;
        hits[b] += ok as usize;
        conf_sum[b] += c;
    }
    let n = n_bins as f64;
    Ok((0..n_bins)
        .map(|b| {
            let (acc, mean_conf) = if count[b] == 0 {
                (0.0, 0.0)
            } else {
                (hits[b] as f64 / count[b] as f64, conf_sum[b] / count[b] as f64)
            };
            BinStats {
                lo: b as f64 / n,
                hi: (b + 1) as f64 / n,
                count: count[b],
                acc,
                conf: mean_conf,
            }
        })
        .collect())
}

/// ECE recomposed from a reliability table over `n_samples` samples.
pub fn ece_from_table(bins: &[BinStats], n_samples: usize) -> f64 {
    let n = n_samples as f64;
    bins.iter()
        .filter(|b| b.count > 0)
        .map(|b| b.count as f64 / n * (b.acc - b.conf).abs())
        .sum()
}

pub fn ece(conf: &[f64], correct: &[bool], n_bins: usize) -> Result<f64> {
    let bins = reliability_table(conf, correct, n_bins)?;
    Ok(ece_from_table(&bins, conf.len()))
}

pub fn nll(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    check_rows(probs, labels)?;
    let total: f64 = probs
        .iter_rows()
        .zip(labels)
        .map(|(row, &y)| -row[y].max(LOG_CLAMP).ln())
        .sum();
    Ok(total / labels.len() as f64)
}

pub fn brier(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    check_rows(probs, labels)?;
    let total: f64 = probs
        .iter_rows()
        .zip(labels)
        .map(|(row, &y)| {
            row.iter()
                .enumerate()
                .map(|(j, p)| {
                    let d = p - if j == y { 1.0 } else { 0.0 };
                    d * d
                })
                .sum::<f64>()
        })
        .sum();
    Ok(total / labels.len() as f64)
}

/// Fraction of rows whose argmax (lowest index on ties) is the label.
pub fn accuracy(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    check_rows(probs, labels)?;
    let hits = probs
        .iter_rows()
        .zip(labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

fn check_rows(probs: &Matrix, labels: &[usize]) -> Result<()> {
    if probs.rows() != labels.len() {
        return Err(Error::shape("labels", probs.rows(), labels.len()));
    }
    if labels.is_empty() {
        return Err(Error::Input("empty prediction set".into()));
    }
    check_labels(labels, probs.cols())
}

/// Ranks (1 = best) with tied values sharing the mean of their positions.
pub fn tie_averaged_ranks(values: &[f64], ascending: bool) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        let o = values[a].total_cmp(&values[b]);
        if ascending {
            o
        } else {
            o.reverse()
        }
    });
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i+1 ..= j share their mean
        let shared = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = shared;
        }
        i = j;
    }
    ranks
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRank {
    pub method: String,
    pub accuracy: f64,
    pub ece: f64,
    pub nll: f64,
    #[serde(serialize_with = "ser_sig6")]
    pub average: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTable {
    pub split: String,
    pub rows: Vec<MethodRank>,
}

impl RankTable {
    pub fn get(&self, method: &str) -> Option<&MethodRank> {
        self.rows.iter().find(|r| r.method == method)
    }
}

/// Ranks methods on accuracy (descending), ECE and NLL (ascending) and
/// averages the three ranks.
pub fn rank_aggregate(reports: &[CalibrationReport]) -> Result<RankTable> {
    if reports.len() < 2 {
        return Err(Error::Input("rank aggregation needs at least two methods".into()));
    }
    let split = &reports[0].split;
    if let Some(r) = reports.iter().find(|r| &r.split != split) {
        return Err(Error::Input(format!(
            "cannot rank across splits: {} is on {:?}, {} is on {:?}",
            reports[0].method, split, r.method, r.split
        )));
    }
    let column = |f: fn(&CalibrationReport) -> f64| reports.iter().map(f).collect::<Vec<_>>();
    let acc = tie_averaged_ranks(&column(|r| r.accuracy), false);
    let ece = tie_averaged_ranks(&column(|r| r.ece), true);
    let nll = tie_averaged_ranks(&column(|r| r.nll), true);
    let rows = reports
        .iter()
        .enumerate()
        .map(|(i, r)| MethodRank {
            method: r.method.clone(),
            accuracy: acc[i],
            ece: ece[i],
            nll: nll[i],
            average: (acc[i] + ece[i] + nll[i]) / 3.0,
        })
        .collect();
    Ok(RankTable {
        split: split.clone(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn report(method: &str, accuracy: f64, ece: f64, nll: f64) -> CalibrationReport {
        CalibrationReport {
            method: method.into(),
            split: "test".into(),
            n_samples: 0,
            accuracy,
            ece,
            nll,
            brier: 0.0,
            bins: vec![],
        }
    }

    /// Per-sample scan that tests every bin's bounds directly.
    fn brute_force_ece(conf: &[f64], correct: &[bool], n_bins: usize) -> f64 {
        let n = n_bins as f64;
        let mut total = 0.0;
        for s in 1..=n_bins {
            let (lo, hi) = ((s - 1) as f64 / n, s as f64 / n);
            let members: Vec<usize> = (0..conf.len())
                .filter(|&i| (conf[i] > lo && conf[i] <= hi) || (s == 1 && conf[i] == 0.0))
                .collect();
            if members.is_empty() {
                continue;
            }
            let k = members.len() as f64;
            let acc = members.iter().filter(|&&i| correct[i]).count() as f64 / k;
            let c = members.iter().map(|&i| conf[i]).sum::<f64>() / k;
            total += k / conf.len() as f64 * (acc - c).abs();
        }
        total
    }

    #[test]
    fn ece_examples() {
        assert_eq!(ece(&[1.0; 5], &[true; 5], 15).unwrap(), 0.0);
        let correct: Vec<bool> = (0..100).map(|i| i % 2 == 0).collect();
        assert_eq!(ece(&[0.5; 100], &correct, 15).unwrap(), 0.0);
        let e = ece(&[0.6, 0.7, 0.8, 0.9], &[true; 4], 2).unwrap();
        assert!((e - 0.25).abs() < 1e-15);
    }

    #[test]
    fn ece_rejects_bad_input() {
        assert!(ece(&[], &[], 15).is_err());
        assert!(ece(&[1.1], &[true], 15).is_err());
        assert!(ece(&[-0.1], &[true], 15).is_err());
        assert!(ece(&[0.5], &[true], 0).is_err());
        assert!(ece(&[0.5, 0.6], &[true], 15).is_err());
    }

    #[test]
    fn bins_are_right_inclusive() {
        assert_eq!(bin_index(0.0, 10), 0);
        assert_eq!(bin_index(0.1, 10), 0);
        assert_eq!(bin_index(0.1 + 1e-12, 10), 1);
        assert_eq!(bin_index(1.0, 10), 9);
        for s in 1..=15 {
            let edge = s as f64 / 15.0;
            assert_eq!(bin_index(edge, 15), s - 1);
        }
    }

    #[test]
    fn reliability_single_sample() {
        let t = reliability_table(&[0.95], &[true], 10).unwrap();
        assert_eq!(t.len(), 10);
        assert_eq!((t[9].count, t[9].acc, t[9].conf), (1, 1.0, 0.95));
        assert!(t[..9].iter().all(|b| b.count == 0 && b.acc == 0.0 && b.conf == 0.0));
    }

    #[test]
    fn ece_matches_brute_force_on_random_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..2000 {
            let n = rng.random_range(1..60);
            let n_bins = rng.random_range(1..20);
            let conf: Vec<f64> = (0..n)
                .map(|_| match rng.random_range(0..4) {
                    // exact bin edges exercise the inclusive side
                    0 => rng.random_range(0..=n_bins) as f64 / n_bins as f64,
                    _ => rng.random::<f64>(),
                })
                .collect();
            let correct: Vec<bool> = (0..n).map(|_| rng.random()).collect();
            let direct = ece(&conf, &correct, n_bins).unwrap();
            let oracle = brute_force_ece(&conf, &correct, n_bins);
            assert!((direct - oracle).abs() <= 1e-12, "{direct} vs {oracle}");
            let table = reliability_table(&conf, &correct, n_bins).unwrap();
            assert!((ece_from_table(&table, n) - direct).abs() <= 1e-15);
        }
    }

    #[test]
    fn scoring_rule_examples() {
        let half = Matrix::from_rows(&[[0.5, 0.5]]).unwrap();
        assert!((nll(&half, &[0]).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((brier(&half, &[0]).unwrap() - 0.5).abs() < 1e-15);
        let two = Matrix::from_rows(&[[0.8, 0.2], [0.4, 0.6]]).unwrap();
        assert!((nll(&two, &[0, 1]).unwrap() - 0.3669845875401002).abs() < 1e-15);
        let three = Matrix::from_rows(&[[0.7, 0.2, 0.1]]).unwrap();
        assert!((brier(&three, &[0]).unwrap() - 0.14).abs() < 1e-15);
        let onehot = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        assert_eq!(nll(&onehot, &[1, 0]).unwrap(), 0.0);
        assert_eq!(brier(&onehot, &[1, 0]).unwrap(), 0.0);
        assert_eq!(accuracy(&onehot, &[1, 0]).unwrap(), 1.0);
        assert_eq!(accuracy(&onehot, &[0, 1]).unwrap(), 0.0);
        assert!(nll(&onehot, &[2, 0]).is_err());
    }

    #[test]
    fn accuracy_breaks_ties_low() {
        let uniform = Matrix::from_rows(&[[0.25; 4], [0.25; 4]]).unwrap();
        assert_eq!(accuracy(&uniform, &[0, 0]).unwrap(), 1.0);
    }

    #[test]
    fn single_bin_is_global_gap() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let conf: Vec<f64> = (0..200).map(|_| rng.random()).collect();
        let correct: Vec<bool> = (0..200).map(|_| rng.random()).collect();
        let acc = correct.iter().filter(|&&c| c).count() as f64 / 200.0;
        let mean = conf.iter().sum::<f64>() / 200.0;
        assert!((ece(&conf, &correct, 1).unwrap() - (acc - mean).abs()).abs() < 1e-12);
    }

    #[test]
    fn resnet50_reference_ranks() {
        let reports = [
            report("SL1H", 80.71, 5.79, 53.46),
            report("LS", 74.81, 2.55, 64.27),
            report("MbLS", 75.02, 3.26, 63.86),
            report("MixUp", 76.00, 3.67, 62.72),
            report("DCA", 76.17, 5.75, 62.13),
            report("D-Ens", 82.19, 2.42, 46.64),
            report("2HSL", 80.97, 4.36, 51.42),
            report("2HML", 80.28, 4.49, 51.86),
            report("4HML", 81.13, 3.09, 49.44),
        ];
        let table = rank_aggregate(&reports).unwrap();
        let printed = [
            ("SL1H", 6.0),
            ("LS", 6.7),
            ("MbLS", 6.7),
            ("MixUp", 6.3),
            ("DCA", 6.7),
            ("D-Ens", 1.0),
            ("2HSL", 4.0),
            ("2HML", 5.3),
            ("4HML", 2.3),
        ];
        for (m, r) in printed {
            let avg = table.get(m).unwrap().average;
            assert_eq!((avg * 10.0).round() / 10.0, r, "{m}: {avg}");
        }
    }

    #[test]
    fn ties_share_rank() {
        let t = rank_aggregate(&[report("a", 0.9, 0.1, 0.3), report("b", 0.9, 0.1, 0.3)]).unwrap();
        assert!(t.rows.iter().all(|r| r.average == 1.5));
        assert_eq!(tie_averaged_ranks(&[3.0, 1.0, 3.0, 2.0], true), vec![3.5, 1.0, 3.5, 2.0]);
        assert_eq!(tie_averaged_ranks(&[3.0, 1.0, 3.0, 2.0], false), vec![1.5, 4.0, 1.5, 3.0]);
    }

    #[test]
    fn rank_rejects_mixed_splits() {
        let mut b = report("b", 0.5, 0.1, 0.2);
        b.split = "val".into();
        assert!(rank_aggregate(&[report("a", 0.5, 0.1, 0.2), b]).is_err());
        assert!(rank_aggregate(&[report("a", 0.5, 0.1, 0.2)]).is_err());
    }

    #[test]
    fn three_methods_match_sort_oracle() {
        let reports = [report("a", 0.80, 0.05, 0.50), report("b", 0.85, 0.07, 0.45), report("c", 0.75, 0.02, 0.60)];
        let t = rank_aggregate(&reports).unwrap();
        // acc: b a c; ece: c a b; nll: b a c
        let expect = [("a", 2.0), ("b", 5.0 / 3.0), ("c", 7.0 / 3.0)];
        for (m, r) in expect {
            assert!((t.get(m).unwrap().average - r).abs() < 1e-15);
        }
    }

    #[test]
    fn report_round_trip() {
        let probs = Matrix::from_rows(&[[0.7, 0.2, 0.1], [0.1, 0.6, 0.3], [0.3, 0.3, 0.4], [1.0 / 3.0; 3]]).unwrap();
        let r = CalibrationReport::compute("SL1H", "test", &probs, &[0, 2, 2, 1], 15).unwrap();
        let text = r.to_json().unwrap();
        let back = CalibrationReport::from_json(&text).unwrap();
        assert_eq!(back, r.rounded());
        assert_eq!(back.to_json().unwrap(), text);
        assert!(text.contains("\"ece\": 0.458333"), "{text}");
    }

    proptest! {
        #[test]
        fn metrics_permutation_invariant(seed in 0u64..500, n in 1usize..40) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = 3;
            let rows: Vec<Vec<f64>> = (0..n).map(|_| {
                let v: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-3).collect();
                let s: f64 = v.iter().sum();
                v.into_iter().map(|x| x / s).collect()
            }).collect();
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            let mut order: Vec<usize> = (0..n).collect();
            order.reverse();
            order.rotate_left(seed as usize % n);
            let a = Matrix::from_rows(&rows).unwrap();
            let b = a.select_rows(&order);
            let lb: Vec<usize> = order.iter().map(|&i| labels[i]).collect();
            let ra = CalibrationReport::compute("m", "s", &a, &labels, 15).unwrap();
            let rb = CalibrationReport::compute("m", "s", &b, &lb, 15).unwrap();
            prop_assert!((ra.ece - rb.ece).abs() < 1e-12);
            prop_assert!((ra.nll - rb.nll).abs() < 1e-12);
            prop_assert!((ra.brier - rb.brier).abs() < 1e-12);
            prop_assert_eq!(ra.accuracy, rb.accuracy);
            prop_assert!((0.0..=1.0).contains(&ra.ece));
            prop_assert!((0.0..=2.0).contains(&ra.brier));
            prop_assert!(ra.nll >= 0.0);
        }

        #[test]
        fn rank_sum_preserved(vals in proptest::collection::vec(0u8..5, 2..10)) {
            let v: Vec<f64> = vals.iter().map(|&x| x as f64).collect();
            let n = v.len() as f64;
            let s: f64 = tie_averaged_ranks(&v, true).iter().sum();
            prop_assert!((s - n * (n + 1.0) / 2.0).abs() < 1e-12);
        }
    }
}
