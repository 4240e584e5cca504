//! Method × seed experiment runner, summaries and rendered tables.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::{gen_gaussian_mixture, Dataset, Split, SyntheticSpec};
use super::train::{train_method, MethodConfig, MethodKind, Predictor};
use crate::metrics::{self, ser_sig6, CalibrationReport, RankTable, DEFAULT_BINS};
use crate::posthoc::{apply_temperature, fit_temperature};
use crate::{Error, Result};

pub const RESULT_FORMAT: &str = "mhml-suite-result";
pub const RESULT_VERSION: u32 = 1;

/// Slack allowed when comparing validation NLL at the fitted temperature
/// against `T = 1`.
pub const TS_NLL_SLACK: f64 = 1e-12;

/// The dataset is fixed by `data.seed`; each method is trained once per
/// entry of `seeds`, which replaces the method's own seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteConfig {
    pub data: SyntheticSpec,
    pub methods: Vec<MethodConfig>,
    pub seeds: Vec<u64>,
    pub n_bins: usize,
    pub temperature_scaling: bool,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            data: SyntheticSpec::default(),
            methods: MethodKind::ALL.into_iter().map(MethodConfig::new).collect(),
            seeds: (0..5).collect(),
            n_bins: DEFAULT_BINS,
            temperature_scaling: true,
        }
    }
}

impl SuiteConfig {
    /// Re-seeds everything from one master seed: the dataset gets `seed`,
    /// the runs get `seed, seed + 1, ...`.
    pub fn reseed(&mut self, seed: u64) {
        self.data.seed = seed;
        let n = self.seeds.len() as u64;
        self.seeds = (0..n).map(|i| seed.wrapping_add(i)).collect();
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        if self.methods.is_empty() {
            return Err(Error::Config("suite needs at least one method".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("suite needs at least one seed".into()));
        }
        if self.n_bins == 0 {
            return Err(Error::Config("n_bins must be at least 1".into()));
        }
        for m in &self.methods {
            m.validate()?;
        }
        let mut names: Vec<&str> = self.methods.iter().map(|m| m.kind.name()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("each method may appear only once in a suite".into()));
        }
        Ok(())
    }
}

/// Temperature scaling on one trained predictor. `pre` and `post` are
/// test-split reports of `softmax(mean logits)` and `softmax(mean logits / T)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsOutcome {
    #[serde(serialize_with = "ser_sig6")]
    pub temperature: f64,
    #[serde(serialize_with = "ser_sig6")]
    pub val_nll_at_one: f64,
    #[serde(serialize_with = "ser_sig6")]
    pub val_nll_fitted: f64,
    pub accuracy_preserved: bool,
    pub nll_not_worse: bool,
    pub pre: CalibrationReport,
    pub post: CalibrationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub method: String,
    pub seed: u64,
    pub report: Option<CalibrationReport>,
    pub temperature_scaling: Option<TsOutcome>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    #[serde(serialize_with = "ser_sig6")]
    pub accuracy: f64,
    #[serde(serialize_with = "ser_sig6")]
    pub ece: f64,
    #[serde(serialize_with = "ser_sig6")]
    pub nll: f64,
    #[serde(serialize_with = "ser_sig6")]
    pub brier: f64,
}

impl MetricSet {
    fn of(r: &CalibrationReport) -> Self {
        Self {
            accuracy: r.accuracy,
            ece: r.ece,
            nll: r.nll,
            brier: r.brier,
        }
    }

    fn combine(sets: &[MetricSet], f: fn(&[f64]) -> f64) -> Self {
        let col = |g: fn(&MetricSet) -> f64| f(&sets.iter().map(g).collect::<Vec<_>>());
        Self {
            accuracy: col(|s| s.accuracy),
            ece: col(|s| s.ece),
            nll: col(|s| s.nll),
            brier: col(|s| s.brier),
        }
    }
}

/// Medians of the temperature-scaling outcomes across seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TsSummary {
    #[serde(serialize_with = "ser_sig6")]
    pub temperature: f64,
    pub pre: MetricSet,
    pub post: MetricSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub seeds_ok: usize,
    pub median: Option<MetricSet>,
    /// Sample standard deviation across seeds (0 for a single seed).
    pub std: Option<MetricSet>,
    pub temperature_scaling: Option<TsSummary>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckKind {
    /// A guarantee of the implementation; a failure is an error.
    Contract,
    /// A directional expectation about method ordering; may fail on some data.
    Trend,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub kind: CheckKind,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub format: String,
    pub version: u32,
    pub config: SuiteConfig,
    pub test_samples: usize,
    pub cells: Vec<CellResult>,
    pub summaries: Vec<MethodSummary>,
    pub ranks: Option<RankTable>,
    pub checks: Vec<Check>,
}

impl ExperimentResult {
    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(text)?;
        if r.format != RESULT_FORMAT || r.version != RESULT_VERSION {
            return Err(Error::Input(format!("unsupported result document {} v{}", r.format, r.version)));
        }
        Ok(r)
    }

    pub fn summary(&self, method: &str) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }

    pub fn contracts_hold(&self) -> bool {
        self.checks.iter().filter(|c| c.kind == CheckKind::Contract).all(|c| c.passed)
    }
}

/// Scores a predictor's combined probabilities on one split.
pub fn evaluate(predictor: &Predictor, split: &Split, n_bins: usize, method: &str, split_name: &str) -> Result<CalibrationReport> {
    if split.is_empty() {
        return Err(Error::Input(format!("cannot evaluate {method} on an empty {split_name} split")));
    }
    let probs = predictor.probs(&split.x)?;
    CalibrationReport::compute(method, split_name, &probs, &split.y, n_bins)
}

/// Fits a temperature on the validation split's mean logits and scores the
/// test split before and after scaling.
pub fn temperature_scale(predictor: &Predictor, data: &Dataset, n_bins: usize, method: &str) -> Result<TsOutcome> {
    let val_z = predictor.mean_logits(&data.val.x)?;
    let (t, fit) = fit_temperature(&val_z, &data.val.y)?;
    let test_z = predictor.mean_logits(&data.test.x)?;
    let pre_p = apply_temperature(&test_z, crate::posthoc::Temperature::ONE)?;
    let post_p = apply_temperature(&test_z, t)?;
    let pre = CalibrationReport::compute(format!("{method}+logit-avg"), "test", &pre_p, &data.test.y, n_bins)?;
    let post = CalibrationReport::compute(format!("{method}+TS"), "test", &post_p, &data.test.y, n_bins)?;
    Ok(TsOutcome {
        temperature: t.value(),
        val_nll_at_one: fit.nll_at_one,
        val_nll_fitted: fit.nll,
        accuracy_preserved: pre.accuracy == post.accuracy,
        nll_not_worse: fit.nll <= fit.nll_at_one + TS_NLL_SLACK,
        pre,
        post,
    })
}

fn run_cell(cfg: &SuiteConfig, method: &MethodConfig, seed: u64, data: &Dataset) -> CellResult {
    let name = method.kind.name();
    let outcome = (|| -> Result<(CalibrationReport, Option<TsOutcome>)> {
        let mc = MethodConfig { seed, ..method.clone() };
        let predictor = train_method(&mc, data)?;
        let report = evaluate(&predictor, &data.test, cfg.n_bins, name, "test")?;
        let ts = if cfg.temperature_scaling {
            Some(temperature_scale(&predictor, data, cfg.n_bins, name)?)
        } else {
            None
        };
        Ok((report, ts))
    })();
    match outcome {
        Ok((report, ts)) => CellResult {
            method: name.into(),
            seed,
            report: Some(report),
            temperature_scaling: ts,
            error: None,
        },
        Err(e) => CellResult {
            method: name.into(),
            seed,
            report: None,
            temperature_scaling: None,
            error: Some(e.to_string()),
        },
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Sample standard deviation; 0 for fewer than two values.
pub fn std_dev(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

fn summarize(method: &str, cells: &[CellResult]) -> MethodSummary {
    let ok: Vec<&CellResult> = cells.iter().filter(|c| c.method == method && c.report.is_some()).collect();
    let sets: Vec<MetricSet> = ok.iter().map(|c| MetricSet::of(c.report.as_ref().unwrap())).collect();
    let ts: Vec<&TsOutcome> = ok.iter().filter_map(|c| c.temperature_scaling.as_ref()).collect();
    let temperature_scaling = (!ts.is_empty()).then(|| {
        let pre: Vec<MetricSet> = ts.iter().map(|t| MetricSet::of(&t.pre)).collect();
        let post: Vec<MetricSet> = ts.iter().map(|t| MetricSet::of(&t.post)).collect();
        TsSummary {
            temperature: median(&ts.iter().map(|t| t.temperature).collect::<Vec<_>>()),
            pre: MetricSet::combine(&pre, median),
            post: MetricSet::combine(&post, median),
        }
    });
    MethodSummary {
        method: method.into(),
        seeds_ok: ok.len(),
        median: (!sets.is_empty()).then(|| MetricSet::combine(&sets, median)),
        std: (!sets.is_empty()).then(|| MetricSet::combine(&sets, std_dev)),
        temperature_scaling,
    }
}

fn rank_medians(summaries: &[MethodSummary], test_samples: usize) -> Result<Option<RankTable>> {
    let reports: Vec<CalibrationReport> = summaries
        .iter()
        .filter_map(|s| {
            s.median.map(|m| CalibrationReport {
                method: s.method.clone(),
                split: "test".into(),
                n_samples: test_samples,
                accuracy: m.accuracy,
                ece: m.ece,
                nll: m.nll,
                brier: m.brier,
                bins: vec![],
            })
        })
        .collect();
    if reports.len() < 2 {
        return Ok(None);
    }
    metrics::rank_aggregate(&reports).map(Some)
}

fn check(name: &str, kind: CheckKind, passed: bool, detail: String) -> Check {
    Check {
        name: name.into(),
        kind,
        passed,
        detail,
    }
}

fn suite_checks(cells: &[CellResult], summaries: &[MethodSummary]) -> Vec<Check> {
    let mut out = Vec::new();
    let failed: Vec<String> = cells
        .iter()
        .filter(|c| c.error.is_some())
        .map(|c| format!("{}/seed {}", c.method, c.seed))
        .collect();
    out.push(check(
        "all cells completed",
        CheckKind::Contract,
        failed.is_empty(),
        if failed.is_empty() { format!("{} cells", cells.len()) } else { format!("failed: {}", failed.join(", ")) },
    ));
    let ts: Vec<(&CellResult, &TsOutcome)> = cells
        .iter()
        .filter_map(|c| c.temperature_scaling.as_ref().map(|t| (c, t)))
        .collect();
    if !ts.is_empty() {
        let bad_acc: Vec<String> = ts
            .iter()
            .filter(|(_, t)| !t.accuracy_preserved)
            .map(|(c, _)| format!("{}/seed {}", c.method, c.seed))
            .collect();
        out.push(check(
            "TS preserves test accuracy",
            CheckKind::Contract,
            bad_acc.is_empty(),
            if bad_acc.is_empty() { format!("{} models", ts.len()) } else { bad_acc.join(", ") },
        ));
        let worst = ts
            .iter()
            .map(|(_, t)| t.val_nll_fitted - t.val_nll_at_one)
            .fold(f64::NEG_INFINITY, f64::max);
        out.push(check(
            "TS validation NLL <= NLL at T=1",
            CheckKind::Contract,
            ts.iter().all(|(_, t)| t.nll_not_worse),
            format!("max NLL(T*) - NLL(1) = {worst:.3e}"),
        ));
    }

    let med = |m: MethodKind| summaries.iter().find(|s| s.method == m.name()).and_then(|s| s.median);
    if let (Some(ml), Some(sl)) = (med(MethodKind::FourHml), med(MethodKind::Sl1h)) {
        out.push(check(
            "median ECE 4HML < SL1H",
            CheckKind::Trend,
            ml.ece < sl.ece,
            format!("{:.5} vs {:.5}", ml.ece, sl.ece),
        ));
        out.push(check(
            "median NLL 4HML <= SL1H",
            CheckKind::Trend,
            ml.nll <= sl.nll,
            format!("{:.5} vs {:.5}", ml.nll, sl.nll),
        ));
        out.push(check(
            "median ACC 4HML >= SL1H - 0.01",
            CheckKind::Trend,
            ml.accuracy >= sl.accuracy - 0.01,
            format!("{:.5} vs {:.5}", ml.accuracy, sl.accuracy),
        ));
    }
    if let (Some(de), Some(sl)) = (med(MethodKind::DEns), med(MethodKind::Sl1h)) {
        out.push(check(
            "median NLL D-Ens <= SL1H",
            CheckKind::Trend,
            de.nll <= sl.nll,
            format!("{:.5} vs {:.5}", de.nll, sl.nll),
        ));
    }
    out
}

/// Trains and evaluates every (method, seed) cell on one generated dataset.
/// With `jobs > 1` cells run on a thread pool; results are assembled in
/// config order, so the document does not depend on `jobs`.
pub fn run_suite(cfg: &SuiteConfig, jobs: usize) -> Result<ExperimentResult> {
    cfg.validate()?;
    let data = gen_gaussian_mixture(&cfg.data)?;
    run_suite_on(cfg, &data, jobs)
}

/// As [`run_suite`] on a dataset supplied by the caller.
pub fn run_suite_on(cfg: &SuiteConfig, data: &Dataset, jobs: usize) -> Result<ExperimentResult> {
    cfg.validate()?;
    let grid: Vec<(&MethodConfig, u64)> = cfg
        .methods
        .iter()
        .flat_map(|m| cfg.seeds.iter().map(move |&s| (m, s)))
        .collect();
    let cells: Vec<CellResult> = if jobs <= 1 {
        grid.iter().map(|&(m, s)| run_cell(cfg, m, s, data)).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| grid.par_iter().map(|&(m, s)| run_cell(cfg, m, s, data)).collect())
    };
    let summaries: Vec<MethodSummary> = cfg.methods.iter().map(|m| summarize(m.kind.name(), &cells)).collect();
    let ranks = rank_medians(&summaries, data.test.len())?;
    let checks = suite_checks(&cells, &summaries);
    Ok(ExperimentResult {
        format: RESULT_FORMAT.into(),
        version: RESULT_VERSION,
        config: cfg.clone(),
        test_samples: data.test.len(),
        cells,
        summaries,
        ranks,
        checks,
    })
}

/// Plain-text tables: medians with ranks, dispersion, and temperature
/// scaling. With `percent`, accuracy, ECE and NLL are shown ×100.
pub fn render_tables(result: &ExperimentResult, percent: bool) -> String {
    let scale = if percent { 100.0 } else { 1.0 };
    let num = |v: f64| if percent { format!("{:.2}", v * scale) } else { format!("{:.4}", v) };
    let mut out = String::new();
    let unit = if percent { " (ACC/ECE/NLL x100)" } else { "" };
    let _ = writeln!(
        out,
        "Median over {} seed(s), {} test samples{unit}",
        result.config.seeds.len(),
        result.test_samples
    );
    let _ = writeln!(out, "{:<8} {:>8} {:>8} {:>8} {:>6}", "Method", "ACC", "ECE", "NLL", "Rank");
    for s in &result.summaries {
        let rank = result
            .ranks
            .as_ref()
            .and_then(|r| r.get(&s.method))
            .map_or("-".to_string(), |r| format!("{:.1}", r.average));
        match s.median {
            Some(m) => {
                let _ = writeln!(
                    out,
                    "{:<8} {:>8} {:>8} {:>8} {:>6}",
                    s.method,
                    num(m.accuracy),
                    num(m.ece),
                    num(m.nll),
                    rank
                );
            }
            None => {
                let _ = writeln!(out, "{:<8} {:>8} {:>8} {:>8} {:>6}", s.method, "failed", "-", "-", rank);
            }
        }
    }

    let _ = writeln!(out, "\nStandard deviation across seeds");
    let _ = writeln!(out, "{:<8} {:>8} {:>8} {:>8}", "Method", "ACC", "ECE", "NLL");
    for s in &result.summaries {
        if let Some(d) = s.std {
            let _ = writeln!(out, "{:<8} {:>8} {:>8} {:>8}", s.method, num(d.accuracy), num(d.ece), num(d.nll));
        }
    }

    if result.summaries.iter().any(|s| s.temperature_scaling.is_some()) {
        let _ = writeln!(out, "\nTemperature scaling on averaged logits (medians)");
        let _ = writeln!(
            out,
            "{:<8} {:>7} {:>8} {:>8} {:>8} {:>8} {:>8}",
            "Method", "T", "ACC", "ECE", "ECE+TS", "NLL", "NLL+TS"
        );
        for s in &result.summaries {
            if let Some(t) = s.temperature_scaling {
                let _ = writeln!(
                    out,
                    "{:<8} {:>7.3} {:>8} {:>8} {:>8} {:>8} {:>8}",
                    s.method,
                    t.temperature,
                    num(t.pre.accuracy),
                    num(t.pre.ece),
                    num(t.post.ece),
                    num(t.pre.nll),
                    num(t.post.nll)
                );
            }
        }
    }

    let _ = writeln!(out, "\nChecks");
    for c in &result.checks {
        let kind = match c.kind {
            CheckKind::Contract => "contract",
            CheckKind::Trend => "trend",
        };
        let _ = writeln!(
            out,
            "[{}] {:<8} {} ({})",
            if c.passed { "PASS" } else { "FAIL" },
            kind,
            c.name,
            c.detail
        );
    }
    out
}

/// Long-format CSV of every cell's reliability table, for plotting.
pub fn reliability_csv(result: &ExperimentResult) -> String {
    let mut out = String::from("method,seed,bin,lo,hi,count,acc,conf\n");
    for c in &result.cells {
        if let Some(r) = &c.report {
            for (i, b) in r.bins.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    c.method,
                    c.seed,
                    i + 1,
                    metrics::round_sig6(b.lo),
                    metrics::round_sig6(b.hi),
                    b.count,
                    metrics::round_sig6(b.acc),
                    metrics::round_sig6(b.conf)
                );
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SuiteConfig {
        let method = |k| MethodConfig {
            epochs: 2,
            hidden: vec![8],
            ensemble_size: 2,
            ..MethodConfig::new(k)
        };
        SuiteConfig {
            data: SyntheticSpec {
                n_train: 400,
                n_val: 100,
                n_test: 200,
                ..SyntheticSpec::default()
            },
            methods: vec![method(MethodKind::Sl1h), method(MethodKind::DEns), method(MethodKind::FourHml)],
            seeds: vec![0, 1],
            ..SuiteConfig::default()
        }
    }

    #[test]
    fn median_and_std() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(std_dev(&[5.0]), 0.0);
        assert!((std_dev(&[1.0, 2.0, 3.0, 4.0]) - 1.2909944487358056).abs() < 1e-15);
    }

    #[test]
    fn suite_is_deterministic_across_jobs() {
        let cfg = tiny();
        let a = run_suite(&cfg, 1).unwrap();
        let b = run_suite(&cfg, 3).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert!(a.contracts_hold(), "{:?}", a.checks);
        assert_eq!(a.cells.len(), 6);
        assert!(a.ranks.is_some());
        let text = a.to_json().unwrap();
        let back = ExperimentResult::from_json(&text).unwrap();
        assert_eq!(back.to_json().unwrap(), text);
        assert_eq!(back.config, cfg);
        assert!(render_tables(&back, true).contains("4HML"));
        assert!(reliability_csv(&back).lines().count() == 1 + 6 * 15);
    }

    #[test]
    fn single_cell_reduces_to_evaluate() {
        let mut cfg = tiny();
        cfg.methods.truncate(1);
        cfg.seeds = vec![7];
        cfg.temperature_scaling = false;
        let r = run_suite(&cfg, 1).unwrap();
        let data = gen_gaussian_mixture(&cfg.data).unwrap();
        let p = train_method(&MethodConfig { seed: 7, ..cfg.methods[0].clone() }, &data).unwrap();
        let direct = evaluate(&p, &data.test, 15, "SL1H", "test").unwrap();
        assert_eq!(r.cells[0].report.as_ref(), Some(&direct));
        assert_eq!(r.summaries[0].median.unwrap().ece, direct.ece);
        assert!(r.ranks.is_none());
    }

    #[test]
    fn failing_cell_is_recorded() {
        let mut cfg = tiny();
        // more heads than classes passes config validation but fails in training
        cfg.methods[2].heads = Some(9);
        cfg.seeds = vec![0];
        let r = run_suite(&cfg, 1).unwrap();
        assert!(r.cells[2].error.as_deref().unwrap().contains("heads"), "{:?}", r.cells[2]);
        assert!(r.cells[..2].iter().all(|c| c.report.is_some()));
        assert!(!r.contracts_hold());
        assert_eq!(r.summaries[2].seeds_ok, 0);
        assert!(render_tables(&r, true).contains("failed"));
    }

    #[test]
    fn reseed_moves_every_seed() {
        let mut cfg = SuiteConfig::default();
        cfg.reseed(100);
        assert_eq!(cfg.data.seed, 100);
        assert_eq!(cfg.seeds, vec![100, 101, 102, 103, 104]);
    }

    #[test]
    fn config_rejects_duplicates_and_unknown_fields() {
        let mut cfg = tiny();
        cfg.methods.push(cfg.methods[0].clone());
        assert!(cfg.validate().is_err());
        assert!(serde_json::from_str::<SuiteConfig>(r#"{"sedes": [1]}"#).is_err());
        let partial: SuiteConfig = serde_json::from_str(r#"{"seeds": [3]}"#).unwrap();
        assert_eq!(partial.methods.len(), 6);
    }
}
