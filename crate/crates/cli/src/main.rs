//! `mhml`: data generation, training, evaluation, gradient checks and the
//! benchmark suite from the command line.
//!
//! Precedence for every setting: command-line flag, then config file, then
//! built-in default. `MHML_SEED` is consulted only when neither a flag nor the
//! config file sets a seed. Exit status: 0 success, 1 failed check or runtime
//! error, 2 usage or configuration error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use mhml::bench::{
    self, evaluate, gen_gaussian_mixture, geometric_priors, read_dataset_csv, read_predictions_csv,
    reliability_csv, render_tables, run_suite_on, temperature_scale, Dataset, ExperimentResult, MethodConfig,
    MethodKind, Predictor, SuiteConfig, SyntheticSpec, TsOutcome,
};
use mhml::gradcheck::{self, GradCheckConfig, GradCheckReport};
use mhml::metrics::{CalibrationReport, DEFAULT_BINS};
use mhml::mhml::Checkpoint;
use mhml::{Error, Result};

const SEED_ENV: &str = "MHML_SEED";

#[derive(Parser, Debug)]
#[command(name = "mhml", version, about = "Multi-head multi-loss calibration lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a Gaussian-mixture dataset as CSV (plus a `.spec.json` sidecar).
    GenData(GenDataArgs),
    /// Train one method; writes a checkpoint and a report.
    Train(TrainArgs),
    /// Score a predictions CSV, or a checkpoint on a dataset CSV.
    Eval(EvalArgs),
    /// Run the gradient-property and backprop harnesses.
    Gradcheck(GradcheckArgs),
    /// Train and evaluate the method roster over several seeds.
    Suite(SuiteArgs),
    /// Re-render the tables of an existing suite result document.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct DataFlags {
    /// Number of classes (priors become geometric, ratio 0.8).
    #[arg(long)]
    k: Option<usize>,
    /// Feature dimension.
    #[arg(long)]
    dim: Option<usize>,
}

#[derive(Args, Debug)]
struct DisplayFlags {
    /// Show accuracy, ECE and NLL multiplied by 100.
    #[arg(long, action = ArgAction::Set, default_value_t = true, value_name = "BOOL")]
    percent: bool,
}

#[derive(Args, Debug)]
struct GenDataArgs {
    /// JSON file with SyntheticSpec fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset seed (falls back to MHML_SEED).
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    data: DataFlags,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// JSON file with `data`, `method` and `n_bins` fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run seed for data and training (falls back to MHML_SEED).
    #[arg(long)]
    seed: Option<u64>,
    /// SL1H, LS, D-Ens, 2HSL, 2HML or 4HML.
    #[arg(long)]
    method: Option<MethodKind>,
    /// Number of heads for multi-head methods.
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// SGD learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// ECE bins.
    #[arg(long)]
    bins: Option<usize>,
    #[command(flatten)]
    data: DataFlags,
    /// Train on a dataset CSV instead of generating one.
    #[arg(long)]
    data_csv: Option<PathBuf>,
    /// Split sizes `train,val,test` for a CSV without a spec sidecar.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    splits: Option<Vec<usize>>,
    #[command(flatten)]
    display: DisplayFlags,
    /// Output directory for checkpoint.json and report.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Predictions CSV with header p0,...,p{K-1},label.
    #[arg(long, conflicts_with = "checkpoint")]
    preds: Option<PathBuf>,
    /// Checkpoint to score; requires --data-csv.
    #[arg(long, requires = "data_csv")]
    checkpoint: Option<PathBuf>,
    /// Dataset CSV; with a spec sidecar only its test split is scored.
    #[arg(long)]
    data_csv: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    #[command(flatten)]
    display: DisplayFlags,
    /// Write the report JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Random trials per harness.
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Relative-error tolerance.
    #[arg(long, default_value_t = gradcheck::DEFAULT_TOL)]
    tol: f64,
    /// Master seed for the trials.
    #[arg(long)]
    seed: Option<u64>,
    /// Write the reports as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Corrupt the analytic gradients to exercise the failure path.
    #[arg(long, hide = true)]
    inject_fault: bool,
}

#[derive(Args, Debug)]
struct SuiteArgs {
    /// Suite config JSON, or a previous result document (its config is reused).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed: dataset seed and first run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated subset of methods.
    #[arg(long, value_delimiter = ',')]
    method: Option<Vec<MethodKind>>,
    /// Heads for the multi-head methods only.
    #[arg(long)]
    heads: Option<usize>,
    /// Epochs for every method.
    #[arg(long)]
    epochs: Option<usize>,
    /// SGD learning rate for every method.
    #[arg(long)]
    lr: Option<f64>,
    /// ECE bins.
    #[arg(long)]
    bins: Option<usize>,
    #[command(flatten)]
    data: DataFlags,
    /// Worker threads for independent (method, seed) cells.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[command(flatten)]
    display: DisplayFlags,
    /// Output directory for result.json, config.json, table.txt and reliability.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Suite result document.
    input: PathBuf,
    #[command(flatten)]
    display: DisplayFlags,
    /// Also write the rendered tables here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct TrainConfig {
    data: SyntheticSpec,
    method: MethodConfig,
    n_bins: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            data: SyntheticSpec::default(),
            method: MethodConfig::new(MethodKind::Sl1h),
            n_bins: DEFAULT_BINS,
        }
    }
}

#[derive(Debug, Serialize)]
struct TrainReport<'a> {
    format: &'static str,
    config: &'a TrainConfig,
    data_source: String,
    test: &'a CalibrationReport,
    temperature_scaling: Option<&'a TsOutcome>,
}

#[derive(Debug, Serialize)]
struct GradcheckDocument<'a> {
    format: &'static str,
    trials: usize,
    tol: f64,
    eps: f64,
    seed: u64,
    reports: &'a [GradCheckReport],
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.into(),
            source: e,
        })?;
    }
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })
}

/// Parses a config file and reports whether it sets any seed.
fn load_config<T: DeserializeOwned>(path: &Path) -> Result<(T, bool)> {
    let text = read_text(path)?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.into(),
        message: e.to_string(),
    })?;
    let seeded = mentions_seed(&value);
    let cfg = serde_json::from_value(value).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    Ok((cfg, seeded))
}

fn mentions_seed(v: &serde_json::Value) -> bool {
    match v {
        serde_json::Value::Object(map) => map
            .iter()
            .any(|(k, v)| k == "seed" || k == "seeds" || mentions_seed(v)),
        serde_json::Value::Array(items) => items.iter().any(mentions_seed),
        _ => false,
    }
}

/// Flag, else (if the config is silent) `MHML_SEED`, else nothing.
fn resolve_seed(flag: Option<u64>, config_sets_seed: bool) -> Result<Option<u64>> {
    if flag.is_some() {
        return Ok(flag);
    }
    if config_sets_seed {
        return Ok(None);
    }
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{SEED_ENV}={s:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn apply_data_flags(spec: &mut SyntheticSpec, flags: &DataFlags) {
    if let Some(k) = flags.k {
        spec.classes = k;
        spec.priors = geometric_priors(k, 0.8);
    }
    if let Some(d) = flags.dim {
        spec.dim = d;
    }
}

fn echo<T: Serialize>(title: &str, value: &T) -> Result<()> {
    println!("resolved {title}:\n{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn sidecar(csv: &Path) -> PathBuf {
    csv.with_extension("spec.json")
}

fn print_report(r: &CalibrationReport, percent: bool) {
    let f = |v: f64| if percent { format!("{:.2}", v * 100.0) } else { format!("{v:.4}") };
    println!(
        "{:<12} {:<6} {:>7} {:>8} {:>8} {:>8} {:>8}",
        "method", "split", "n", "ACC", "ECE", "NLL", "Brier"
    );
    println!(
        "{:<12} {:<6} {:>7} {:>8} {:>8} {:>8} {:>8.4}",
        r.method,
        r.split,
        r.n_samples,
        f(r.accuracy),
        f(r.ece),
        f(r.nll),
        r.brier
    );
}

/// Loads a dataset CSV, cutting splits from its sidecar spec, explicit
/// sizes, or (for evaluation) treating every row as the test split.
fn load_dataset(path: &Path, splits: Option<&[usize]>, all_test: bool) -> Result<(Dataset, String)> {
    let (x, y) = read_dataset_csv(path)?;
    let side = sidecar(path);
    let (classes, sizes, spec, how) = if let Some(s) = splits {
        let classes = y.iter().max().map_or(0, |m| m + 1);
        (classes, (s[0], s[1], s[2]), None, "explicit splits")
    } else if side.exists() {
        let (spec, _): (SyntheticSpec, bool) = load_config(&side)?;
        (spec.classes, (spec.n_train, spec.n_val, spec.n_test), Some(spec), "sidecar splits")
    } else if all_test {
        let classes = y.iter().max().map_or(0, |m| m + 1);
        (classes, (0, 0, y.len()), None, "all rows")
    } else {
        return Err(Error::Config(format!(
            "{} has no spec sidecar ({}); pass --splits train,val,test",
            path.display(),
            side.display()
        )));
    };
    let mut data = Dataset::from_rows(x, y, classes, sizes)?;
    data.spec = spec;
    Ok((data, format!("{} ({how})", path.display())))
}

fn gen_data(args: GenDataArgs) -> Result<bool> {
    let (mut spec, seeded) = match &args.config {
        Some(p) => load_config::<SyntheticSpec>(p)?,
        None => (SyntheticSpec::default(), false),
    };
    apply_data_flags(&mut spec, &args.data);
    if let Some(s) = resolve_seed(args.seed, seeded)? {
        spec.seed = s;
    }
    echo("data spec", &spec)?;
    let data = gen_gaussian_mixture(&spec)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    data.write_csv(&args.out)?;
    write_text(&sidecar(&args.out), &(serde_json::to_string_pretty(&spec)? + "\n"))?;
    let (n_train, n_val, n_test) = data.sizes();
    println!(
        "wrote {} ({n_train} train, {n_val} val, {n_test} test rows) and {}",
        args.out.display(),
        sidecar(&args.out).display()
    );
    Ok(true)
}

fn train(args: TrainArgs) -> Result<bool> {
    let (mut cfg, seeded) = match &args.config {
        Some(p) => load_config::<TrainConfig>(p)?,
        None => (TrainConfig::default(), false),
    };
    if let Some(kind) = args.method {
        cfg.method.kind = kind;
    }
    if args.heads.is_some() {
        cfg.method.heads = args.heads;
    }
    if let Some(e) = args.epochs {
        cfg.method.epochs = e;
    }
    if let Some(lr) = args.lr {
        cfg.method.lr = lr;
    }
    if let Some(b) = args.bins {
        cfg.n_bins = b;
    }
    apply_data_flags(&mut cfg.data, &args.data);
    if let Some(s) = resolve_seed(args.seed, seeded)? {
        cfg.data.seed = s;
        cfg.method.seed = s;
    }
    let (data, source) = match &args.data_csv {
        Some(p) => load_dataset(p, args.splits.as_deref(), false)?,
        None => (gen_gaussian_mixture(&cfg.data)?, "generated from config.data".to_string()),
    };
    if let Some(spec) = &data.spec {
        cfg.data = spec.clone();
    }
    echo("train config", &cfg)?;
    let name = cfg.method.kind.name();
    let predictor = bench::train_method(&cfg.method, &data)?;
    let report = evaluate(&predictor, &data.test, cfg.n_bins, name, "test")?;
    let ts = if data.val.is_empty() {
        None
    } else {
        Some(temperature_scale(&predictor, &data, cfg.n_bins, name)?)
    };
    create_dir(&args.out)?;
    predictor.to_checkpoint(name).save(&args.out.join("checkpoint.json"))?;
    let doc = TrainReport {
        format: "mhml-train-report",
        config: &cfg,
        data_source: source,
        test: &report,
        temperature_scaling: ts.as_ref(),
    };
    write_text(&args.out.join("report.json"), &(serde_json::to_string_pretty(&doc)? + "\n"))?;
    print_report(&report, args.display.percent);
    let mut ok = true;
    if let Some(t) = &ts {
        print_report(&t.post, args.display.percent);
        println!("temperature {:.4}", t.temperature);
        ok = t.accuracy_preserved && t.nll_not_worse;
    }
    println!("wrote {}", args.out.display());
    Ok(ok)
}

fn eval(args: EvalArgs) -> Result<bool> {
    let report = if let Some(p) = &args.preds {
        echo("eval config", &serde_json::json!({ "preds": p, "bins": args.bins }))?;
        let (probs, labels) = read_predictions_csv(p)?;
        CalibrationReport::compute(p.display().to_string(), "file", &probs, &labels, args.bins)?
    } else if let (Some(ck), Some(d)) = (&args.checkpoint, &args.data_csv) {
        echo("eval config", &serde_json::json!({ "checkpoint": ck, "data_csv": d, "bins": args.bins }))?;
        let ckpt = Checkpoint::load(ck)?;
        let method = ckpt.method.clone();
        let predictor = Predictor::from_checkpoint(ckpt);
        let (data, _) = load_dataset(d, None, true)?;
        evaluate(&predictor, &data.test, args.bins, &method, "test")?
    } else {
        return Err(Error::Config("eval needs --preds FILE or --checkpoint FILE --data-csv FILE".into()));
    };
    print_report(&report, args.display.percent);
    if let Some(out) = &args.out {
        write_text(out, &(report.to_json()? + "\n"))?;
    }
    Ok(true)
}

fn run_gradcheck(args: GradcheckArgs) -> Result<bool> {
    let seed = resolve_seed(args.seed, false)?.unwrap_or(0);
    let cfg = GradCheckConfig {
        trials: args.trials,
        tol: args.tol,
        seed,
        inject_fault: args.inject_fault,
        ..GradCheckConfig::default()
    };
    echo(
        "gradcheck config",
        &serde_json::json!({ "trials": cfg.trials, "tol": cfg.tol, "eps": cfg.eps, "seed": cfg.seed }),
    )?;
    let reports = vec![
        gradcheck::verify_property1(&cfg)?,
        gradcheck::verify_property2(&cfg)?,
        gradcheck::verify_symmetry(&cfg)?,
        gradcheck::verify_backward(&cfg)?,
    ];
    for r in &reports {
        print!("{r}");
    }
    if let Some(out) = &args.out {
        let doc = GradcheckDocument {
            format: "mhml-gradcheck",
            trials: cfg.trials,
            tol: cfg.tol,
            eps: cfg.eps,
            seed: cfg.seed,
            reports: &reports,
        };
        write_text(out, &(serde_json::to_string_pretty(&doc)? + "\n"))?;
    }
    Ok(reports.iter().all(GradCheckReport::passed))
}

/// A suite config file may be a bare config or a result document.
fn load_suite_config(path: &Path) -> Result<(SuiteConfig, bool)> {
    let text = read_text(path)?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.into(),
        message: e.to_string(),
    })?;
    let value = match value.get("format").and_then(|f| f.as_str()) {
        Some(bench::RESULT_FORMAT) => value["config"].clone(),
        _ => value,
    };
    let seeded = mentions_seed(&value);
    let cfg = serde_json::from_value(value).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    Ok((cfg, seeded))
}

fn suite(args: SuiteArgs) -> Result<bool> {
    let (mut cfg, seeded) = match &args.config {
        Some(p) => load_suite_config(p)?,
        None => (SuiteConfig::default(), false),
    };
    apply_data_flags(&mut cfg.data, &args.data);
    if let Some(kinds) = &args.method {
        let existing = std::mem::take(&mut cfg.methods);
        cfg.methods = kinds
            .iter()
            .map(|&k| {
                existing
                    .iter()
                    .find(|m| m.kind == k)
                    .cloned()
                    .unwrap_or_else(|| MethodConfig::new(k))
            })
            .collect();
    }
    for m in &mut cfg.methods {
        if let Some(e) = args.epochs {
            m.epochs = e;
        }
        if let Some(lr) = args.lr {
            m.lr = lr;
        }
        if args.heads.is_some() && m.kind.is_multi_head() {
            m.heads = args.heads;
        }
    }
    if let Some(b) = args.bins {
        cfg.n_bins = b;
    }
    if let Some(s) = resolve_seed(args.seed, seeded)? {
        cfg.reseed(s);
    }
    if args.jobs == 0 {
        return Err(Error::Config("--jobs must be at least 1".into()));
    }
    echo("suite config", &cfg)?;
    cfg.validate()?;
    let data = gen_gaussian_mixture(&cfg.data)?;
    let result = run_suite_on(&cfg, &data, args.jobs)?;
    // render from the serialized form so `report` reproduces table.txt exactly
    let json = result.to_json()?;
    let result = ExperimentResult::from_json(&json)?;
    let tables = render_tables(&result, args.display.percent);
    print!("{tables}");
    if let Some(dir) = &args.out {
        create_dir(dir)?;
        write_text(&dir.join("result.json"), &json)?;
        write_text(&dir.join("config.json"), &(serde_json::to_string_pretty(&cfg)? + "\n"))?;
        write_text(&dir.join("table.txt"), &tables)?;
        write_text(&dir.join("reliability.csv"), &reliability_csv(&result))?;
        println!("wrote {}", dir.display());
    }
    Ok(result.contracts_hold())
}

fn report(args: ReportArgs) -> Result<bool> {
    let text = read_text(&args.input)?;
    let result = ExperimentResult::from_json(&text).map_err(|e| Error::Format {
        path: args.input.clone(),
        message: e.to_string(),
    })?;
    let tables = render_tables(&result, args.display.percent);
    print!("{tables}");
    if let Some(out) = &args.out {
        write_text(out, &tables)?;
    }
    Ok(result.contracts_hold())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Gradcheck(a) => run_gradcheck(a),
        Command::Suite(a) => suite(a),
        Command::Report(a) => report(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("mhml: one or more checks failed");
            ExitCode::from(1)
        }
        Err(e @ Error::Config(_)) => {
            eprintln!("mhml: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("mhml: {e}");
            ExitCode::from(1)
        }
    }
}
