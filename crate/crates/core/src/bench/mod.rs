//! Synthetic benchmark, baseline trainers and the experiment runner.
//!
//! The data is a Gaussian mixture whose Bayes posterior is known in closed
//! form, so calibration can be checked against ground truth.

mod data;
mod suite;
mod train;

pub use data::{
    bayes_posterior, bayes_posterior_batch, gen_gaussian_mixture, geometric_priors, read_dataset_csv,
    read_predictions_csv, uniform_priors, write_dataset_csv, write_predictions_csv, Dataset, Split,
    SyntheticSpec,
};
pub use suite::{
    evaluate, median, reliability_csv, render_tables, run_suite, run_suite_on, std_dev, temperature_scale,
    CellResult, Check, CheckKind, ExperimentResult, MethodSummary, MetricSet, SuiteConfig, TsOutcome,
    TsSummary, RESULT_FORMAT, RESULT_VERSION, TS_NLL_SLACK,
};
pub use train::{
    member_seeds, train_deep_ensemble, train_ensemble_members, train_method, MethodConfig, MethodKind,
    Predictor,
};
