//! Evaluation protocol: paired window sampling, rollout metrics, intrinsic
//! diagnostics, error budgets, run-level aggregation and paired Wilcoxon
//! comparisons.

mod csvio;
mod intrinsic;
mod metrics;
mod model;
mod stats;
mod windows;

pub use csvio::{read_csv, write_csv, BudgetRow, ComparisonRow, IntrinsicRow, RolloutRow};
pub use intrinsic::{error_budget, intrinsic_diagnostics, intrinsic_steps, ErrorBudget, IntrinsicRecord};
pub use metrics::{rollout_window, RolloutMetrics, StepError};
pub use model::{EvalData, RomModel, TrainedRom};
pub use stats::{
    aggregate, ci95, mean, median, paired_compare, std_dev, wilcoxon_approx, wilcoxon_exact, wilcoxon_one_sided,
    PairedComparison, Summary,
};
pub use windows::{sample_windows, windows_digest, SamplingConfig, WindowSpec};
