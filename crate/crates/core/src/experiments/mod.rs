//! Replicate-level drivers for the figures and the statistical contract checks.
mod checks;
mod config;
mod figure1;
mod figure2;
mod table;

pub use checks::{
    clt_variance_check, l2_rate_check, least_squares, run_filter_replicates, unbiasedness_check, CltConfig, CltReport,
    FilterOutput, FilterRunSpec, FiniteSetup, RateConfig, RatePoint, RateReport, UnbiasednessConfig,
    UnbiasednessReport, CLT_BAND_LEVEL,
};
pub use config::{finite_kernel, linear_gaussian_kernel, FiniteTestFunction, FlowChoice, InitConfig, KernelConfig};
pub use figure1::{
    figure1_curves, parse_grid, select_figure1_alphas, Figure1Alphas, Figure1Curves, Figure1Row, FIGURE1_ALGORITHMS,
};
pub use figure2::{
    assess_figure2, figure2_experiment, Figure2Algorithm, Figure2Assessment, Figure2Config, RelativeLikelihood,
};
pub use table::{format_float, sample_stats, ReplicateRow, ReplicateTable, SampleStats, SummaryEntry, SUMMARY_HEADER, TABLE_HEADER};
