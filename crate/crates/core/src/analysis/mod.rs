//! Sweeps over the (C, D) grid and the statistics relating motion strength
//! to architecture.

mod report;
mod stats;
mod sweep;

pub use report::{
    classify_dynamic, correlate, report, CorrelationReport, SweepReport, DEFAULT_PERMUTATIONS,
    ESTIMATOR_DISCLAIMER, MIN_ROWS,
};
pub use stats::{pearson, permutation_pvalue, MIN_PERMUTATIONS};
pub use sweep::{
    grid_configs, partial_path, read_records, run_config, run_sweep, target_id, PlannedConfig,
    SweepConfig, SweepOutcome, SweepRecord, STATUS_OK, SWEEP_HEADER,
};
