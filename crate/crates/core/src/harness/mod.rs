//! Synthetic experiments: data generation, SNR calibration, Monte-Carlo
//! runs over all solver modes, and CSV export.

mod coefficients;
mod csv;
mod experiment;
mod generate;
mod metrics;

pub use coefficients::{load_coefficients, parse_coefficients, save_coefficients, Coefficients};
pub use csv::{format_g, write_aggregate_csv, write_trace_csv, AGGREGATE_HEADER, TRACE_HEADER};
pub use experiment::{
    build_trial, circulant_operator, run_experiment, run_trial, AggregateRow, ExperimentResult, ExperimentSpec,
    ModeOutcome, PerturbationKind, SignalSource, TrialResult, TrialSetup, CIRCULANT_DECAY,
};
pub use generate::{calibrate, gen_matrix, gen_signal, Calibration, DISABLED_GAMMA_E};
pub use metrics::{nmse_db, psnr_db, NMSE_FLOOR_DB, PSNR_CAP_DB};
