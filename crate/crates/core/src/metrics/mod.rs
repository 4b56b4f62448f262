//! Clock-quality metrics, the coherence-time experiment and key-rate reporting.

mod coherence;
mod skr;
mod tie;

pub use coherence::{
    coherence_grid, coherence_time, evaluate_run, write_grid_csv, CoherenceConfig, CoherenceResult, Estimator,
    RunOutcome, COHERENCE_CSV_HEADER,
};
pub use skr::{binary_entropy, skr, SkrInputs, SkrReport};
pub use tie::{check_criterion, tie, TieSeries};
