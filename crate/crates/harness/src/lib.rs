//! Configuration, artifacts and experiment commands on top of
//! `sharpmin-core`.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod metrics;
pub mod workload;

pub use commands::{train, RunStatus, Summary, TrainOutcome};
pub use config::RunConfig;
pub use metrics::MetricsRecord;
pub use workload::Workload;

/// Exit code for a run stopped by a non-finite loss.
pub const EXIT_NAN: i32 = 3;

/// Caps matrix-kernel threads from `SHARPMIN_THREADS`. Must run before the
/// first matrix product.
pub fn apply_thread_limit() {
    if let Ok(n) = std::env::var("SHARPMIN_THREADS") {
        if n.trim().parse::<usize>().is_ok_and(|n| n > 0) {
            std::env::set_var("MATMUL_NUM_THREADS", n.trim());
        }
    }
}
