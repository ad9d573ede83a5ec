//! Experiment harness: configuration, sweeps, oracle verification and charts.

pub mod config;
pub mod svg;
pub mod sweep;
pub mod verify;

pub use config::{Cell, ExperimentConfig, Mode};
pub use sweep::{run, write_outputs, SweepOutcome, SweepRow};

/// Environment variable selecting the worker count.
pub const THREADS_ENV: &str = "CONVKERNEL_THREADS";

/// Worker count from the environment, if set to a positive integer.
pub fn env_threads() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)
}

/// Runs `f` on a dedicated pool with `threads` workers (machine parallelism
/// when `None`).
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t);
    }
    builder.build().expect("thread pool").install(f)
}
