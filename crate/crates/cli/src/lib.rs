//! Batch front end: one JSON configuration per run, results written as JSON
//! and CSV into a run directory.

pub mod config;
pub mod error;
pub mod gradcheck;
pub mod init;
pub mod iota;
pub mod oos;
pub mod optimize;
pub mod run;

pub use error::CliError;

/// Environment variable overriding the worker count when `--workers` is absent.
pub const WORKERS_ENV: &str = "STOCHCOIL_WORKERS";

/// Worker count from the flag, else the environment, else `None` for the
/// rayon default.
pub fn worker_count(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var(WORKERS_ENV) {
        Ok(s) => s.trim().parse::<usize>().map(Some).map_err(|_| {
            CliError::config(format!(
                "{WORKERS_ENV} must be a non-negative integer, got {s:?}"
            ))
        }),
        Err(_) => Ok(None),
    }
}

/// Run `f` on a pool of `workers` threads (`None` or 0: one per core).
pub fn with_workers<T: Send>(
    workers: Option<usize>,
    f: impl FnOnce() -> T + Send,
) -> Result<T, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| CliError::failure(e.to_string()))?;
    Ok(pool.install(f))
}
