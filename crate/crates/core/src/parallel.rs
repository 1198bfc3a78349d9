//! Worker-pool sizing.
//!
//! Work is split into fixed-size chunks whose results are reduced in chunk
//! order, so outputs do not depend on the number of workers.

use crate::{Error, Result};

/// Caps the worker count when set to a positive integer.
pub const THREADS_ENV: &str = "GIBBSNET_THREADS";

/// Worker count requested by the environment, if any.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(Error::Config(format!("{THREADS_ENV}: {e}"))),
    }
}

/// Sizes the global pool: one worker when `deterministic`, otherwise the
/// environment cap or the rayon default. Returns the active worker count;
/// a pool that already exists is left as it is.
pub fn configure_threads(deterministic: bool) -> Result<usize> {
    let requested = if deterministic { Some(1) } else { threads_from_env()? };
    if let Some(n) = requested {
        // fails only when the pool was built earlier
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(rayon::current_num_threads())
}
