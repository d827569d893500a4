//! Data-parallel execution facade.
//!
//! Independent units of work (environment sessions, repeats, oracle sweeps)
//! run through [`map`], which dispatches to rayon when the `parallel` feature
//! is enabled and the caller asked for it, and to a plain sequential loop
//! otherwise. Output order always matches input order, so results are
//! byte-identical across modes.

use serde::{Deserialize, Serialize};

/// How to execute a batch of independent work items.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExecMode {
    /// Work-stealing thread pool (requires the `parallel` feature; falls back
    /// to sequential when the crate was built without it).
    #[default]
    Parallel,
    /// Single-threaded in-order execution.
    Sequential,
}

/// Map `f` over `items`, preserving order.
pub fn map<T, O, F>(mode: ExecMode, items: Vec<T>, f: F) -> Vec<O>
where
    T: Send,
    O: Send,
    F: Fn(T) -> O + Sync + Send,
{
    match mode {
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => {
            use rayon::prelude::*;
            items.into_par_iter().map(f).collect()
        }
        #[cfg(not(feature = "parallel"))]
        ExecMode::Parallel => items.into_iter().map(f).collect(),
        ExecMode::Sequential => items.into_iter().map(f).collect(),
    }
}
