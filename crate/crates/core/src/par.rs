//! Optional data parallelism.
//!
//! `SEEDCL_THREADS` caps the worker count; unset means single-threaded. Work
//! items are always mapped independently and collected in input order, so
//! results are identical for every thread count.

use std::sync::OnceLock;

use rayon::prelude::*;

static POOL: OnceLock<Option<rayon::ThreadPool>> = OnceLock::new();

pub fn threads() -> usize {
    std::env::var("SEEDCL_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

fn pool() -> Option<&'static rayon::ThreadPool> {
    POOL.get_or_init(|| {
        let n = threads();
        (n > 1).then(|| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .expect("thread pool construction")
        })
    })
    .as_ref()
}

/// Map `f` over `items`, preserving order.
pub fn map<I, O, F>(items: &[I], f: F) -> Vec<O>
where
    I: Sync,
    O: Send,
    F: Fn(usize, &I) -> O + Sync + Send,
{
    match pool() {
        Some(p) => p.install(|| items.par_iter().enumerate().map(|(i, x)| f(i, x)).collect()),
        None => items.iter().enumerate().map(|(i, x)| f(i, x)).collect(),
    }
}

/// Fallible variant of [`map`]; the first error in input order wins.
pub fn try_map<I, O, E, F>(items: &[I], f: F) -> Result<Vec<O>, E>
where
    I: Sync,
    O: Send,
    E: Send,
    F: Fn(usize, &I) -> Result<O, E> + Sync + Send,
{
    map(items, f).into_iter().collect()
}
