//! Data-parallel mapping over independent samples.
//!
//! Results are always collected in input order, so parallel and sequential
//! execution produce bit-identical aggregates. The `GRAPHFUSE_THREADS`
//! environment variable caps worker count (default: all cores); builds
//! without the `parallel` feature run everything sequentially.

/// Worker cap from `GRAPHFUSE_THREADS`; `None` means "use rayon's default".
#[cfg(feature = "parallel")]
fn thread_cap() -> Option<usize> {
    std::env::var("GRAPHFUSE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// Maps `f` over `items`, preserving input order in the output.
#[cfg(feature = "parallel")]
pub fn map_ordered<I, T, F>(items: Vec<I>, f: F) -> Vec<T>
where
    I: Send,
    T: Send,
    F: Fn(I) -> T + Sync + Send,
{
    use rayon::prelude::*;
    match thread_cap() {
        Some(1) => items.into_iter().map(f).collect(),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .expect("failed to build worker pool");
            pool.install(|| items.into_par_iter().map(f).collect())
        }
        None => items.into_par_iter().map(f).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn map_ordered<I, T, F>(items: Vec<I>, f: F) -> Vec<T>
where
    F: Fn(I) -> T,
{
    items.into_iter().map(f).collect()
}
