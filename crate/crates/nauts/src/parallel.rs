//! Data-parallel execution helpers with a sequential fallback.
//!
//! All multi-element workloads in this crate (training one model per policy,
//! running independent simulation trials, evaluating a loss over a dataset)
//! go through this module. With the default `parallel` feature the work is
//! distributed across threads via rayon; without it the same helpers run
//! sequentially with identical results. Outputs are always collected in
//! input order, and reductions are performed over fixed-size chunks in index
//! order, so results are bit-identical regardless of thread count.

/// Chunk length used by [`sum_by_chunks`]. Fixed so that the floating-point
/// reduction tree does not depend on the number of worker threads.
pub const SUM_CHUNK: usize = 64;

/// Applies `f` to every index in `0..n`, returning outputs in index order.
///
/// Runs on the rayon thread pool when the `parallel` feature is enabled,
/// sequentially otherwise. `f` must be deterministic for reproducibility
/// guarantees to hold.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

/// Applies `f` to every index in `0..n`, returning outputs in index order.
#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    map_indexed_seq(n, f)
}

/// Sequential twin of [`map_indexed`], available regardless of features.
/// Benchmarks use it as the baseline arm.
pub fn map_indexed_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Sums `f(i)` over `0..n` with a thread-count-independent reduction.
///
/// Indices are grouped into chunks of [`SUM_CHUNK`]; each chunk is summed
/// left to right, chunks may be evaluated in parallel, and the per-chunk
/// partial sums are folded left to right in chunk order. The result is
/// therefore bit-identical to [`sum_by_chunks_seq`].
#[cfg(feature = "parallel")]
pub fn sum_by_chunks<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    use rayon::prelude::*;
    let n_chunks = n.div_ceil(SUM_CHUNK);
    let partials: Vec<f64> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let start = c * SUM_CHUNK;
            let end = (start + SUM_CHUNK).min(n);
            let mut acc = 0.0;
            for i in start..end {
                acc += f(i);
            }
            acc
        })
        .collect();
    // Left fold from +0.0 in chunk order; the empty-sum identity must
    // match the sequential twin bit-for-bit (std's `Sum` starts from
    // -0.0).
    partials.iter().fold(0.0, |acc, &x| acc + x)
}

/// Sums `f(i)` over `0..n` with a thread-count-independent reduction.
#[cfg(not(feature = "parallel"))]
pub fn sum_by_chunks<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    sum_by_chunks_seq(n, f)
}

/// Sequential twin of [`sum_by_chunks`] using the same chunked reduction
/// tree, so the two agree bit-for-bit.
pub fn sum_by_chunks_seq<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64,
{
    let n_chunks = n.div_ceil(SUM_CHUNK);
    let mut total = 0.0;
    for c in 0..n_chunks {
        let start = c * SUM_CHUNK;
        let end = (start + SUM_CHUNK).min(n);
        let mut acc = 0.0;
        for i in start..end {
            acc += f(i);
        }
        total += acc;
    }
    total
}
