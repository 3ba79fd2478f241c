//! Shared worker pool and order-preserving parallel maps.
//!
//! Every reduction over the results is done sequentially by the caller, so
//! outputs do not depend on the number of workers.

use std::sync::OnceLock;

use rayon::prelude::*;

/// Environment variable capping worker threads (`0` or unset = all cores).
pub const THREADS_ENV: &str = "HCPANEL_THREADS";

fn pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let n = std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .unwrap_or(0);
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .expect("failed to build worker pool")
    })
}

/// Number of workers in the shared pool.
pub fn num_threads() -> usize {
    pool().current_num_threads()
}

/// `(0..n).map(f)` evaluated on the shared pool, results in index order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if n == 0 {
        return Vec::new();
    }
    if num_threads() == 1 {
        return (0..n).map(f).collect();
    }
    pool().install(|| (0..n).into_par_iter().with_min_len(8).map(&f).collect())
}

/// Fills `out` in chunks of `chunk` elements; `f(start, slice)` writes the
/// chunk beginning at flat index `start`.
pub fn fill_chunks<T, F>(out: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    let chunk = chunk.max(1);
    if num_threads() == 1 {
        for (k, c) in out.chunks_mut(chunk).enumerate() {
            f(k * chunk, c);
        }
        return;
    }
    pool().install(|| {
        out.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(k, c)| f(k * chunk, c))
    });
}

/// [`fill_chunks`] over two buffers split at the same chunk boundaries
/// (`chunk_a` and `chunk_b` elements per task).
pub fn fill_chunks2<A, B, F>(a: &mut [A], b: &mut [B], chunk_a: usize, chunk_b: usize, f: F)
where
    A: Send,
    B: Send,
    F: Fn(usize, &mut [A], &mut [B]) + Sync + Send,
{
    let (chunk_a, chunk_b) = (chunk_a.max(1), chunk_b.max(1));
    if num_threads() == 1 {
        for (k, (ca, cb)) in a.chunks_mut(chunk_a).zip(b.chunks_mut(chunk_b)).enumerate() {
            f(k, ca, cb);
        }
        return;
    }
    pool().install(|| {
        a.par_chunks_mut(chunk_a)
            .zip(b.par_chunks_mut(chunk_b))
            .enumerate()
            .for_each(|(k, (ca, cb))| f(k, ca, cb))
    });
}
