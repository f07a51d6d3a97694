//! Data-parallel helpers.
//!
//! With the `parallel` feature (default) these fan out over rayon's global
//! pool; without it they run as plain sequential loops. Every helper maps an
//! independent item to an independent output slot and never reduces across
//! threads, so results are bitwise identical in both modes.

#[cfg(feature = "parallel")]
use std::sync::atomic::{AtomicBool, Ordering};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[cfg(feature = "parallel")]
static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Below this many scalar multiply-adds a row loop stays on the calling thread.
#[cfg(feature = "parallel")]
const MIN_PARALLEL_WORK: usize = 1 << 14;

/// Whether helpers will currently dispatch to the thread pool.
pub fn is_parallel() -> bool {
    #[cfg(feature = "parallel")]
    {
        !FORCE_SEQUENTIAL.load(Ordering::Relaxed)
    }
    #[cfg(not(feature = "parallel"))]
    {
        false
    }
}

/// Runs `f` with parallel dispatch disabled process-wide. Used by the
/// benchmarks to compare both paths inside one binary.
pub fn with_sequential<R>(f: impl FnOnce() -> R) -> R {
    #[cfg(feature = "parallel")]
    {
        let prev = FORCE_SEQUENTIAL.swap(true, Ordering::SeqCst);
        let out = f();
        FORCE_SEQUENTIAL.store(prev, Ordering::SeqCst);
        out
    }
    #[cfg(not(feature = "parallel"))]
    {
        f()
    }
}

/// Calls `f(row_index, row)` for every `cols`-wide row of `data`.
/// `work_per_row` is a rough cost estimate used to skip dispatch on tiny inputs.
pub fn for_each_row_mut<F>(data: &mut [f64], cols: usize, work_per_row: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if cols == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    {
        let rows = data.len() / cols;
        if is_parallel() && rows > 1 && rows.saturating_mul(work_per_row) >= MIN_PARALLEL_WORK {
            data.par_chunks_mut(cols)
                .enumerate()
                .for_each(|(i, row)| f(i, row));
            return;
        }
    }
    let _ = work_per_row;
    data.chunks_mut(cols).enumerate().for_each(|(i, row)| f(i, row));
}

/// Maps `f` over `0..n`, preserving order.
pub fn map_range<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if is_parallel() && n > 1 {
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    (0..n).map(f).collect()
}

/// Maps `f` over a slice, preserving order.
pub fn map_slice<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if is_parallel() && items.len() > 1 {
            return items.par_iter().map(f).collect();
        }
    }
    items.iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequential_and_parallel_agree() {
        let par = map_range(1000, |i| (i as f64).sin());
        let seq = with_sequential(|| map_range(1000, |i| (i as f64).sin()));
        assert_eq!(par, seq);

        let mut a = vec![0.0; 4096];
        let mut b = a.clone();
        for_each_row_mut(&mut a, 64, 1 << 12, |i, r| r.iter_mut().enumerate().for_each(|(j, v)| *v = (i * j) as f64));
        with_sequential(|| {
            for_each_row_mut(&mut b, 64, 1 << 12, |i, r| r.iter_mut().enumerate().for_each(|(j, v)| *v = (i * j) as f64))
        });
        assert_eq!(a, b);
    }
}
