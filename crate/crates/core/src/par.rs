//! Optional data parallelism over grid nodes and pair lists.
//!
//! With the `parallel` feature the helpers dispatch to rayon unless parallel
//! execution has been switched off at runtime with [`set_parallel`]. Without
//! the feature everything runs on the calling thread. Results never depend on
//! the execution mode: maps preserve index order and reductions are `max`.

use std::sync::atomic::{AtomicBool, Ordering};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

static PARALLEL: AtomicBool = AtomicBool::new(true);

/// Enables or disables the rayon path. No effect without the `parallel` feature.
pub fn set_parallel(enabled: bool) {
    PARALLEL.store(enabled, Ordering::Relaxed);
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel") && PARALLEL.load(Ordering::Relaxed)
}

/// Configures the global worker pool. `0` keeps the rayon default.
pub fn init_threads(threads: usize) {
    #[cfg(feature = "parallel")]
    if threads > 0 {
        // a second initialization attempt is harmless
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
}

/// `(0..n).map(f).collect()`, possibly in parallel.
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if is_parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Maximum of `f(i)` over `0..n`; `0.0` for an empty range. NaN propagates.
pub fn max_range<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let pick = |a: f64, b: f64| if a.is_nan() || b.is_nan() { f64::NAN } else { a.max(b) };
    #[cfg(feature = "parallel")]
    if is_parallel() {
        return (0..n).into_par_iter().map(f).reduce(|| 0.0, pick);
    }
    (0..n).map(f).fold(0.0, pick)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let f = |i: usize| ((i as f64) * 0.37).sin();
        let a = map_range(1000, f);
        let m = max_range(1000, |i| f(i).abs());
        set_parallel(false);
        let b = map_range(1000, f);
        let m2 = max_range(1000, |i| f(i).abs());
        set_parallel(true);
        assert_eq!(a, b);
        assert_eq!(m, m2);
    }

    #[test]
    fn nan_is_sticky() {
        assert!(max_range(10, |i| if i == 3 { f64::NAN } else { 1.0 }).is_nan());
        assert_eq!(max_range(0, |_| 1.0), 0.0);
    }
}
