//! Data-parallel helpers with a sequential fallback.
//!
//! Every parallel map collects results in input order, and all reductions over
//! those results happen sequentially afterwards, so `Exec::Parallel` and
//! `Exec::Sequential` produce bitwise-identical numbers.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Execution strategy for batch loops.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    /// Rayon work-stealing; falls back to sequential when the `parallel`
    /// feature is disabled.
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

/// Order-preserving map over a slice.
pub fn map<T, R, F>(exec: Exec, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => items.par_iter().map(f).collect(),
        _ => items.iter().map(f).collect(),
    }
}

/// Order-preserving map over `0..n`.
pub fn map_range<R, F>(exec: Exec, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => (0..n).into_par_iter().map(f).collect(),
        _ => (0..n).map(f).collect(),
    }
}

/// Elementwise sum of equally sized vectors, accumulated in slice order.
pub fn sum_in_order(len: usize, parts: &[Vec<f64>]) -> Vec<f64> {
    let mut acc = vec![0.0; len];
    for part in parts {
        debug_assert_eq!(part.len(), len);
        for (a, p) in acc.iter_mut().zip(part) {
            *a += p;
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_bitwise() {
        let xs: Vec<f64> = (0..257).map(|i| (i as f64 * 0.37).sin()).collect();
        let f = |x: &f64| vec![x * 1.5, x.exp(), (x * 3.0).cos()];
        let a = map(Exec::Sequential, &xs, f);
        let b = map(Exec::Parallel, &xs, f);
        assert_eq!(sum_in_order(3, &a), sum_in_order(3, &b));
    }

    #[test]
    fn range_preserves_order() {
        let v = map_range(Exec::Parallel, 100, |i| i * 2);
        assert_eq!(v, (0..100).map(|i| i * 2).collect::<Vec<_>>());
    }
}
