//! Data-parallel execution with a sequential fallback.
//!
//! With the `parallel` feature the block map runs on the current rayon pool.
//! Results are always collected in block order, so reductions over them are
//! independent of the worker count.

use nalgebra::DMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Uses rayon when the `parallel` feature is enabled, otherwise falls back
    /// to sequential execution.
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

pub(crate) fn map_indexed<T, F>(count: usize, execution: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match execution {
        Execution::Sequential => (0..count).map(f).collect(),
        Execution::Parallel => parallel_map(count, f),
    }
}

#[cfg(feature = "parallel")]
fn parallel_map<T, F>(count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..count).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn parallel_map<T, F>(count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..count).map(f).collect()
}

/// Fixed-order pairwise summation of equally shaped matrices.
pub(crate) fn pairwise_sum(mut terms: Vec<DMatrix<f64>>) -> Option<DMatrix<f64>> {
    if terms.is_empty() {
        return None;
    }
    while terms.len() > 1 {
        let mut next = Vec::with_capacity(terms.len().div_ceil(2));
        let mut it = terms.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(a + b),
                None => next.push(a),
            }
        }
        terms = next;
    }
    terms.pop()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_maps_agree() {
        let f = |i: usize| (i as f64).sqrt();
        let a = map_indexed(1000, Execution::Sequential, f);
        let b = map_indexed(1000, Execution::Parallel, f);
        assert_eq!(a, b);
    }

    #[test]
    fn pairwise_sum_matches_plain_sum() {
        let terms: Vec<_> = (0..7).map(|i| DMatrix::from_element(2, 2, i as f64)).collect();
        let s = pairwise_sum(terms).unwrap();
        assert_eq!(s, DMatrix::from_element(2, 2, 21.0));
        assert!(pairwise_sum(Vec::new()).is_none());
    }
}
