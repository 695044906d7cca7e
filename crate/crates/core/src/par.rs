//! Data-parallel helpers.
//!
//! Every reduction splits the index range into fixed-size chunks, computes one
//! partial per chunk and folds the partials in chunk order. The chunking does not
//! depend on the worker count, so sums are bit-identical between sequential and
//! parallel execution and across thread counts.

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Observations per reduction chunk.
pub const CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    Sequential,
    /// Uses rayon when the `parallel` feature is enabled, otherwise sequential.
    #[default]
    Parallel,
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// `(0..n).map(f)` with results in index order.
pub fn map_range<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Fallible `map_range`; the first error in index order wins.
pub fn try_map_range<T, F>(exec: Execution, n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    map_range(exec, n, f).into_iter().collect()
}

/// Sums `dim`-dimensional contributions over `0..n`.
///
/// `f(i, acc)` adds observation `i`'s contribution into `acc`.
pub fn chunked_sum<F>(exec: Execution, n: usize, dim: usize, f: F) -> Result<Vec<f64>>
where
    F: Fn(usize, &mut [f64]) -> Result<()> + Sync + Send,
{
    let n_chunks = n.div_ceil(CHUNK);
    let partials = try_map_range(exec, n_chunks, |c| {
        let mut acc = vec![0.0; dim];
        let end = ((c + 1) * CHUNK).min(n);
        for i in c * CHUNK..end {
            f(i, &mut acc)?;
        }
        Ok(acc)
    })?;
    let mut total = vec![0.0; dim];
    for part in partials {
        for (t, p) in total.iter_mut().zip(part) {
            *t += p;
        }
    }
    Ok(total)
}

/// Scalar convenience wrapper over [`chunked_sum`].
pub fn chunked_sum_scalar<F>(exec: Execution, n: usize, f: F) -> Result<f64>
where
    F: Fn(usize) -> Result<f64> + Sync + Send,
{
    let v = chunked_sum(exec, n, 1, |i, acc| {
        acc[0] += f(i)?;
        Ok(())
    })?;
    Ok(v[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequential_and_parallel_sums_are_bit_identical() {
        let n = 10_007;
        let f = |i: usize, acc: &mut [f64]| {
            let x = (i as f64 * 0.37).sin() * 1e3;
            acc[0] += x;
            acc[1] += x * x;
            Ok(())
        };
        let a = chunked_sum(Execution::Sequential, n, 2, f).unwrap();
        let b = chunked_sum(Execution::Parallel, n, 2, f).unwrap();
        assert_eq!(a[0].to_bits(), b[0].to_bits());
        assert_eq!(a[1].to_bits(), b[1].to_bits());
    }

    #[test]
    fn map_range_keeps_order() {
        let v = map_range(Execution::Parallel, 1000, |i| i * 2);
        assert!(v.iter().enumerate().all(|(i, &x)| x == 2 * i));
    }

    #[test]
    fn empty_range_sums_to_zero() {
        let v = chunked_sum(Execution::Parallel, 0, 3, |_, _| Ok(())).unwrap();
        assert_eq!(v, vec![0.0; 3]);
    }
}
