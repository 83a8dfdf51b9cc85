//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) work fans out over rayon's global
//! pool; without it everything runs on the calling thread. Results are always
//! collected in index order, so callers that reduce the returned vector
//! sequentially get bit-identical output in both builds.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How a batch of independent jobs is executed. Defaults to `Parallel` when
/// the feature is enabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    #[cfg_attr(not(feature = "parallel"), default)]
    Sequential,
    #[cfg(feature = "parallel")]
    #[default]
    Parallel,
}

/// Evaluates `f(0..n)` and returns the results in index order.
pub fn map_indexed<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        Execution::Sequential => (0..n).map(f).collect(),
        #[cfg(feature = "parallel")]
        Execution::Parallel => (0..n).into_par_iter().map(f).collect(),
    }
}

/// Maps over fixed-size chunks of `0..n`. Chunk boundaries depend only on
/// `n` and `chunk`, never on the thread count.
pub fn map_chunks<T, F>(exec: Execution, n: usize, chunk: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, std::ops::Range<usize>) -> T + Sync + Send,
{
    let chunk = chunk.max(1);
    let count = n.div_ceil(chunk);
    map_indexed(exec, count, |c| {
        let start = c * chunk;
        f(c, start..(start + chunk).min(n))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_cover_range_in_order() {
        let parts = map_chunks(Execution::default(), 10, 3, |_, r| r.collect::<Vec<_>>());
        assert_eq!(parts.concat(), (0..10).collect::<Vec<_>>());
        assert_eq!(parts.len(), 4);
    }

    #[test]
    fn sequential_matches_default() {
        let a = map_indexed(Execution::Sequential, 100, |i| (i as f64).sqrt());
        let b = map_indexed(Execution::default(), 100, |i| (i as f64).sqrt());
        assert_eq!(a, b);
    }
}
