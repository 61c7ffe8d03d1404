//! Execution strategy for the data-parallel loops in this crate.
//!
//! Every parallel loop maps an index (or an item) to an independent result and
//! collects in index order, so sequential and parallel runs produce identical
//! output. Without the `parallel` feature, [`Execution::Parallel`] falls back
//! to the sequential path.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    #[default]
    Parallel,
    Sequential,
}

impl Execution {
    /// True if this strategy will actually use a thread pool.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }

    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Execution::Parallel {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Execution::Parallel {
            use rayon::prelude::*;
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Apply `f` to disjoint mutable chunks of `data`; `f` receives the chunk index.
    pub fn for_each_chunk_mut<T, F>(self, data: &mut [T], chunk: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        let chunk = chunk.max(1);
        #[cfg(feature = "parallel")]
        if self == Execution::Parallel {
            use rayon::prelude::*;
            data.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
            return;
        }
        data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequential_and_parallel_agree() {
        let f = |i: usize| (i as f64).sqrt().sin();
        let a = Execution::Sequential.map_range(1000, f);
        let b = Execution::Parallel.map_range(1000, f);
        assert_eq!(a, b);

        let mut x = vec![0usize; 97];
        let mut y = vec![0usize; 97];
        let fill = |ci: usize, c: &mut [usize]| {
            for (k, v) in c.iter_mut().enumerate() {
                *v = ci * 10 + k;
            }
        };
        Execution::Sequential.for_each_chunk_mut(&mut x, 10, fill);
        Execution::Parallel.for_each_chunk_mut(&mut y, 10, fill);
        assert_eq!(x, y);
    }
}
