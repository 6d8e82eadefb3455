//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) [`Execution::Parallel`] maps over
//! rayon's global pool, or whatever pool the caller `install`s. Without the
//! feature both variants run on the calling thread. Output order always
//! follows input order, so results never depend on the execution mode.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Execution {
    Sequential,
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

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }

    /// `f(i)` for `i in 0..n`, collected in index order.
    pub fn map_range<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// `f(item)` for every element, collected in input order.
    pub fn map_slice<I, T, F>(self, items: &[I], f: F) -> Vec<T>
    where
        I: Sync,
        T: Send,
        F: Fn(&I) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Like [`map_slice`](Self::map_slice) but over fixed-size chunks, for
    /// inner loops too cheap to schedule element by element.
    pub fn map_chunks<I, T, F>(self, items: &[I], chunk: usize, f: F) -> Vec<T>
    where
        I: Sync,
        T: Send,
        F: Fn(&I) -> T + Sync + Send,
    {
        #[cfg(not(feature = "parallel"))]
        let _ = chunk;
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return items
                .par_chunks(chunk.max(1))
                .flat_map_iter(|c| c.iter().map(&f))
                .collect();
        }
        items.iter().map(f).collect()
    }
}
