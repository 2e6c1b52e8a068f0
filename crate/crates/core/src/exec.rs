//! Execution policy for the data-parallel inner loops.
//!
//! Every parallel site in the crate goes through [`Exec`] so that the
//! sequential path and the rayon path run the same closures over the same
//! index ranges. Reductions are always performed in a fixed index order, so
//! results are bitwise identical regardless of the thread count.

#[cfg(feature = "parallel")]
use std::sync::Arc;

#[derive(Clone, Default)]
pub enum Exec {
    /// Plain iterators on the calling thread. The reference mode.
    #[default]
    Sequential,
    /// Rayon; `None` uses the global pool.
    #[cfg(feature = "parallel")]
    Parallel(Option<Arc<rayon::ThreadPool>>),
}

impl std::fmt::Debug for Exec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Exec::Sequential => write!(f, "Sequential"),
            #[cfg(feature = "parallel")]
            Exec::Parallel(Some(pool)) => write!(f, "Parallel({} threads)", pool.current_num_threads()),
            #[cfg(feature = "parallel")]
            Exec::Parallel(None) => write!(f, "Parallel(global)"),
        }
    }
}

impl Exec {
    /// `threads == 1` gives the sequential reference mode; `0` means the
    /// rayon default. Without the `parallel` feature this is always
    /// sequential.
    pub fn with_threads(threads: usize) -> Self {
        if threads == 1 {
            return Exec::Sequential;
        }
        #[cfg(feature = "parallel")]
        {
            if threads == 0 {
                return Exec::Parallel(None);
            }
            match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
                Ok(pool) => Exec::Parallel(Some(Arc::new(pool))),
                Err(err) => {
                    log::warn!("could not build a {threads}-thread pool ({err}); running sequentially");
                    Exec::Sequential
                }
            }
        }
        #[cfg(not(feature = "parallel"))]
        {
            Exec::Sequential
        }
    }

    pub fn is_parallel(&self) -> bool {
        !matches!(self, Exec::Sequential)
    }

    #[cfg(feature = "parallel")]
    fn install<R: Send>(&self, op: impl FnOnce() -> R + Send) -> R {
        match self {
            Exec::Parallel(Some(pool)) => pool.install(op),
            _ => op(),
        }
    }

    /// Order-preserving map.
    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            Exec::Sequential => items.iter().map(f).collect(),
            #[cfg(feature = "parallel")]
            _ => {
                use rayon::prelude::*;
                self.install(|| items.par_iter().map(f).collect())
            }
        }
    }

    /// Order-preserving map over `0..n`.
    pub fn map_range<R, F>(&self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        match self {
            Exec::Sequential => (0..n).map(f).collect(),
            #[cfg(feature = "parallel")]
            _ => {
                use rayon::prelude::*;
                self.install(|| (0..n).into_par_iter().map(f).collect())
            }
        }
    }

    /// Applies `f(chunk_index, chunk)` to consecutive `chunk_len` slices.
    pub fn for_each_chunk_mut<T, F>(&self, data: &mut [T], chunk_len: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        let chunk_len = chunk_len.max(1);
        match self {
            Exec::Sequential => data
                .chunks_mut(chunk_len)
                .enumerate()
                .for_each(|(i, c)| f(i, c)),
            #[cfg(feature = "parallel")]
            _ => {
                use rayon::prelude::*;
                self.install(|| {
                    data.par_chunks_mut(chunk_len)
                        .enumerate()
                        .for_each(|(i, c)| f(i, c))
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order() {
        let items: Vec<u64> = (0..1000).collect();
        for exec in [Exec::Sequential, Exec::with_threads(4)] {
            let out = exec.map(&items, |x| x * 3);
            assert_eq!(out, items.iter().map(|x| x * 3).collect::<Vec<_>>());
            assert_eq!(exec.map_range(10, |i| i), (0..10).collect::<Vec<_>>());
        }
    }

    #[test]
    fn chunked_writes_cover_everything() {
        let mut data = vec![0usize; 37];
        Exec::with_threads(3).for_each_chunk_mut(&mut data, 5, |ci, c| {
            for (k, x) in c.iter_mut().enumerate() {
                *x = ci * 5 + k;
            }
        });
        assert_eq!(data, (0..37).collect::<Vec<_>>());
    }
}
