//! Execution-mode switch for the data-parallel loops.
//!
//! With the `parallel` feature the helpers fan work out over rayon's global
//! pool; without it (or with [`Execution::Sequential`]) they run on the calling
//! thread. Every helper writes results in index order, so both modes produce
//! bit-identical output.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How data-parallel loops are executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    /// Plain iterator on the calling thread.
    #[cfg_attr(not(feature = "parallel"), default)]
    Sequential,
    /// rayon work-stealing pool. Falls back to sequential when the crate is
    /// built without the `parallel` feature.
    #[cfg_attr(feature = "parallel", default)]
    Parallel,
}

impl Execution {
    /// True when this mode actually uses rayon in the current build.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// `(0..n).map(f).collect()` in the requested mode.
pub fn map_range<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// `items.iter().map(f).collect()` in the requested mode.
pub fn map_slice<T, U, F>(exec: Execution, items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}

/// Runs `f(chunk_index, chunk)` over `data.chunks_mut(chunk)`.
pub fn for_each_chunk_mut<T, F>(exec: Execution, data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if chunk == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        data.par_chunks_mut(chunk).enumerate().for_each(|(idx, c)| f(idx, c));
        return;
    }
    let _ = exec;
    data.chunks_mut(chunk).enumerate().for_each(|(idx, c)| f(idx, c));
}

/// Fallible variant of [`for_each_chunk_mut`]; returns the error of the
/// lowest-indexed failing chunk.
pub fn try_for_each_chunk_mut<T, E, F>(exec: Execution, data: &mut [T], chunk: usize, f: F) -> Result<(), E>
where
    T: Send,
    E: Send,
    F: Fn(usize, &mut [T]) -> Result<(), E> + Sync + Send,
{
    if chunk == 0 {
        return Ok(());
    }
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        let results: Vec<Result<(), E>> = data
            .par_chunks_mut(chunk)
            .enumerate()
            .map(|(idx, c)| f(idx, c))
            .collect();
        return results.into_iter().collect();
    }
    let _ = exec;
    data.chunks_mut(chunk).enumerate().try_for_each(|(idx, c)| f(idx, c))
}
