//! Data-parallel helpers with a sequential fallback.
//!
//! Every helper partitions work so that each output element is produced by
//! exactly one task with a fixed internal order. Results are therefore bitwise
//! identical between [`Exec::Sequential`] and [`Exec::Parallel`], and between
//! builds with and without the `parallel` feature.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Work below this many scalar operations is never split across threads.
#[cfg(feature = "parallel")]
const MIN_PARALLEL_WORK: usize = 1 << 14;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    /// Splits work across the rayon pool. Without the `parallel` feature this
    /// behaves exactly like `Sequential`.
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

impl Exec {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }
}

/// Calls `f(index, chunk)` for each `chunk_len`-sized chunk of `data`.
///
/// `work_per_chunk` is a rough operation count used to decide whether the
/// split is worth it.
pub fn for_each_chunk_mut<T, F>(
    exec: Exec,
    data: &mut [T],
    chunk_len: usize,
    work_per_chunk: usize,
    f: F,
) where
    T: Send,
    F: Fn(usize, &mut [T]) + Send + Sync,
{
    if chunk_len == 0 || data.is_empty() {
        return;
    }
    #[cfg(feature = "parallel")]
    {
        let chunks = data.len().div_ceil(chunk_len);
        if exec.is_parallel() && chunks > 1 && chunks * work_per_chunk >= MIN_PARALLEL_WORK {
            data.par_chunks_mut(chunk_len)
                .enumerate()
                .for_each(|(i, c)| f(i, c));
            return;
        }
    }
    let _ = (exec, work_per_chunk);
    data.chunks_mut(chunk_len)
        .enumerate()
        .for_each(|(i, c)| f(i, c));
}

/// Maps `f` over `items`, preserving order.
pub fn map<T, R, F>(exec: Exec, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Send + Sync,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() && items.len() > 1 {
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}
