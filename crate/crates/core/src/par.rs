//! Data-parallel loop helpers.
//!
//! With the `parallel` feature (on by default) work is fanned out over the
//! rayon pool once it is large enough to pay for the fork/join; otherwise, or
//! when the feature is disabled, the same closures run on the calling thread.
//! Every helper writes results by index, so output order and floating point
//! results are identical in both modes.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Below this many scalar operations a loop is run inline.
pub const MIN_PARALLEL_WORK: usize = 1 << 15;

/// Whether the crate was built with the rayon backend.
pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

/// Runs `f(index, chunk)` for every `chunk_len`-sized chunk of `data`.
///
/// `work_per_chunk` is a rough operation count used to decide whether
/// parallel dispatch is worthwhile.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk_len: usize, work_per_chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if chunk_len == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    {
        let chunks = data.len() / chunk_len;
        if chunks > 1 && chunks.saturating_mul(work_per_chunk) >= MIN_PARALLEL_WORK {
            data.par_chunks_mut(chunk_len)
                .enumerate()
                .for_each(|(i, c)| f(i, c));
            return;
        }
    }
    let _ = work_per_chunk;
    sequential::for_each_chunk_mut(data, chunk_len, f);
}

/// Collects `f(i)` for `i in 0..len`, preserving index order.
pub fn map_range<T, F>(len: usize, work_per_item: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if len > 1 && len.saturating_mul(work_per_item) >= MIN_PARALLEL_WORK {
            return (0..len).into_par_iter().map(f).collect();
        }
    }
    let _ = work_per_item;
    sequential::map_range(len, f)
}

/// Runs `f` with parallel helpers confined to a single thread. Used for the
/// single-core baseline so that it measures one core even when the rayon
/// backend is compiled in.
pub fn single_threaded<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        match rayon::ThreadPoolBuilder::new().num_threads(1).build() {
            Ok(pool) => return pool.install(f),
            Err(e) => log::warn!("could not build single-thread pool: {e}"),
        }
    }
    f()
}

/// Always-sequential versions of the helpers above, kept public so benches
/// can compare both paths within one build.
pub mod sequential {
    pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk_len: usize, f: F)
    where
        F: Fn(usize, &mut [T]),
    {
        if chunk_len == 0 {
            return;
        }
        for (i, c) in data.chunks_mut(chunk_len).enumerate() {
            f(i, c);
        }
    }

    pub fn map_range<T, F>(len: usize, f: F) -> Vec<T>
    where
        F: Fn(usize) -> T,
    {
        (0..len).map(f).collect()
    }
}
