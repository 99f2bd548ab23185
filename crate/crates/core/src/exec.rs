//! Deterministic data-parallel helpers.
//!
//! Every parallel loop in this crate is an indexed map whose per-index work
//! draws randomness only from seeds derived with [`derive_seed`], and whose
//! results are collected in index order. Outputs are therefore identical
//! whether the loop runs on one thread, many threads, or with the `parallel`
//! feature disabled entirely.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `0..n`, returning results in index order.
pub fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Maps `f` over an index range in chunks, for loops whose per-item work is
/// too small to amortize task overhead. Chunks are contiguous, so output
/// order is the input order.
pub fn par_chunk_map<T, F>(n: usize, chunk: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    let chunk = chunk.max(1);
    #[cfg(feature = "parallel")]
    {
        (0..n)
            .collect::<Vec<_>>()
            .par_chunks(chunk)
            .flat_map_iter(|ids| ids.iter().map(|&i| f(i)).collect::<Vec<_>>())
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = chunk;
        (0..n).map(f).collect()
    }
}

/// Runs `f` inside a thread pool with the given worker count.
///
/// `threads = 0` uses the library default. Without the `parallel` feature
/// this just calls `f` (everything is sequential anyway).
pub fn with_threads<T, F>(threads: usize, f: F) -> T
where
    T: Send,
    F: FnOnce() -> T + Send,
{
    #[cfg(feature = "parallel")]
    {
        if threads == 0 {
            f()
        } else {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .expect("thread pool construction");
            pool.install(f)
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        f()
    }
}

/// SplitMix64 step; the standard 64-bit mixer.
#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent child seed from a base seed and a tag
/// (replication index, fold index, tree index, ...). Stable across
/// platforms and thread schedules.
#[inline]
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    splitmix64(base ^ splitmix64(tag.wrapping_add(0x51ed_2701_89cd_5f01)))
}

/// Two-level derivation for nested loops (e.g. replication, then fold).
#[inline]
pub fn derive_seed2(base: u64, tag1: u64, tag2: u64) -> u64 {
    derive_seed(derive_seed(base, tag1), tag2)
}
