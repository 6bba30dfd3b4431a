//! Deterministic execution helpers: ordered parallel maps and seed streams.
//!
//! With the `parallel` feature the indexed maps fan out over rayon; results
//! are collected in index order, so the parallel and sequential paths produce
//! identical outputs for pure per-index work.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over 0..n, sequentially. Always available (benchmark reference).
pub fn map_indexed_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Map `f` over 0..n on the rayon pool, preserving index order.
#[cfg(feature = "parallel")]
pub fn map_indexed_par<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T + Sync + Send,
    T: Send,
{
    (0..n).into_par_iter().map(f).collect()
}

/// Default map: parallel when the feature is enabled, sequential otherwise.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T + Sync + Send,
    T: Send,
{
    map_indexed_par(n, f)
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    map_indexed_seq(n, f)
}

/// splitmix64 finalizer; decorrelates nearby inputs.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

/// Derive an independent seed from a root seed, a stream tag, and an index.
/// Every source of randomness in the crate flows through this so that one
/// root seed pins an entire run.
pub fn derive_seed(root: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(root ^ stream.wrapping_mul(0xA24BAED4963EE407)) ^ index)
}

/// Stream tags for [`derive_seed`].
pub mod streams {
    pub const SCENARIO: u64 = 1;
    pub const ORACLE: u64 = 2;
    pub const SPLIT: u64 = 3;
    pub const MODEL_INIT: u64 = 4;
    pub const BATCH_ORDER: u64 = 5;
    pub const DROPOUT: u64 = 6;
    pub const PERTURB: u64 = 7;
    pub const BASELINE: u64 = 8;
}
