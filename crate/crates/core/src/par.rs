//! Data-parallel loops: rayon when the `parallel` feature is enabled, plain
//! loops otherwise. Only elementwise work goes through these helpers;
//! reductions stay sequential everywhere so results are bit-identical
//! regardless of thread count. The `_seq` variants always run serially and
//! exist as the fallback bodies and as benchmark baselines.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub fn for_each_mut_seq<T, F>(data: &mut [T], f: F)
where
    F: Fn(usize, &mut T),
{
    for (i, x) in data.iter_mut().enumerate() {
        f(i, x);
    }
}

pub fn for_each_mut<T, F>(data: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync,
{
    #[cfg(feature = "parallel")]
    {
        data.par_iter_mut().enumerate().for_each(|(i, x)| f(i, x));
    }
    #[cfg(not(feature = "parallel"))]
    {
        for_each_mut_seq(data, f);
    }
}

pub fn fill_seq<T, F>(out: &mut [T], f: F)
where
    F: Fn(usize) -> T,
{
    for (i, x) in out.iter_mut().enumerate() {
        *x = f(i);
    }
}

pub fn fill<T, F>(out: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    #[cfg(feature = "parallel")]
    {
        out.par_iter_mut().enumerate().for_each(|(i, x)| *x = f(i));
    }
    #[cfg(not(feature = "parallel"))]
    {
        fill_seq(out, f);
    }
}

pub fn for_each_chunk_mut_seq<T, F>(data: &mut [T], chunk: usize, f: F)
where
    F: Fn(usize, &mut [T]),
{
    for (i, c) in data.chunks_mut(chunk).enumerate() {
        f(i, c);
    }
}

/// Apply `f` to consecutive `chunk`-sized windows (index = chunk number).
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    #[cfg(feature = "parallel")]
    {
        data.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
    }
    #[cfg(not(feature = "parallel"))]
    {
        for_each_chunk_mut_seq(data, chunk, f);
    }
}

/// Unstable sort; deterministic as long as `cmp` is a total order on the
/// actual elements (all our record sorts break ties explicitly).
pub fn sort_by<T, F>(data: &mut [T], cmp: F)
where
    T: Send,
    F: Fn(&T, &T) -> std::cmp::Ordering + Sync,
{
    #[cfg(feature = "parallel")]
    {
        data.par_sort_unstable_by(cmp);
    }
    #[cfg(not(feature = "parallel"))]
    {
        data.sort_unstable_by(cmp);
    }
}
