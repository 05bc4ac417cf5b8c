//! Data-parallel loop helpers with a sequential fallback.
//!
//! With the default `parallel` feature the heavy inner loops (convolution
//! planes, surface distances, per-scan evaluation) fan out over rayon.
//! Without it every helper degrades to a plain sequential loop, which keeps
//! the crate dependency-free for constrained builds and gives benchmarks a
//! baseline to compare against.
//!
//! All helpers are bit-deterministic regardless of thread count: work is
//! split by output index and each output element is reduced in a fixed
//! sequential order, so no floating-point reduction ever depends on
//! scheduling.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Fill `out` by computing each element independently from its flat index.
pub fn fill_indexed<T, F>(out: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        out.par_iter_mut().enumerate().for_each(|(i, v)| *v = f(i));
    }
    #[cfg(not(feature = "parallel"))]
    {
        for (i, v) in out.iter_mut().enumerate() {
            *v = f(i);
        }
    }
}

/// Fill `out` in contiguous chunks of `chunk` elements; `f` receives the
/// chunk index and the chunk slice. Used when one task should own a whole
/// output plane (e.g. one image × one channel).
pub fn fill_chunks<T, F>(out: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    debug_assert!(chunk > 0 && out.len().is_multiple_of(chunk));
    #[cfg(feature = "parallel")]
    {
        out.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    }
    #[cfg(not(feature = "parallel"))]
    {
        for (i, c) in out.chunks_mut(chunk).enumerate() {
            f(i, c);
        }
    }
}

/// Map every index in `0..n` to a value, preserving order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
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

/// Map a slice to a vector, preserving order.
pub fn map_slice<'a, T, U, F>(items: &'a [T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&'a T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// True when the crate was built with rayon support.
pub const fn is_parallel_build() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fill_indexed_matches_sequential() {
        let mut a = vec![0usize; 1000];
        fill_indexed(&mut a, |i| i * 3 + 1);
        assert!(a.iter().enumerate().all(|(i, &v)| v == i * 3 + 1));
    }

    #[test]
    fn fill_chunks_owns_whole_planes() {
        let mut a = vec![0usize; 12];
        fill_chunks(&mut a, 4, |i, c| c.iter_mut().for_each(|v| *v = i));
        assert_eq!(a, [0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2]);
    }

    #[test]
    fn map_indexed_preserves_order() {
        assert_eq!(map_indexed(5, |i| i * i), vec![0, 1, 4, 9, 16]);
    }
}
