//! Parallel map helpers. Output order always matches input order.

use alloc::vec::Vec;

#[cfg(feature = "std")]
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "std"))]
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

#[cfg(feature = "std")]
pub fn fill<T, F>(out: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    out.par_iter_mut().enumerate().for_each(|(i, o)| *o = f(i));
}

#[cfg(not(feature = "std"))]
pub fn fill<T, F>(out: &mut [T], f: F)
where
    F: Fn(usize) -> T,
{
    for (i, o) in out.iter_mut().enumerate() {
        *o = f(i);
    }
}
