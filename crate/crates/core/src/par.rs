//! Row-parallel helpers. With the `parallel` feature these fan out over rayon,
//! otherwise they run the same closures sequentially.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Calls `f(row_index, row)` for every chunk of `width` elements.
pub fn for_rows<F>(data: &mut [f64], width: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    data.par_chunks_mut(width).enumerate().for_each(|(j, r)| f(j, r));
    #[cfg(not(feature = "parallel"))]
    data.chunks_mut(width).enumerate().for_each(|(j, r)| f(j, r));
}

/// Builds a vector of `len` values from `f(index)`.
pub fn map_collect<T, F>(len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    return (0..len).into_par_iter().map(f).collect();
    #[cfg(not(feature = "parallel"))]
    return (0..len).map(f).collect();
}

/// Sum of `f(i)` over `0..len`, reduced in fixed-size blocks so the result does
/// not depend on the thread count.
pub fn sum<F>(len: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    const BLOCK: usize = 4096;
    let blocks = len.div_ceil(BLOCK);
    let partial = map_collect(blocks, |b| {
        let end = ((b + 1) * BLOCK).min(len);
        (b * BLOCK..end).map(&f).sum::<f64>()
    });
    partial.iter().sum()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    sum(a.len(), |i| a[i] * b[i])
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// y += a * x
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    zip_apply(y, x, |yi, xi| *yi += a * xi);
}

/// Applies `f(y_i, x_i)` elementwise.
pub fn zip_apply<F>(y: &mut [f64], x: &[f64], f: F)
where
    F: Fn(&mut f64, f64) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    y.par_iter_mut().zip(x.par_iter()).for_each(|(a, b)| f(a, *b));
    #[cfg(not(feature = "parallel"))]
    y.iter_mut().zip(x.iter()).for_each(|(a, b)| f(a, *b));
}

pub fn threads() -> usize {
    #[cfg(feature = "parallel")]
    return rayon::current_num_threads();
    #[cfg(not(feature = "parallel"))]
    return 1;
}

/// Sizes the global pool. Must run before any parallel work; ignored in the
/// sequential build.
pub fn init_threads(n: usize) -> crate::Result<()> {
    #[cfg(feature = "parallel")]
    return rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| crate::Error::Validation(format!("thread pool: {e}")));
    #[cfg(not(feature = "parallel"))]
    {
        let _ = n;
        Ok(())
    }
}
