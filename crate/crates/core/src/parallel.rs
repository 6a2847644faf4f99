//! Data-parallel map with a sequential fallback.
//!
//! With the `parallel` feature (default) [`ExecMode::Parallel`] runs on the
//! rayon pool; without it both modes run sequentially. Results always come
//! back in input order, and reductions over them are done by the caller in
//! that order, so floating-point sums do not depend on the mode.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecMode {
    Sequential,
    #[default]
    Parallel,
}

impl ExecMode {
    /// Whether this build actually runs `Parallel` on multiple threads.
    pub fn parallel_available() -> bool {
        cfg!(feature = "parallel")
    }
}

pub fn map<T, U, F>(mode: ExecMode, items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    match mode {
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => {
            use rayon::prelude::*;
            items.par_iter().map(f).collect()
        }
        _ => items.iter().map(f).collect(),
    }
}

/// Like [`map`] over an index range.
pub fn map_range<U, F>(mode: ExecMode, n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    match mode {
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
        _ => (0..n).map(f).collect(),
    }
}

/// Runs `f` over `items` with at most `limit` calls in flight.
pub fn map_bounded<T, U, F>(mode: ExecMode, limit: usize, items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(not(feature = "parallel"))]
    let _ = limit;
    match mode {
        #[cfg(feature = "parallel")]
        ExecMode::Parallel if limit > 1 => {
            use rayon::prelude::*;
            match rayon::ThreadPoolBuilder::new().num_threads(limit).build() {
                Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
                Err(_) => items.iter().map(f).collect(),
            }
        }
        _ => items.iter().map(f).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_and_keep_order() {
        let xs: Vec<u64> = (0..1000).collect();
        let a = map(ExecMode::Sequential, &xs, |x| x * x);
        let b = map(ExecMode::Parallel, &xs, |x| x * x);
        assert_eq!(a, b);
        assert_eq!(map_range(ExecMode::Parallel, 5, |i| i), vec![0, 1, 2, 3, 4]);
        assert_eq!(map_bounded(ExecMode::Parallel, 3, &xs, |x| x + 1), map(ExecMode::Sequential, &xs, |x| x + 1));
    }
}
