//! Thin data-parallel layer. With the `parallel` feature the work items are
//! spread over the current rayon pool; otherwise they run in order on the
//! calling thread. Output order always follows the item index.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    #[cfg_attr(not(feature = "parallel"), default)]
    Sequential,
    /// Falls back to sequential when the crate is built without `parallel`.
    #[cfg_attr(feature = "parallel", default)]
    Parallel,
}

/// `f(0), f(1), ..., f(len - 1)` collected in index order.
pub fn map_range<T, F>(exec: Execution, len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..len).into_par_iter().map(f).collect()
        }
        _ => (0..len).map(f).collect(),
    }
}
