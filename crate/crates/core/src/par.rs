//! Order-preserving map over work items.
//!
//! With the `parallel` feature (default) items run on a rayon pool sized by
//! `workers`; `workers <= 1`, or a build without the feature, runs the plain
//! sequential loop. Results always come back in input order, so outputs do
//! not depend on the worker count.

/// Maps `f` over `items`, preserving order.
pub fn map_ordered<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if workers > 1 && items.len() > 1 {
            return parallel::map(items, workers, f);
        }
    }
    let _ = workers;
    items.iter().map(f).collect()
}

/// Whether this build can actually run work items concurrently.
pub const fn parallel_enabled() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(feature = "parallel")]
mod parallel {
    use rayon::prelude::*;
    use std::collections::HashMap;
    use std::sync::{Arc, Mutex, OnceLock};

    fn pool(workers: usize) -> Arc<rayon::ThreadPool> {
        static POOLS: OnceLock<Mutex<HashMap<usize, Arc<rayon::ThreadPool>>>> = OnceLock::new();
        let mut pools = POOLS.get_or_init(Default::default).lock().unwrap();
        pools
            .entry(workers)
            .or_insert_with(|| {
                Arc::new(
                    rayon::ThreadPoolBuilder::new()
                        .num_threads(workers)
                        .thread_name(|i| format!("miscon-worker-{i}"))
                        .build()
                        .expect("thread pool"),
                )
            })
            .clone()
    }

    pub(super) fn map<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        pool(workers).install(|| items.par_iter().map(f).collect())
    }
}
