//! Data-parallel map with a sequential fallback.
//!
//! With the `parallel` feature the work is spread over the rayon pool; without
//! it (or with [`Execution::Sequential`]) it runs in a plain loop. Results are
//! always returned in index order.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    #[default]
    Parallel,
    Sequential,
}

pub fn map_indexed<T, F>(n: usize, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
        _ => (0..n).map(f).collect(),
    }
}

/// Configure the global worker pool. Only the first call has an effect.
#[cfg(feature = "parallel")]
pub fn init_workers(threads: usize) {
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global();
}

#[cfg(not(feature = "parallel"))]
pub fn init_workers(_threads: usize) {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_preserved_in_both_modes() {
        let a = map_indexed(100, Execution::Parallel, |i| i * i);
        let b = map_indexed(100, Execution::Sequential, |i| i * i);
        assert_eq!(a, b);
        assert_eq!(a[7], 49);
    }
}
