//! Data-parallel map over independent jobs (probe batches, sample suites,
//! finite-difference solves). Results always come back in input order, so
//! any reduction done by the caller is deterministic.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parallelism {
    Sequential,
    /// Rayon work stealing when the `parallel` feature is enabled; falls
    /// back to sequential execution otherwise.
    #[default]
    Rayon,
}

impl Parallelism {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Parallelism::Rayon
    }
}

pub fn par_map<I, O, F>(mode: Parallelism, items: Vec<I>, f: F) -> Vec<O>
where
    I: Send,
    O: Send,
    F: Fn(I) -> O + Send + Sync,
{
    #[cfg(feature = "parallel")]
    {
        if mode == Parallelism::Rayon {
            use rayon::prelude::*;
            return items.into_par_iter().map(f).collect();
        }
    }
    let _ = mode;
    items.into_iter().map(f).collect()
}

/// Run `f` inside a pool of `workers` threads (0 keeps the global pool).
pub fn with_workers<R: Send, F: FnOnce() -> R + Send>(workers: usize, f: F) -> R {
    #[cfg(feature = "parallel")]
    {
        if workers > 0 {
            if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
                return pool.install(f);
            }
        }
    }
    let _ = workers;
    f()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let xs: Vec<u64> = (0..100).collect();
        let a = par_map(Parallelism::Rayon, xs.clone(), |x| x * x);
        let b = par_map(Parallelism::Sequential, xs, |x| x * x);
        assert_eq!(a, b);
    }
}
