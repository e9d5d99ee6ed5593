//! Ordered parallel map with a worker-count knob.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Apply `f` to `0..count` and collect the results in index order.
///
/// `workers = None` uses rayon's global pool; `Some(1)` runs inline on the
/// calling thread. The output never depends on the worker count as long as
/// `f(i)` depends only on `i`.
pub fn map_indexed<T, F>(workers: Option<usize>, count: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match workers {
        Some(0) => Err(Error::Config("workers must be >= 1".into())),
        Some(1) => Ok((0..count).map(f).collect()),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(|| (0..count).into_par_iter().map(&f).collect()))
        }
        None => Ok((0..count).into_par_iter().map(f).collect()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved_for_any_worker_count() {
        let want: Vec<usize> = (0..100).map(|i| i * i).collect();
        for w in [None, Some(1), Some(3)] {
            assert_eq!(map_indexed(w, 100, |i| i * i).unwrap(), want);
        }
        assert!(map_indexed(Some(0), 3, |i| i).is_err());
    }
}
