//! Static block partitioning of independent work items over a fixed worker count.
//!
//! With the `parallel` feature each worker's contiguous range runs on a rayon pool of
//! exactly `workers` threads; without it (or with one worker) ranges run inline in
//! order. Items are processed in the same order inside a range either way, so
//! results never depend on which path ran.

use std::ops::Range;

/// Splits `items` into `workers` contiguous ranges whose sizes differ by at most one;
/// the first `items % workers` ranges get the extra item.
pub fn balanced_ranges(items: usize, workers: usize) -> Vec<Range<usize>> {
    let workers = workers.max(1);
    let (base, extra) = (items / workers, items % workers);
    let mut start = 0;
    (0..workers)
        .map(|w| {
            let len = base + usize::from(w < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

/// Per-worker ranges over the `K_b x N_b` output grid, linearised with `ib_k`
/// outer and `ib_n` inner so a worker sweeps the mini-batch blocks of one
/// feature-map block before moving on.
pub fn partition_work_2d(k_blocks: usize, n_blocks: usize, workers: usize) -> Vec<Range<usize>> {
    balanced_ranges(k_blocks * n_blocks, workers)
}

/// `(ib_k, ib_n)` of a linear item from [`partition_work_2d`].
pub fn grid_item(item: usize, n_blocks: usize) -> (usize, usize) {
    (item / n_blocks, item % n_blocks)
}

/// Worker count of the machine (rayon's global pool when enabled).
pub fn max_workers() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    }
}

/// Runs `f(worker, item)` for every item, worker `w` taking the `w`-th balanced
/// contiguous range in order.
pub fn run_partitioned<T, F>(workers: usize, items: Vec<T>, f: F)
where
    T: Send,
    F: Fn(usize, T) + Sync,
{
    let workers = workers.max(1);
    let ranges = balanced_ranges(items.len(), workers);
    let mut chunks: Vec<Vec<T>> = Vec::with_capacity(workers);
    let mut rest = items.into_iter();
    for r in &ranges {
        chunks.push(rest.by_ref().take(r.len()).collect());
    }

    #[cfg(feature = "parallel")]
    if workers > 1 {
        use rayon::prelude::*;
        pool(workers).install(|| {
            chunks.into_par_iter().enumerate().for_each(|(w, chunk)| {
                for item in chunk {
                    f(w, item);
                }
            })
        });
        return;
    }

    for (w, chunk) in chunks.into_iter().enumerate() {
        for item in chunk {
            f(w, item);
        }
    }
}

#[cfg(feature = "parallel")]
fn pool(workers: usize) -> std::sync::Arc<rayon::ThreadPool> {
    use std::collections::HashMap;
    use std::sync::{Arc, Mutex, OnceLock};

    static POOLS: OnceLock<Mutex<HashMap<usize, Arc<rayon::ThreadPool>>>> = OnceLock::new();
    let mut pools = POOLS.get_or_init(Default::default).lock().unwrap_or_else(|e| e.into_inner());
    pools
        .entry(workers)
        .or_insert_with(|| {
            Arc::new(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(workers)
                    .thread_name(move |i| format!("brgemm-{workers}-{i}"))
                    .build()
                    .expect("failed to build worker pool"),
            )
        })
        .clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    fn sizes(r: &[Range<usize>]) -> Vec<usize> {
        r.iter().map(|r| r.len()).collect()
    }

    #[test]
    fn one_item_per_worker() {
        assert_eq!(sizes(&partition_work_2d(2, 4, 8)), vec![1; 8]);
    }

    #[test]
    fn ten_over_four() {
        let r = partition_work_2d(5, 2, 4);
        assert_eq!(sizes(&r), vec![3, 3, 2, 2]);
        assert_eq!(r[0], 0..3);
        assert_eq!(r[3], 8..10);
    }

    #[test]
    fn idle_workers() {
        assert_eq!(sizes(&partition_work_2d(1, 2, 4)), vec![1, 1, 0, 0]);
    }

    #[test]
    fn ranges_tile_exactly() {
        for items in 0..40 {
            for workers in 1..9 {
                let r = balanced_ranges(items, workers);
                assert_eq!(r.len(), workers);
                let mut next = 0;
                for range in &r {
                    assert_eq!(range.start, next);
                    next = range.end;
                }
                assert_eq!(next, items);
                let s = sizes(&r);
                assert!(s.iter().max().unwrap() - s.iter().min().unwrap() <= 1);
            }
        }
    }

    #[test]
    fn grid_decoding() {
        assert_eq!(grid_item(7, 3), (2, 1));
    }

    #[test]
    fn every_item_runs_once_on_its_worker() {
        for workers in [1, 2, 3, 5] {
            let seen = Mutex::new(Vec::new());
            run_partitioned(workers, (0..11).collect(), |w, i: usize| seen.lock().unwrap().push((w, i)));
            let mut seen = seen.into_inner().unwrap();
            seen.sort_by_key(|&(_, i)| i);
            let ranges = balanced_ranges(11, workers);
            for (w, i) in seen.iter().copied() {
                assert!(ranges[w].contains(&i));
            }
            assert_eq!(seen.iter().map(|p| p.1).collect::<Vec<_>>(), (0..11).collect::<Vec<_>>());
        }
    }
}
