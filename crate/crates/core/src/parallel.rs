//! Process-wide worker count for point-wise loops.
//!
//! Work is split into contiguous chunks and results are concatenated in
//! input order, so output never depends on the thread count.

use std::sync::atomic::{AtomicUsize, Ordering};

/// Environment variable read by the CLI.
pub const THREADS_ENV: &str = "STARDOMAIN_THREADS";

static THREADS: AtomicUsize = AtomicUsize::new(1);

pub fn set_threads(n: usize) {
    THREADS.store(n.max(1), Ordering::Relaxed);
}

pub fn threads() -> usize {
    THREADS.load(Ordering::Relaxed)
}

/// Chunks smaller than this are not worth a thread.
const MIN_CHUNK: usize = 1024;

/// Applies a batch function to contiguous chunks of `items` on up to
/// [`threads`] workers. `f` must return one result per input item.
pub fn map_chunks<T: Sync, R: Send, F: Fn(&[T]) -> Vec<R> + Sync>(items: &[T], f: F) -> Vec<R> {
    let n = threads().min(items.len() / MIN_CHUNK).max(1);
    if n == 1 {
        return f(items);
    }
    let chunk = items.len().div_ceil(n);
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> = items.chunks(chunk).map(|c| s.spawn(move || f(c))).collect();
        handles.into_iter().flat_map(|h| h.join().unwrap()).collect()
    })
}

/// Applies `f` to each item on up to [`threads`] workers.
pub fn map<T: Sync, R: Send, F: Fn(&T) -> R + Sync>(items: &[T], f: F) -> Vec<R> {
    map_chunks(items, |c| c.iter().map(&f).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_independent_of_thread_count() {
        let xs: Vec<u64> = (0..10_000).collect();
        let one = map(&xs, |x| x * x);
        set_threads(3);
        let three = map(&xs, |x| x * x);
        set_threads(1);
        assert_eq!(one, three);
        assert!(map(&Vec::<u64>::new(), |x| *x).is_empty());
    }
}
