//! Deterministic data parallelism: work is split into a FIXED number of
//! contiguous chunks, chunks may run on any thread, and per-chunk results are
//! reduced strictly in chunk order. Results are therefore bit-identical for
//! any thread count, including the inline single-thread path.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// Number of chunks used by the training loops. Fixed (never derived from
/// the machine) so reduction order is part of the run's definition.
pub const DEFAULT_CHUNKS: usize = 32;

/// Resolve a thread-count setting: 0 means "use the machine's parallelism".
pub fn resolve_threads(setting: usize) -> usize {
    if setting == 0 {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    } else {
        setting
    }
}

/// Chunk boundaries: `n_chunks` contiguous ranges covering `0..n` whose sizes
/// differ by at most one.
pub fn chunk_ranges(n: usize, n_chunks: usize) -> Vec<(usize, usize)> {
    let k = n_chunks.max(1).min(n.max(1));
    let base = n / k;
    let extra = n % k;
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let len = base + usize::from(i < extra);
        out.push((start, start + len));
        start += len;
    }
    out
}

/// Apply `f(chunk_index, start..end)` over fixed chunks of `0..n`, collecting
/// results (in chunk order) for the caller to reduce sequentially.
pub fn map_chunks<R, F>(n: usize, n_chunks: usize, threads: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize, usize, usize) -> R + Sync,
{
    let ranges = chunk_ranges(n, n_chunks);
    if threads <= 1 || ranges.len() <= 1 {
        return ranges.iter().enumerate().map(|(i, &(s, e))| f(i, s, e)).collect();
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<R>>> = Mutex::new((0..ranges.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..threads.min(ranges.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= ranges.len() {
                    break;
                }
                let (s, e) = ranges[i];
                let r = f(i, s, e);
                results.lock().expect("poisoned chunk results").insert_some(i, r);
            });
        }
    });
    results
        .into_inner()
        .expect("poisoned chunk results")
        .into_iter()
        .map(|r| r.expect("every chunk produced a result"))
        .collect()
}

trait InsertSome<R> {
    fn insert_some(&mut self, i: usize, r: R);
}

impl<R> InsertSome<R> for Vec<Option<R>> {
    fn insert_some(&mut self, i: usize, r: R) {
        self[i] = Some(r);
    }
}

/// Mutate disjoint chunks of a slice in parallel, fixed chunking as above.
pub fn for_each_chunk_mut<T, F>(items: &mut [T], n_chunks: usize, threads: usize, f: F)
where
    T: Send,
    F: Fn(usize, usize, &mut [T]) + Sync,
{
    let n = items.len();
    let ranges = chunk_ranges(n, n_chunks);
    if threads <= 1 || ranges.len() <= 1 {
        for (i, &(s, e)) in ranges.iter().enumerate() {
            f(i, s, &mut items[s..e]);
        }
        return;
    }
    // Split into per-chunk mutable slices up front, then hand them out.
    let mut slices: Vec<Option<(usize, usize, &mut [T])>> = Vec::with_capacity(ranges.len());
    let mut rest = items;
    let mut consumed = 0;
    for (i, &(s, e)) in ranges.iter().enumerate() {
        let (head, tail) = rest.split_at_mut(e - consumed);
        let head_start = s - consumed;
        slices.push(Some((i, s, &mut head[head_start..])));
        rest = tail;
        consumed = e;
    }
    let queue: Mutex<Vec<Option<(usize, usize, &mut [T])>>> = Mutex::new(slices);
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..threads.min(ranges.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= ranges.len() {
                    break;
                }
                let job = queue.lock().expect("poisoned chunk queue")[i].take();
                if let Some((idx, start, slice)) = job {
                    f(idx, start, slice);
                }
            });
        }
    });
}
