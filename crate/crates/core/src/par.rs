//! Data-parallel helpers with a sequential fallback.
//!
//! Work is always split into fixed-size chunks and results are returned in
//! chunk order, so any reduction over them is bitwise identical whether the
//! chunks ran on one thread or many. Without the `parallel` feature every
//! request runs sequentially.

use std::ops::Range;
use std::sync::atomic::{AtomicU8, Ordering};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    Parallel,
}

const SEQUENTIAL: u8 = 0;
const PARALLEL: u8 = 1;

static MODE: AtomicU8 = AtomicU8::new(PARALLEL);

/// Selects the execution mode for all subsequent chunked work.
pub fn set_execution(mode: Execution) {
    let v = match mode {
        Execution::Sequential => SEQUENTIAL,
        Execution::Parallel => PARALLEL,
    };
    MODE.store(v, Ordering::Relaxed);
}

/// The mode that will actually run; always sequential without the feature.
pub fn execution() -> Execution {
    if cfg!(feature = "parallel") && MODE.load(Ordering::Relaxed) == PARALLEL {
        Execution::Parallel
    } else {
        Execution::Sequential
    }
}

/// Splits `0..len` into ranges of at most `chunk` items.
pub fn chunk_ranges(len: usize, chunk: usize) -> Vec<Range<usize>> {
    let chunk = chunk.max(1);
    (0..len)
        .step_by(chunk)
        .map(|start| start..(start + chunk).min(len))
        .collect()
}

/// Maps `f` over the chunks of `0..len`, returning results in chunk order.
pub fn map_chunks<R, F>(len: usize, chunk: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(Range<usize>) -> R + Sync + Send,
{
    let ranges = chunk_ranges(len, chunk);
    match execution() {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            ranges.into_par_iter().map(f).collect()
        }
        _ => ranges.into_iter().map(f).collect(),
    }
}

/// Maps `f` over `items` in order.
pub fn map_items<I, R, F>(items: &[I], f: F) -> Vec<R>
where
    I: Sync,
    R: Send,
    F: Fn(&I) -> R + Sync + Send,
{
    match execution() {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            items.par_iter().map(f).collect()
        }
        _ => items.iter().map(f).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_cover_everything_once() {
        let r = chunk_ranges(10, 4);
        assert_eq!(r, vec![0..4, 4..8, 8..10]);
        assert!(chunk_ranges(0, 4).is_empty());
    }

    #[test]
    fn chunk_results_keep_order() {
        let sums = map_chunks(100, 7, |r| r.sum::<usize>());
        assert_eq!(sums.iter().sum::<usize>(), 4950);
        assert_eq!(sums[0], (0..7).sum::<usize>());
    }
}
