//! Deterministic data parallelism for the compute kernels.
//!
//! Output rows are split into contiguous chunks, one per worker thread;
//! every element is written by exactly one thread and every reduction
//! runs in a fixed sequential order inside its row, so results are
//! bit-identical regardless of thread count.

use std::sync::OnceLock;

fn worker_count() -> usize {
    static WORKERS: OnceLock<usize> = OnceLock::new();
    *WORKERS.get_or_init(|| {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
            .min(8)
    })
}

/// Run `f(row_index, row_slice)` for every `row_len`-sized row of `out`,
/// fanning rows out across threads when the work is large enough.
pub fn for_each_row<E, F>(out: &mut [E], row_len: usize, work_per_row: usize, f: F)
where
    E: Send,
    F: Fn(usize, &mut [E]) + Sync,
{
    assert!(row_len > 0 && out.len().is_multiple_of(row_len));
    let rows = out.len() / row_len;
    let workers = worker_count();
    // Thread spawn costs ~tens of microseconds; stay serial for small jobs.
    if workers == 1 || rows < 2 || rows * work_per_row < 1 << 16 {
        for (i, row) in out.chunks_mut(row_len).enumerate() {
            f(i, row);
        }
        return;
    }
    let threads = workers.min(rows);
    let rows_per_thread = rows.div_ceil(threads);
    std::thread::scope(|scope| {
        for (chunk_idx, chunk) in out.chunks_mut(rows_per_thread * row_len).enumerate() {
            let f = &f;
            scope.spawn(move || {
                let base = chunk_idx * rows_per_thread;
                for (i, row) in chunk.chunks_mut(row_len).enumerate() {
                    f(base + i, row);
                }
            });
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_visit_each_exactly_once() {
        let mut out = vec![0usize; 40];
        for_each_row(&mut out, 4, 1 << 20, |i, row| {
            for v in row.iter_mut() {
                *v += i + 1;
            }
        });
        for (i, chunk) in out.chunks(4).enumerate() {
            assert!(chunk.iter().all(|&v| v == i + 1));
        }
    }

    #[test]
    fn serial_and_parallel_agree() {
        let rows = 100;
        let n = 64;
        let mut a = vec![0.0f64; rows * n];
        let mut b = vec![0.0f64; rows * n];
        let fill = |i: usize, row: &mut [f64]| {
            let mut acc = 0.0;
            for (j, v) in row.iter_mut().enumerate() {
                acc += (i * n + j) as f64 * 1e-3;
                *v = acc.sin();
            }
        };
        // Forced serial (tiny work hint) vs forced parallel (huge hint).
        for_each_row(&mut a, n, 0, fill);
        for_each_row(&mut b, n, 1 << 30, fill);
        assert_eq!(a, b);
    }
}
