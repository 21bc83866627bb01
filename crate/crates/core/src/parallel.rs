//! Indexed worker-pool helper. Results land in index order, so output
//! is identical whether work runs sequentially or on a pool.

use rayon::prelude::*;

/// Runs `f(0..count)` on `jobs` worker threads (sequentially for
/// `jobs <= 1`) and collects results in index order.
pub fn run_indexed<T: Send>(
    jobs: usize,
    count: usize,
    f: impl Fn(usize) -> T + Sync + Send,
) -> Vec<T> {
    if jobs <= 1 || count <= 1 {
        return (0..count).map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .expect("worker pool");
    pool.install(|| (0..count).into_par_iter().map(f).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree() {
        let seq = run_indexed(1, 17, |i| i * i);
        let par = run_indexed(4, 17, |i| i * i);
        assert_eq!(seq, par);
    }
}
