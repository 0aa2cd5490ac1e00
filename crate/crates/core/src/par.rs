//! Data-parallel helpers. With the `parallel` feature these fan out over
//! rayon's pool; without it every call runs sequentially. Results are
//! always returned in index order so both paths are bit-identical.

/// How an inner loop is executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// Whether the parallel path is actually compiled in and selected.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// `(0..n).map(f).collect()` in index order.
pub fn map_indexed<T, F>(n: usize, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Index of the maximal score over `0..n`, lowest index on exact ties.
/// Scores are evaluated independently per index, so the answer does not
/// depend on how the range is split.
pub fn argmax_by_score<F>(n: usize, exec: Execution, min_parallel: usize, score: F) -> Option<usize>
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    if n == 0 {
        return None;
    }
    #[cfg(feature = "parallel")]
    if exec.is_parallel() && n >= min_parallel {
        use rayon::prelude::*;
        const CHUNK: usize = 1024;
        let chunks = n.div_ceil(CHUNK);
        return (0..chunks)
            .into_par_iter()
            .map(|c| {
                let lo = c * CHUNK;
                let hi = (lo + CHUNK).min(n);
                best_in_range(lo, hi, &score)
            })
            .reduce_with(pick_better)
            .map(|(i, _)| i);
    }
    let _ = (exec, min_parallel);
    Some(best_in_range(0, n, &score).0)
}

fn best_in_range<F: Fn(usize) -> f64>(lo: usize, hi: usize, score: &F) -> (usize, f64) {
    let mut best = (lo, score(lo));
    for i in lo + 1..hi {
        let s = score(i);
        if s > best.1 {
            best = (i, s);
        }
    }
    best
}

#[cfg(feature = "parallel")]
fn pick_better(a: (usize, f64), b: (usize, f64)) -> (usize, f64) {
    if b.1 > a.1 || (b.1 == a.1 && b.0 < a.0) {
        b
    } else {
        a
    }
}
