//! Small shared helpers.

/// Worker cap: `MDGAN_THREADS` when set, otherwise hardware parallelism.
pub(crate) fn worker_count() -> usize {
    if let Ok(v) = std::env::var("MDGAN_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            return n.max(1);
        }
    }
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

/// Run `f(i)` for `i in 0..n`, sharded over up to `worker_count()` threads.
/// Results come back in index order, so the output is independent of the
/// thread count.
pub(crate) fn run_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let workers = worker_count().min(n.max(1));
    if workers <= 1 {
        return (0..n).map(&f).collect();
    }
    let mut out: Vec<Option<T>> = (0..n).map(|_| None).collect();
    let chunk = n.div_ceil(workers);
    std::thread::scope(|scope| {
        for (w, slot) in out.chunks_mut(chunk).enumerate() {
            let f = &f;
            scope.spawn(move || {
                for (j, s) in slot.iter_mut().enumerate() {
                    *s = Some(f(w * chunk + j));
                }
            });
        }
    });
    out.into_iter().map(|v| v.unwrap()).collect()
}
