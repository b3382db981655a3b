use feddrop_core::exec::Executor;
use rayon::prelude::*;

/// Environment variable capping intra-round parallelism.
pub const THREADS_ENV: &str = "FEDDROP_THREADS";

/// Runs client tasks on a dedicated rayon pool; results come back in index
/// order, so output does not depend on the thread count.
#[derive(Debug)]
pub struct ThreadPoolExecutor {
    pool: rayon::ThreadPool,
}

impl ThreadPoolExecutor {
    pub fn new(threads: usize) -> Self {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .thread_name(|i| format!("feddrop-client-{i}"))
            .build()
            .expect("failed to build client thread pool");
        Self { pool }
    }

    /// Sized from `FEDDROP_THREADS`, defaulting to the machine's parallelism.
    pub fn from_env() -> crate::Result<Self> {
        Ok(Self::new(threads_from_env()?))
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

pub fn threads_from_env() -> crate::Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(crate::Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)),
    }
}

impl Executor for ThreadPoolExecutor {
    fn map<R, F>(&self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        self.pool.install(|| (0..n).into_par_iter().map(f).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn results_keep_index_order() {
        let exec = ThreadPoolExecutor::new(4);
        let out = exec.map(100, |i| i * i);
        assert_eq!(out, (0..100).map(|i| i * i).collect::<Vec<_>>());
    }
}
