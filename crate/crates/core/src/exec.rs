//! Worker-phase executor: a rayon pool when the `parallel` feature is on,
//! otherwise (or on request) plain sequential iteration on the caller.

#[cfg(feature = "parallel")]
use std::sync::Arc;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::Result;

#[derive(Clone)]
pub struct Executor {
    inner: Inner,
}

#[derive(Clone)]
enum Inner {
    Sequential,
    #[cfg(feature = "parallel")]
    Pool(Arc<rayon::ThreadPool>),
}

impl Default for Executor {
    fn default() -> Self {
        Executor::sequential()
    }
}

impl std::fmt::Debug for Executor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.inner {
            Inner::Sequential => f.write_str("Executor::Sequential"),
            #[cfg(feature = "parallel")]
            Inner::Pool(p) => write!(f, "Executor::Pool({})", p.current_num_threads()),
        }
    }
}

impl Executor {
    pub fn sequential() -> Executor {
        Executor { inner: Inner::Sequential }
    }

    /// A dedicated pool of `threads` OS threads.
    #[cfg(feature = "parallel")]
    pub fn parallel(threads: usize) -> Result<Executor> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .thread_name(|i| format!("pi-worker-{i}"))
            .build()
            .map_err(|e| crate::error::PiError::Config(e.to_string()))?;
        Ok(Executor { inner: Inner::Pool(Arc::new(pool)) })
    }

    /// Parallel when the feature is compiled in and `threads > 1`.
    pub fn with_threads(threads: usize) -> Result<Executor> {
        #[cfg(feature = "parallel")]
        if threads > 1 {
            return Executor::parallel(threads);
        }
        let _ = threads;
        Ok(Executor::sequential())
    }

    pub fn threads(&self) -> usize {
        match &self.inner {
            Inner::Sequential => 1,
            #[cfg(feature = "parallel")]
            Inner::Pool(p) => p.current_num_threads(),
        }
    }

    pub fn is_parallel(&self) -> bool {
        self.threads() > 1
    }

    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match &self.inner {
            Inner::Sequential => items.iter().map(f).collect(),
            #[cfg(feature = "parallel")]
            Inner::Pool(p) => p.install(|| items.par_iter().with_max_len(1).map(f).collect()),
        }
    }

    pub fn map_mut<T, R, F>(&self, items: &mut [T], f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(&mut T) -> R + Sync + Send,
    {
        match &self.inner {
            Inner::Sequential => items.iter_mut().map(f).collect(),
            #[cfg(feature = "parallel")]
            Inner::Pool(p) => p.install(|| items.par_iter_mut().with_max_len(1).map(f).collect()),
        }
    }
}
