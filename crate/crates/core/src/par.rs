//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) work is spread over a rayon pool.
//! Without it every helper runs on the calling thread. Outputs never depend
//! on which path or how many threads ran them.

/// How a data-parallel kernel is scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Parallelism {
    /// Calling thread only.
    Sequential,
    /// Dedicated pool with this many worker threads.
    Threads(usize),
    /// Global pool, sized to the machine.
    #[default]
    Auto,
}

impl Parallelism {
    pub fn from_threads(threads: Option<usize>) -> Self {
        match threads {
            None | Some(0) => Parallelism::Auto,
            Some(1) => Parallelism::Sequential,
            Some(n) => Parallelism::Threads(n),
        }
    }

    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self != Parallelism::Sequential
    }

    /// Worker count this policy resolves to on this build.
    pub fn thread_count(self) -> usize {
        if !self.is_parallel() {
            return 1;
        }
        match self {
            Parallelism::Threads(n) => n,
            _ => available_threads(),
        }
    }

    /// Runs `f` inside the pool this policy selects.
    pub fn install<R: Send>(self, f: impl FnOnce() -> R + Send) -> R {
        #[cfg(feature = "parallel")]
        if let Parallelism::Threads(n) = self {
            match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
                Ok(pool) => return pool.install(f),
                Err(_) => return f(),
            }
        }
        f()
    }
}

pub fn available_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

/// `(0..n).map(f).collect()`, in parallel when allowed. Must be called from
/// inside [`Parallelism::install`] for a dedicated pool to take effect.
pub fn map_indices<T, F>(policy: Parallelism, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if policy.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = policy;
    (0..n).map(f).collect()
}

/// Calls `f(row_index, row)` for each `row_len`-sized chunk of `data`.
pub fn for_each_row<T, F>(policy: Parallelism, data: &mut [T], row_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if policy.is_parallel() {
        use rayon::prelude::*;
        data.par_chunks_mut(row_len)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
        return;
    }
    let _ = policy;
    data.chunks_mut(row_len)
        .enumerate()
        .for_each(|(i, row)| f(i, row));
}
