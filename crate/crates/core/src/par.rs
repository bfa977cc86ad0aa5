//! Data-parallel map with a sequential fallback.
//!
//! With the `parallel` feature (default) work is spread over rayon's pool;
//! without it, or under [`ExecPolicy::Sequential`], it runs in order. Results
//! are always returned in input order.

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ExecPolicy {
    #[default]
    Auto,
    Sequential,
}

impl ExecPolicy {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == ExecPolicy::Auto
    }
}

/// Maps `f` over `items`, preserving order.
pub fn map<T, R, F>(policy: ExecPolicy, items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if policy.is_parallel() {
        use rayon::prelude::*;
        return items.into_par_iter().map(f).collect();
    }
    let _ = policy;
    items.into_iter().map(f).collect()
}

/// Maps `f` over `0..n`, preserving order.
pub fn map_range<R, F>(policy: ExecPolicy, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    map(policy, (0..n).collect(), f)
}
