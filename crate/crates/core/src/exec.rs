//! Execution strategy for data-parallel loops.
//!
//! Sweeps, seed fan-out, Monte Carlo oracles and minibatch gradients all go
//! through [`Exec`]. With the `parallel` feature the work is spread over the
//! rayon pool; without it, or with [`Exec::Sequential`], the same closures run
//! in order on the calling thread. Results are always returned in input order
//! so both paths produce identical output.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    /// True when work will actually be spread over threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    pub fn map<T, R, F>(self, items: Vec<T>, f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            return items.into_par_iter().map(f).collect();
        }
        items.into_iter().map(f).collect()
    }

    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Runs two closures, concurrently when parallel.
    pub fn join<A, B, RA, RB>(self, a: A, b: B) -> (RA, RB)
    where
        A: FnOnce() -> RA + Send,
        B: FnOnce() -> RB + Send,
        RA: Send,
        RB: Send,
    {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            return rayon::join(a, b);
        }
        (a(), b())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_paths_preserve_order() {
        let seq = Exec::Sequential.map_range(1000, |i| i * i);
        let par = Exec::Parallel.map_range(1000, |i| i * i);
        assert_eq!(seq, par);
        let v: Vec<u64> = (0..100).collect();
        assert_eq!(
            Exec::Parallel.map(v.clone(), |x| x + 1),
            Exec::Sequential.map(v, |x| x + 1)
        );
    }

    #[test]
    fn join_returns_both() {
        for exec in [Exec::Sequential, Exec::Parallel] {
            assert_eq!(exec.join(|| 1, || "b"), (1, "b"));
        }
    }
}
