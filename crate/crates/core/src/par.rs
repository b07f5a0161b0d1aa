//! Order-preserving data-parallel maps.
//!
//! With the `parallel` feature these fan out over rayon's global pool;
//! without it they run on the calling thread. Results are collected in input
//! order either way, so callers observe identical output.

use crate::error::Result;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Which execution strategy a map should use. `Auto` follows the crate
/// feature; the explicit variants exist for benchmarking and equivalence
/// tests.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Exec {
    #[default]
    Auto,
    Sequential,
    Parallel,
}

#[cfg(feature = "parallel")]
impl Exec {
    fn parallel(self) -> bool {
        match self {
            Exec::Sequential => false,
            Exec::Auto | Exec::Parallel => cfg!(feature = "parallel"),
        }
    }
}

pub fn map<T, R, F>(exec: Exec, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.parallel() {
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}

pub fn try_map<T, R, F>(exec: Exec, items: &[T], f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.parallel() {
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}

pub fn map_range<R, F>(exec: Exec, range: std::ops::Range<usize>, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.parallel() {
        return range.into_par_iter().map(f).collect();
    }
    let _ = exec;
    range.map(f).collect()
}

pub fn try_map_range<R, F>(exec: Exec, range: std::ops::Range<usize>, f: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(usize) -> Result<R> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.parallel() {
        return range.into_par_iter().map(f).collect();
    }
    let _ = exec;
    range.map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategies_agree_and_preserve_order() {
        let items: Vec<u64> = (0..1000).collect();
        let f = |x: &u64| x.wrapping_mul(0x9e37_79b9) ^ (x >> 3);
        let seq = map(Exec::Sequential, &items, f);
        assert_eq!(map(Exec::Parallel, &items, f), seq);
        assert_eq!(map(Exec::Auto, &items, f), seq);
        assert_eq!(map_range(Exec::Parallel, 0..1000, |i| f(&(i as u64))), seq);
    }

    #[test]
    fn try_map_propagates_errors() {
        let items = [1, 2, 3];
        let r = try_map(Exec::Auto, &items, |&x| {
            if x == 2 {
                Err(crate::Error::Empty("two".into()))
            } else {
                Ok(x)
            }
        });
        assert!(r.is_err());
        let ok = try_map_range(Exec::Sequential, 0..3, Ok).unwrap();
        assert_eq!(ok, vec![0, 1, 2]);
    }
}
