//! Execution backend selection.
//!
//! Hot loops are written once and dispatched through [`Exec`]: row-parallel
//! over rayon when the `parallel` feature is enabled, plain iteration
//! otherwise. Parallel loops only ever split work into disjoint output
//! chunks whose inner arithmetic runs in a fixed order, so both backends
//! produce bit-identical results; `exec_paths_agree` in the test suite and
//! the `parallel_vs_seq` bench both lean on that.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Which backend to run batch-level loops on.
///
/// Public entry points use [`Exec::default`]; the `_exec` variants of the
/// model operations accept an explicit choice (the bench suite compares
/// both).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    #[cfg(feature = "parallel")]
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        #[cfg(feature = "parallel")]
        {
            Exec::Parallel
        }
        #[cfg(not(feature = "parallel"))]
        {
            Exec::Sequential
        }
    }
}

impl Exec {
    /// Apply `f` to each `chunk`-sized row of `data`, with the row index.
    pub(crate) fn for_each_chunk_mut<F>(self, data: &mut [f64], chunk: usize, f: F)
    where
        F: Fn(usize, &mut [f64]) + Sync + Send,
    {
        debug_assert!(chunk > 0 && data.len() % chunk == 0);
        match self {
            Exec::Sequential => {
                for (i, row) in data.chunks_mut(chunk).enumerate() {
                    f(i, row);
                }
            }
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                data.par_chunks_mut(chunk)
                    .enumerate()
                    .for_each(|(i, row)| f(i, row));
            }
        }
    }

    /// Apply `f` to each item of `items`, with the item index.
    pub(crate) fn for_each_mut<T, F>(self, items: &mut [T], f: F)
    where
        T: Send,
        F: Fn(usize, &mut T) + Sync + Send,
    {
        match self {
            Exec::Sequential => {
                for (i, item) in items.iter_mut().enumerate() {
                    f(i, item);
                }
            }
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                items
                    .par_iter_mut()
                    .enumerate()
                    .for_each(|(i, item)| f(i, item));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunk_backends_agree() {
        let kernel = |i: usize, row: &mut [f64]| {
            let mut acc = 0.0;
            for (j, v) in row.iter_mut().enumerate() {
                acc += (i * 31 + j) as f64 * 0.1;
                *v = acc.sin();
            }
        };
        let mut seq = vec![0.0; 64 * 16];
        Exec::Sequential.for_each_chunk_mut(&mut seq, 16, kernel);
        #[cfg(feature = "parallel")]
        {
            let mut par = vec![0.0; 64 * 16];
            Exec::Parallel.for_each_chunk_mut(&mut par, 16, kernel);
            assert_eq!(seq, par);
        }
    }
}
