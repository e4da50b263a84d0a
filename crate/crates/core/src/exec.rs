//! Data-parallel execution switch.
//!
//! Work is always split into the same fixed chunks and reduced in the same
//! order, so `Sequential` and `Parallel` produce bit-identical results; the
//! choice only affects wall time.

/// How chunked pixel/ray workloads are scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Rayon work stealing. Falls back to sequential when the `parallel`
    /// feature is disabled.
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

impl Execution {
    /// Maps `f` over `items`, preserving order.
    pub fn map<T, U, F>(self, items: &[T], f: F) -> Vec<U>
    where
        T: Sync,
        U: Send,
        F: Fn(&T) -> U + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => {
                use rayon::prelude::*;
                items.par_iter().map(f).collect()
            }
            _ => items.iter().map(f).collect(),
        }
    }

    /// Maps `f` over consecutive index ranges of length `chunk` covering
    /// `0..len`, preserving order.
    pub fn map_ranges<U, F>(self, len: usize, chunk: usize, f: F) -> Vec<U>
    where
        U: Send,
        F: Fn(std::ops::Range<usize>) -> U + Sync + Send,
    {
        let chunk = chunk.max(1);
        let ranges: Vec<_> = (0..len.div_ceil(chunk))
            .map(|i| i * chunk..((i + 1) * chunk).min(len))
            .collect();
        self.map(&ranges, |r| f(r.clone()))
    }
}

/// Sums equally sized buffers with a fixed pairwise tree, independent of
/// how the buffers were produced.
pub fn pairwise_sum<R: Copy + std::ops::AddAssign + Default>(mut parts: Vec<Vec<R>>, len: usize) -> Vec<R> {
    if parts.is_empty() {
        return vec![R::default(); len];
    }
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                for (x, y) in a.iter_mut().zip(&b) {
                    *x += *y;
                }
            }
            next.push(a);
        }
        parts = next;
    }
    parts.pop().unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_cover_input_in_order() {
        for mode in [Execution::Sequential, Execution::Parallel] {
            let got = mode.map_ranges(10, 4, |r| (r.start, r.end));
            assert_eq!(got, vec![(0, 4), (4, 8), (8, 10)]);
        }
        assert!(Execution::Sequential.map_ranges(0, 4, |r| r.len()).is_empty());
    }

    #[test]
    fn pairwise_sum_of_parts() {
        let parts = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]];
        assert_eq!(pairwise_sum(parts, 2), vec![9.0, 12.0]);
        assert_eq!(pairwise_sum::<f32>(vec![], 3), vec![0.0; 3]);
    }
}
