//! Enumeration and ranking of count vectors.
//!
//! Deep states are count vectors: compositions of the agent count `n` into
//! `|X|` parts. Value and Q tables index them by their colexicographic rank,
//! which admits an O(|X|) rank function via the combinatorial number system.

use crate::error::{FiniteError, Result};
use crate::model::DeepState;

/// Exact binomial coefficient, accumulated in u128.
///
/// Panics on overflow; the table sizes used here (n in the thousands, a
/// handful of parts) stay far below u64 range.
pub(crate) fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    u64::try_from(acc).expect("binomial coefficient overflows u64")
}

/// All compositions of `n` into `parts` parts, ranked colexicographically.
///
/// Colex order compares count vectors from the last coordinate backwards, so
/// `(n, 0, …, 0)` has rank 0 and `(0, …, 0, n)` has rank `len() - 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeepStateSpace {
    n: u32,
    parts: usize,
}

impl DeepStateSpace {
    pub fn new(n: u32, parts: usize) -> Self {
        assert!(parts >= 1, "a deep-state space needs at least one state");
        Self { n, parts }
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn num_states(&self) -> usize {
        self.parts
    }

    /// Number of count vectors: C(n + parts - 1, parts - 1).
    pub fn len(&self) -> usize {
        binomial(self.n as u64 + self.parts as u64 - 1, self.parts as u64 - 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Colexicographic rank of a count vector, O(parts) via hockey-stick sums.
    pub fn rank(&self, d: &DeepState) -> usize {
        debug_assert_eq!(d.len(), self.parts);
        debug_assert_eq!(d.n(), self.n);
        let c = d.counts();
        let mut rank: u64 = 0;
        let mut rem: u64 = self.n as u64;
        for idx in (1..self.parts).rev() {
            let v = c[idx] as u64;
            let j = idx as u64;
            // Count vectors with a smaller value at this coordinate:
            // sum_{w<v} C(rem - w + j - 1, j - 1) = C(rem + j, j) - C(rem - v + j, j).
            rank += binomial(rem + j, j) - binomial(rem - v + j, j);
            rem -= v;
        }
        rank as usize
    }

    /// Inverse of [`rank`](Self::rank).
    pub fn unrank(&self, mut rank: usize) -> DeepState {
        assert!(rank < self.len(), "rank {rank} out of range");
        let mut counts = vec![0u32; self.parts];
        let mut rem = self.n as u64;
        for idx in (1..self.parts).rev() {
            let j = idx as u64;
            let mut v: u64 = 0;
            loop {
                let below = binomial(rem - v + j - 1, j - 1) as usize;
                if rank < below {
                    break;
                }
                rank -= below;
                v += 1;
            }
            counts[idx] = v as u32;
            rem -= v;
        }
        counts[0] = rem as u32;
        DeepState::new(counts).expect("unrank produces a valid count vector")
    }

    /// Iterate all count vectors in colex order.
    pub fn iter(&self) -> DeepStateIter {
        let mut first = vec![0u32; self.parts];
        first[0] = self.n;
        DeepStateIter { next: Some(first) }
    }
}

pub struct DeepStateIter {
    next: Option<Vec<u32>>,
}

impl Iterator for DeepStateIter {
    type Item = DeepState;

    fn next(&mut self) -> Option<DeepState> {
        let current = self.next.take()?;
        // Colex successor: move all mass below the lowest incrementable
        // coordinate back to coordinate 0 and bump that coordinate.
        let mut succ = current.clone();
        let mut below: u32 = succ[0];
        let mut advanced = false;
        for j in 1..succ.len() {
            if below > 0 {
                succ[j] += 1;
                let freed = below - 1;
                succ[0] = freed;
                for s in succ.iter_mut().take(j).skip(1) {
                    *s = 0;
                }
                advanced = true;
                break;
            }
            below += succ[j];
        }
        if advanced {
            self.next = Some(succ);
        }
        Some(DeepState::new(current).expect("iterator produces valid count vectors"))
    }
}

/// All compositions of `total` into `parts` parts, in colex order.
///
/// Shared by multinomial enumeration and the quantized simplex grid.
pub(crate) fn compositions(total: u32, parts: usize) -> Vec<Vec<u32>> {
    DeepStateSpace::new(total, parts)
        .iter()
        .map(|d| d.counts().to_vec())
        .collect()
}

/// Validate that `y` indexes a coordinate of a length-(n+1) count support.
pub(crate) fn check_count_in_range(y: u32, n: u32) -> Result<()> {
    if y > n {
        return Err(FiniteError::InvalidInput(format!(
            "count {y} outside the support 0..={n}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_and_unrank_are_inverse() {
        for parts in 1..=4 {
            for n in 0..=6u32 {
                let space = DeepStateSpace::new(n, parts);
                let all: Vec<_> = space.iter().collect();
                assert_eq!(all.len(), space.len());
                for (r, d) in all.iter().enumerate() {
                    assert_eq!(space.rank(d), r, "rank mismatch at {:?}", d.counts());
                    assert_eq!(space.unrank(r).counts(), d.counts());
                }
            }
        }
    }

    #[test]
    fn colex_order_two_parts() {
        let space = DeepStateSpace::new(2, 2);
        let all: Vec<Vec<u32>> = space.iter().map(|d| d.counts().to_vec()).collect();
        assert_eq!(all, vec![vec![2, 0], vec![1, 1], vec![0, 2]]);
    }

    #[test]
    fn binomial_small_values() {
        assert_eq!(binomial(5, 2), 10);
        assert_eq!(binomial(10, 0), 1);
        assert_eq!(binomial(3, 5), 0);
        assert_eq!(binomial(1000, 4), 41417124750);
    }
}
