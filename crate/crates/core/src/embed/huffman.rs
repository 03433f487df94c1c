use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

/// Huffman code of every leaf word, with the inner nodes visited on the way
/// from the root. Inner nodes are numbered `0..V-1` in creation order, so
/// the root is always `V - 2`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HuffmanCoding {
    codes: Vec<Vec<u8>>,
    paths: Vec<Vec<u32>>,
}

impl HuffmanCoding {
    /// Builds the tree by repeatedly merging the two lightest nodes. Ties are
    /// broken by node id (leaves first, in index order), which keeps the
    /// result deterministic.
    pub fn build(counts: &[u64]) -> Self {
        let v = counts.len();
        if v < 2 {
            return HuffmanCoding {
                codes: vec![Vec::new(); v],
                paths: vec![Vec::new(); v],
            };
        }
        let mut heap: BinaryHeap<Reverse<(u64, usize)>> =
            counts.iter().enumerate().map(|(i, &c)| Reverse((c, i))).collect();
        // parent[node] and the branch bit taken to reach node
        let mut parent = vec![usize::MAX; 2 * v - 1];
        let mut bit = vec![0u8; 2 * v - 1];
        let mut next = v;
        while heap.len() > 1 {
            let Reverse((c0, a)) = heap.pop().expect("len > 1");
            let Reverse((c1, b)) = heap.pop().expect("len > 1");
            parent[a] = next;
            parent[b] = next;
            bit[b] = 1;
            heap.push(Reverse((c0.saturating_add(c1), next)));
            next += 1;
        }
        let root = 2 * v - 2;
        let mut codes = Vec::with_capacity(v);
        let mut paths = Vec::with_capacity(v);
        for leaf in 0..v {
            let mut code = Vec::new();
            let mut path = Vec::new();
            let mut node = leaf;
            while node != root {
                code.push(bit[node]);
                node = parent[node];
                path.push((node - v) as u32);
            }
            code.reverse();
            path.reverse();
            codes.push(code);
            paths.push(path);
        }
        HuffmanCoding { codes, paths }
    }

    pub(crate) fn from_parts(codes: Vec<Vec<u8>>, paths: Vec<Vec<u32>>) -> Result<Self> {
        let h = HuffmanCoding { codes, paths };
        h.validate()?;
        Ok(h)
    }

    fn validate(&self) -> Result<()> {
        let v = self.codes.len();
        if self.paths.len() != v {
            return Err(Error::Format("code/path count mismatch".into()));
        }
        for (c, p) in self.codes.iter().zip(&self.paths) {
            if c.len() != p.len() || c.iter().any(|&b| b > 1) {
                return Err(Error::Format("malformed Huffman code".into()));
            }
            if p.iter().any(|&n| n as usize + 1 >= v.max(1)) {
                return Err(Error::Format("Huffman path node out of range".into()));
            }
        }
        if !self.is_prefix_free() {
            return Err(Error::Format("Huffman codes are not prefix-free".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn inner_nodes(&self) -> usize {
        self.codes.len().saturating_sub(1)
    }

    pub fn code(&self, word: usize) -> &[u8] {
        &self.codes[word]
    }

    pub fn path(&self, word: usize) -> &[u32] {
        &self.paths[word]
    }

    /// Frequency-weighted mean code length.
    pub fn expected_length(&self, counts: &[u64]) -> f64 {
        let total: f64 = counts.iter().map(|&c| c as f64).sum();
        let weighted: f64 = counts
            .iter()
            .zip(&self.codes)
            .map(|(&c, code)| c as f64 * code.len() as f64)
            .sum();
        weighted / total
    }

    pub fn is_prefix_free(&self) -> bool {
        let mut sorted: Vec<&Vec<u8>> = self.codes.iter().collect();
        sorted.sort();
        sorted.windows(2).all(|w| !w[1].starts_with(w[0]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Minimum frequency-weighted code length over every prefix-free code,
    /// found by enumerating non-decreasing length profiles that satisfy the
    /// Kraft inequality and pairing the shortest lengths with the largest
    /// counts (the rearrangement inequality makes that pairing optimal for
    /// a fixed profile).
    pub(crate) fn brute_force_min_weighted_length(counts: &[u64]) -> u64 {
        let mut desc: Vec<u64> = counts.to_vec();
        desc.sort_unstable_by(|a, b| b.cmp(a));
        let v = desc.len();
        let max_len = v - 1;
        let unit: u64 = 1 << max_len;
        fn go(
            i: usize,
            min_len: usize,
            budget: u64,
            cost: u64,
            desc: &[u64],
            max_len: usize,
            best: &mut u64,
        ) {
            if i == desc.len() {
                *best = (*best).min(cost);
                return;
            }
            if cost >= *best {
                return;
            }
            for l in min_len.max(1)..=max_len {
                let used = 1u64 << (max_len - l);
                // every later word still needs at least one unit of Kraft mass
                let remaining = (desc.len() - i) as u64;
                if used + (remaining - 1) > budget {
                    continue;
                }
                go(i + 1, l, budget - used, cost + desc[i] * l as u64, desc, max_len, best);
            }
        }
        let mut best = u64::MAX;
        go(0, 1, unit, 0, &desc, max_len, &mut best);
        best
    }

    fn weighted_len(h: &HuffmanCoding, counts: &[u64]) -> u64 {
        counts
            .iter()
            .enumerate()
            .map(|(i, &c)| c * h.code(i).len() as u64)
            .sum()
    }

    #[test]
    fn two_words_single_decision() {
        let h = HuffmanCoding::build(&[5, 3]);
        assert_eq!(h.inner_nodes(), 1);
        assert_eq!(h.code(0).len(), 1);
        assert_eq!(h.path(0), &[0]);
        assert_ne!(h.code(0), h.code(1));
    }

    #[test]
    fn classic_example() {
        // frequencies 45,13,12,16,9,5 give lengths 1,3,3,3,4,4
        let counts = [45, 13, 12, 16, 9, 5];
        let h = HuffmanCoding::build(&counts);
        let lens: Vec<usize> = (0..6).map(|i| h.code(i).len()).collect();
        assert_eq!(lens, vec![1, 3, 3, 3, 4, 4]);
        assert_eq!(weighted_len(&h, &counts), 224);
        assert_eq!(brute_force_min_weighted_length(&counts), 224);
        for i in 0..6 {
            assert_eq!(h.path(i)[0], 4, "root is the last inner node");
        }
    }

    #[test]
    fn oracle_sanity() {
        assert_eq!(brute_force_min_weighted_length(&[1, 1]), 2);
        assert_eq!(brute_force_min_weighted_length(&[1, 1, 1, 1]), 8);
        assert_eq!(brute_force_min_weighted_length(&[8, 4, 2, 1, 1]), 8 + 8 + 6 + 4 + 4);
    }

    proptest! {
        #[test]
        fn prefix_free_and_optimal(counts in prop::collection::vec(1u64..1000, 2..=10)) {
            let h = HuffmanCoding::build(&counts);
            prop_assert!(h.is_prefix_free());
            for i in 0..counts.len() {
                prop_assert_eq!(h.code(i).len(), h.path(i).len());
                prop_assert_eq!(h.path(i)[0] as usize, counts.len() - 2);
            }
            prop_assert_eq!(weighted_len(&h, &counts), brute_force_min_weighted_length(&counts));
        }
    }
}
