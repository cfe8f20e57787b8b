use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A fixed collection of starting index subsets.
///
/// The content is a pure function of `(seed, n, p, count)` for elemental
/// pools, so a monitoring sweep can reuse exactly the same starts at every
/// grid point.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SubsetPool {
    seed: Option<u64>,
    n: usize,
    p: usize,
    subsets: Vec<Vec<usize>>,
}

impl SubsetPool {
    /// `count` elemental subsets of size `p + 1`, each drawn without
    /// replacement from `0..n`.
    pub fn elemental(n: usize, p: usize, count: usize, seed: u64) -> Result<Self> {
        if p == 0 || n < p + 1 {
            return Err(Error::Size(format!(
                "elemental subsets of size p + 1 = {} need n ≥ p + 1, got n = {n}",
                p + 1
            )));
        }
        if count == 0 {
            return Err(Error::InvalidArgument("subset count must be ≥ 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let subsets = (0..count)
            .map(|_| {
                let mut s = sample(&mut rng, n, p + 1).into_vec();
                s.sort_unstable();
                s
            })
            .collect();
        Ok(Self {
            seed: Some(seed),
            n,
            p,
            subsets,
        })
    }

    /// Pool from explicit subsets. Each must hold at least `p + 1` distinct
    /// indices below `n`.
    pub fn from_subsets(n: usize, p: usize, subsets: Vec<Vec<usize>>) -> Result<Self> {
        if subsets.is_empty() {
            return Err(Error::InvalidArgument("subset pool is empty".into()));
        }
        let mut cleaned = Vec::with_capacity(subsets.len());
        for (k, mut s) in subsets.into_iter().enumerate() {
            s.sort_unstable();
            s.dedup();
            if s.len() < p + 1 {
                return Err(Error::Size(format!(
                    "subset {k} has {} distinct indices, need at least {}",
                    s.len(),
                    p + 1
                )));
            }
            if let Some(&bad) = s.iter().find(|&&i| i >= n) {
                return Err(Error::Size(format!(
                    "subset {k} contains index {bad} ≥ n = {n}"
                )));
            }
            cleaned.push(s);
        }
        Ok(Self {
            seed: None,
            n,
            p,
            subsets: cleaned,
        })
    }

    /// Every subset of `0..n` with exactly `size` elements, in lexicographic order.
    pub fn exhaustive(n: usize, p: usize, size: usize) -> Result<Self> {
        if size > n {
            return Err(Error::Size(format!("subset size {size} exceeds n = {n}")));
        }
        let mut all = Vec::new();
        let mut current: Vec<usize> = (0..size).collect();
        loop {
            all.push(current.clone());
            // advance to the next combination
            let mut i = size;
            loop {
                if i == 0 {
                    return Self::from_subsets(n, p, all);
                }
                i -= 1;
                if current[i] < n - size + i {
                    current[i] += 1;
                    for j in i + 1..size {
                        current[j] = current[j - 1] + 1;
                    }
                    break;
                }
            }
        }
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn subsets(&self) -> &[Vec<usize>] {
        &self.subsets
    }

    pub fn len(&self) -> usize {
        self.subsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsets.is_empty()
    }

    /// Content hash, stable within a build.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.hash(&mut h);
        h.finish()
    }
}

/// Free-function form of [`SubsetPool::elemental`].
pub fn generate_elemental_subsets(
    n: usize,
    p: usize,
    count: usize,
    seed: u64,
) -> Result<SubsetPool> {
    SubsetPool::elemental(n, p, count, seed)
}
