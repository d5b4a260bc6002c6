use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Number of unordered pairs among `n` items.
pub fn pair_count(n: usize) -> u64 {
    (n as u64) * (n as u64).saturating_sub(1) / 2
}

/// Maps a pair index in `0..pair_count(n)` to `(i, j)` with `i < j`.
pub fn pair_from_index(n: usize, k: u64) -> (usize, usize) {
    // Row i holds pairs (i, i+1..n); rows shrink by one.
    let n = n as u64;
    let mut lo = 0u64;
    let mut hi = n - 1;
    // Number of pairs before row i: i*n - i*(i+1)/2.
    let before = |i: u64| i * n - i * (i + 1) / 2;
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        if before(mid) <= k {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    let i = lo;
    let j = i + 1 + (k - before(i));
    (i as usize, j as usize)
}

/// Endless stream of uniformly random unordered pairs. Within an epoch every
/// pair appears at most once; a new epoch starts once all pairs are used.
/// Memory grows with the number of pairs drawn in the current epoch, not
/// with the total pair count.
#[derive(Debug, Clone)]
pub struct PairStream {
    n: usize,
    total: u64,
    drawn: u64,
    swaps: HashMap<u64, u64>,
    rng: ChaCha8Rng,
    epoch: usize,
}

impl PairStream {
    pub fn new(n: usize, seed: u64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument(format!("pair stream needs at least 2 images, got {n}")));
        }
        Ok(Self {
            n,
            total: pair_count(n),
            drawn: 0,
            swaps: HashMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            epoch: 0,
        })
    }

    pub fn pairs_per_epoch(&self) -> u64 {
        self.total
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }
}

impl Iterator for PairStream {
    type Item = (usize, usize);

    fn next(&mut self) -> Option<Self::Item> {
        if self.drawn == self.total {
            self.drawn = 0;
            self.swaps.clear();
            self.epoch += 1;
        }
        // Lazy Fisher-Yates over the virtual array 0..total.
        let i = self.drawn;
        let j = self.rng.random_range(i..self.total);
        let vi = *self.swaps.get(&i).unwrap_or(&i);
        let vj = *self.swaps.get(&j).unwrap_or(&j);
        self.swaps.insert(j, vi);
        self.swaps.remove(&i);
        self.drawn += 1;
        Some(pair_from_index(self.n, vj))
    }
}
