//! Seed streams.
//!
//! Per-epoch data order uses a SplitMix64 generator seeded with
//! `splitmix64(seed ^ splitmix64(epoch + 1))`, fed into a Fisher–Yates
//! shuffle that walks `i = n-1 .. 1` and swaps `i` with `next() % (i + 1)`.
//! That description is enough to reproduce the batch order elsewhere.
//! Weight initialisation and synthetic data use ChaCha8 seeded from
//! `splitmix64(seed ^ stream)` for a fixed per-purpose stream constant.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STREAM_INIT: u64 = 0x1717_0000_0000_0001;
pub const STREAM_DATA: u64 = 0x1717_0000_0000_0002;

/// One SplitMix64 output step applied to `x`.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        let out = splitmix64(self.state);
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        out
    }
}

pub fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    splitmix64(seed ^ splitmix64(epoch as u64 + 1))
}

/// Sample order for one epoch.
pub fn epoch_permutation(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = SplitMix64::new(epoch_seed(seed, epoch));
    for i in (1..n).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        order.swap(i, j);
    }
    order
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ stream))
}
