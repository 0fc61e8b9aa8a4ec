//! Balanced real/fake batching.
//!
//! Each batch holds `B/2` real and `B/2` fake ids. An epoch lasts until the
//! larger pool has been seen once; the smaller pool is cycled. Ids repeat
//! only after a full pass over their pool, and which ids fill a trailing
//! partial pass rotates from epoch to epoch.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embedding::stable_hash;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub reals: Vec<usize>,
    pub fakes: Vec<usize>,
}

/// Batches per epoch for the given pool sizes.
pub fn batches_per_epoch(n_real: usize, n_fake: usize, batch: usize) -> usize {
    let half = (batch / 2).max(1);
    n_real.max(n_fake).div_ceil(half)
}

fn rng_for(seed: u64, epoch: u64, stream: &str, pass: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&epoch.to_le_bytes());
    key[16..24].copy_from_slice(&stable_hash(stream.as_bytes()).to_le_bytes());
    key[24..].copy_from_slice(&pass.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// `slots` ids drawn from `0..n` as successive shuffled passes.
fn cycle(n: usize, slots: usize, seed: u64, epoch: u64, stream: &str) -> Vec<usize> {
    let mut out = Vec::with_capacity(slots);
    let full = slots / n;
    for pass in 0..full {
        let mut ids: Vec<usize> = (0..n).collect();
        ids.shuffle(&mut rng_for(seed, epoch, stream, pass as u64));
        out.extend(ids);
    }
    let rest = slots - full * n;
    if rest > 0 {
        // Ids that get the extra appearance: a window starting where the
        // previous epoch's window ended.
        let start = (epoch as usize % n) * rest % n;
        let mut ids: Vec<usize> = (0..rest).map(|k| (start + k) % n).collect();
        ids.shuffle(&mut rng_for(seed, epoch, stream, full as u64));
        out.extend(ids);
    }
    out
}

/// The ordered batches of `epoch`.
pub fn balanced_batches(
    n_real: usize,
    n_fake: usize,
    epoch: u64,
    batch: usize,
    seed: u64,
) -> Result<Vec<Batch>> {
    if batch == 0 || batch % 2 == 1 {
        return Err(Error::Config(format!(
            "batch size {batch} must be even and positive"
        )));
    }
    if n_real == 0 || n_fake == 0 {
        return Err(Error::Config(format!(
            "need at least one real and one fake sample, have {n_real} and {n_fake}"
        )));
    }
    let half = batch / 2;
    let count = batches_per_epoch(n_real, n_fake, batch);
    let reals = cycle(n_real, count * half, seed, epoch, "real");
    let fakes = cycle(n_fake, count * half, seed, epoch, "fake");
    Ok(reals
        .chunks(half)
        .zip(fakes.chunks(half))
        .map(|(r, f)| Batch {
            reals: r.to_vec(),
            fakes: f.to_vec(),
        })
        .collect())
}

/// Endless batch stream across epochs, with a resumable cursor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchCursor {
    pub epoch: u64,
    pub index: usize,
}

impl BatchCursor {
    pub fn start() -> Self {
        Self { epoch: 0, index: 0 }
    }

    pub fn next_batch(
        &mut self,
        n_real: usize,
        n_fake: usize,
        batch: usize,
        seed: u64,
    ) -> Result<Batch> {
        let batches = balanced_batches(n_real, n_fake, self.epoch, batch, seed)?;
        let out = batches[self.index].clone();
        self.index += 1;
        if self.index == batches.len() {
            self.index = 0;
            self.epoch += 1;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_real_twice() {
        let batches = balanced_batches(4, 8, 0, 4, 9).unwrap();
        assert_eq!(batches.len(), 4);
        let mut counts = [0; 4];
        for b in &batches {
            assert_eq!((b.reals.len(), b.fakes.len()), (2, 2));
            for &r in &b.reals {
                counts[r] += 1;
            }
        }
        assert_eq!(counts, [2; 4]);
    }

    #[test]
    fn equal_pools_see_everything_once() {
        let batches = balanced_batches(6, 6, 3, 4, 1).unwrap();
        let mut reals: Vec<_> = batches.iter().flat_map(|b| b.reals.clone()).collect();
        reals.sort();
        assert_eq!(reals, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn extra_appearances_rotate() {
        // 3 reals, 8 slots: two full passes plus two extras per epoch.
        let extras = |epoch| {
            let b = balanced_batches(3, 8, epoch, 4, 5).unwrap();
            let mut counts = [0; 3];
            for r in b.iter().flat_map(|b| b.reals.clone()) {
                counts[r] += 1;
            }
            counts
        };
        assert_ne!(extras(0), extras(1));
        assert!(extras(0).iter().all(|&c| c == 2 || c == 3));
    }

    #[test]
    fn odd_batch_rejected() {
        assert!(balanced_batches(4, 8, 0, 5, 0).is_err());
    }
}
