use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Sentence, Treebank};
use crate::error::{Error, Result};

/// Draws `n` sentences. Without replacement the draw is a prefix of a
/// seeded permutation, so `n == len` yields a permutation of the treebank.
pub fn sample_sentences(treebank: &Treebank, n: usize, seed: u64, without_replacement: bool) -> Result<Vec<Sentence>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx = sample_indices(&mut rng, treebank.len(), n, without_replacement)?;
    Ok(idx.into_iter().map(|i| treebank.sentences[i].clone()).collect())
}

pub fn sample_indices<R: Rng>(rng: &mut R, len: usize, n: usize, without_replacement: bool) -> Result<Vec<usize>> {
    if without_replacement {
        if n > len {
            return Err(Error::usage(format!("cannot draw {n} of {len} sentences without replacement")));
        }
        let mut idx: Vec<usize> = (0..len).collect();
        idx.shuffle(rng);
        idx.truncate(n);
        Ok(idx)
    } else {
        if len == 0 && n > 0 {
            return Err(Error::usage("cannot sample from an empty treebank"));
        }
        Ok((0..n).map(|_| rng.random_range(0..len)).collect())
    }
}

/// Hands out successive disjoint batches of indices, reshuffling once an
/// epoch is exhausted.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(len: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut rng);
        BatchSampler { order, pos: 0, rng }
    }

    /// Next batch of at most `size` indices; a short batch ends an epoch.
    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        if self.order.is_empty() {
            return Vec::new();
        }
        if self.pos >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let end = (self.pos + size).min(self.order.len());
        let batch = self.order[self.pos..end].to_vec();
        self.pos = end;
        batch
    }

    /// Batches covering exactly one epoch.
    pub fn epoch(&mut self, size: usize) -> Vec<Vec<usize>> {
        if self.pos > 0 {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let mut out = Vec::new();
        while self.pos < self.order.len() {
            out.push(self.next_batch(size.max(1)));
        }
        out
    }
}
