//! Index streams for one training epoch.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{BtnError, Result};
use crate::rng::{derive, Stream};

/// Draws indices with probability inversely proportional to the size of
/// their class, so every present class is drawn equally often in
/// expectation.
#[derive(Clone, Debug)]
pub struct ImbalancedSampler {
    dist: WeightedIndex<f64>,
}

impl ImbalancedSampler {
    pub fn new(labels: &[usize]) -> Result<ImbalancedSampler> {
        if labels.is_empty() {
            return Err(BtnError::data("cannot sample from an empty label list"));
        }
        let classes = labels.iter().max().unwrap() + 1;
        let mut counts = vec![0usize; classes];
        labels.iter().for_each(|&l| counts[l] += 1);
        let weights = labels.iter().map(|&l| 1.0 / counts[l] as f64);
        let dist = WeightedIndex::new(weights).map_err(|e| BtnError::data(e.to_string()))?;
        Ok(ImbalancedSampler { dist })
    }

    pub fn draw<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        (0..n).map(|_| self.dist.sample(rng)).collect()
    }
}

/// Endless index stream for `labels` seeded by `seed`.
pub fn imbalanced_sampler(labels: &[usize], seed: u64) -> Result<impl Iterator<Item = usize>> {
    let sampler = ImbalancedSampler::new(labels)?;
    let mut rng = derive(seed, Stream::Epoch, u64::MAX);
    Ok(std::iter::repeat_with(move || sampler.dist.sample(&mut rng)))
}

/// A uniform random permutation of `0..n`.
pub fn shuffled<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    fn class_freq(labels: &[usize], draws: &[usize], class: usize) -> f64 {
        draws.iter().filter(|&&i| labels[i] == class).count() as f64 / draws.len() as f64
    }

    #[test]
    fn skewed_classes_are_balanced() {
        let labels: Vec<usize> = (0..100).map(|i| usize::from(i >= 90)).collect();
        let draws: Vec<usize> = imbalanced_sampler(&labels, 3).unwrap().take(100_000).collect();
        let f = class_freq(&labels, &draws, 1);
        assert!((f - 0.5).abs() <= 0.02, "{f}");
    }

    #[test]
    fn balanced_input_is_uniform_over_indices() {
        let labels = [0, 1, 2, 0, 1, 2];
        let draws: Vec<usize> = imbalanced_sampler(&labels, 4).unwrap().take(60_000).collect();
        for i in 0..6 {
            let f = draws.iter().filter(|&&d| d == i).count() as f64 / 60_000.0;
            assert!((f - 1.0 / 6.0).abs() < 0.01);
        }
    }

    #[test]
    fn seeded_streams_repeat() {
        let labels = [0, 0, 1, 2, 2, 2];
        let a: Vec<usize> = imbalanced_sampler(&labels, 5).unwrap().take(50).collect();
        let b: Vec<usize> = imbalanced_sampler(&labels, 5).unwrap().take(50).collect();
        let c: Vec<usize> = imbalanced_sampler(&labels, 6).unwrap().take(50).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(imbalanced_sampler(&[], 0).is_err());
    }
}
