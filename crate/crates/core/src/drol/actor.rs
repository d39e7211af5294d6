//! Candidate generation around the relaxed network output and adaptive
//! refinement of how many candidates to explore.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::sigmoid;
use super::quantize::order_preserving_quantize;
use super::ModBasis;
use crate::error::Result;
use crate::rng::standard_normal;

/// Exploration parameters for one decision block (users or targets).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorParams {
    /// Block length `X`.
    pub dimension: usize,
    /// Base candidate count `K̃`.
    pub k_tilde: usize,
    /// Probability of adding the noisy candidate block.
    pub explore_prob: f64,
    /// Exploitation constant `𝒜`.
    pub a_const: f64,
    /// Refresh interval `Δ̃` in frames.
    pub refresh_interval: usize,
    /// Selected 1-based candidate index and realized candidate count per frame.
    pub history: Vec<(usize, usize)>,
}

/// Candidates for one block: the noiseless block first, then the noisy one.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub candidates: Vec<Vec<bool>>,
    pub noisy: bool,
}

impl CandidateSet {
    pub fn count(&self) -> usize {
        self.candidates.len()
    }
}

impl ActorParams {
    /// Starts with every quantized candidate explored.
    pub fn new(dimension: usize, a_const: f64, refresh_interval: usize) -> Self {
        let mut p = Self {
            dimension,
            k_tilde: dimension + 1,
            explore_prob: 0.0,
            a_const,
            refresh_interval: refresh_interval.max(1),
            history: Vec::new(),
        };
        p.k_tilde = p.clamp_k(p.k_tilde);
        p.explore_prob = p.probability();
        p
    }

    fn clamp_k(&self, k: usize) -> usize {
        let lo = (self.a_const.ceil().max(1.0) as usize).min(self.dimension + 1);
        k.clamp(lo, self.dimension + 1)
    }

    fn probability(&self) -> f64 {
        (1.0 - self.a_const / self.k_tilde as f64).clamp(0.0, 1.0)
    }

    pub fn generate<R: Rng + ?Sized>(&self, a_tilde: &[f64], rng: &mut R) -> Result<CandidateSet> {
        let mut candidates = order_preserving_quantize(a_tilde, self.k_tilde)?;
        let noisy = rng.random::<f64>() < self.explore_prob;
        if noisy {
            let perturbed: Vec<f64> = a_tilde
                .iter()
                .map(|&a| sigmoid(a + standard_normal(rng)))
                .collect();
            candidates.extend(order_preserving_quantize(&perturbed, self.k_tilde)?);
        }
        Ok(CandidateSet { candidates, noisy })
    }

    /// Records the 1-based selected index for frame `frame` (1-based) and
    /// refreshes `K̃` at multiples of the refresh interval.
    pub fn record_and_refine(
        &mut self,
        frame: usize,
        selected: usize,
        count: usize,
        basis: ModBasis,
    ) {
        self.history.push((selected, count));
        if self.history.len() > self.refresh_interval {
            self.history.remove(0);
        }
        if frame.is_multiple_of(self.refresh_interval)
            && self.history.len() == self.refresh_interval
        {
            let sum: usize = self
                .history
                .iter()
                .map(|&(i, c)| match basis {
                    ModBasis::Dimension => i % self.dimension.max(1),
                    ModBasis::CandidateCount => i % c.max(1),
                })
                .sum();
            self.k_tilde = self.clamp_k(sum / self.refresh_interval + 1);
        }
        self.explore_prob = self.probability();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn candidate_counts_follow_probability() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = ActorParams::new(3, 0.0, 4);
        p.k_tilde = 2;
        p.explore_prob = 0.0;
        assert_eq!(p.generate(&[0.1, 0.7, 0.4], &mut rng).unwrap().count(), 2);
        p.explore_prob = 1.0;
        assert_eq!(p.generate(&[0.1, 0.7, 0.4], &mut rng).unwrap().count(), 4);
    }

    #[test]
    fn noisy_branch_frequency() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = ActorParams::new(3, 0.0, 4);
        p.explore_prob = 0.3;
        let n = 10_000;
        let hits = (0..n)
            .filter(|_| p.generate(&[0.2, 0.5, 0.9], &mut rng).unwrap().noisy)
            .count();
        let f = hits as f64 / n as f64;
        assert!((f - 0.3).abs() <= 0.015, "{f}");
    }

    #[test]
    fn refine_hand_example() {
        let mut p = ActorParams::new(3, 0.0, 4);
        for (n, i) in [1, 2, 1, 2].into_iter().enumerate() {
            p.record_and_refine(n + 1, i, 6, ModBasis::Dimension);
        }
        assert_eq!(p.k_tilde, 2);
    }

    #[test]
    fn probability_from_constant() {
        let mut p = ActorParams::new(6, 1.9, 4);
        assert_eq!(p.k_tilde, 7);
        p.k_tilde = 2;
        p.explore_prob = p.probability();
        assert!((p.explore_prob - 0.05).abs() < 1e-12);
    }

    #[test]
    fn multiples_of_dimension_exploit() {
        let mut p = ActorParams::new(3, 0.0, 4);
        for n in 1..=4 {
            p.record_and_refine(n, 3, 6, ModBasis::Dimension);
        }
        assert_eq!(p.k_tilde, 1);
    }

    #[test]
    fn clamp_keeps_probability_valid() {
        let mut p = ActorParams::new(3, 1.9, 2);
        for n in 1..=20 {
            p.record_and_refine(n, 3, 4, ModBasis::Dimension);
            assert!(p.k_tilde >= 2 && p.k_tilde <= 4);
            assert!((0.0..=1.0).contains(&p.explore_prob));
        }
        assert_eq!(p.k_tilde, 2);
    }

    #[test]
    fn candidate_count_basis() {
        let mut p = ActorParams::new(3, 0.0, 2);
        p.record_and_refine(1, 5, 4, ModBasis::CandidateCount);
        p.record_and_refine(2, 3, 4, ModBasis::CandidateCount);
        // Mean selected count 2, plus one.
        assert_eq!(p.k_tilde, 3);
    }
}
