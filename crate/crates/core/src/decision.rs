//! Binary re-estimate/predict decisions for one frame.

use serde::{Deserialize, Serialize};

use crate::error::{IsacError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DecisionPair {
    /// `true`: re-estimate the user's channel this frame.
    pub comm: Vec<bool>,
    /// `true`: re-estimate the target's state this frame.
    pub radar: Vec<bool>,
}

impl DecisionPair {
    pub fn new(comm: Vec<bool>, radar: Vec<bool>) -> Self {
        Self { comm, radar }
    }

    pub fn all(users: usize, targets: usize, value: bool) -> Self {
        Self::new(vec![value; users], vec![value; targets])
    }

    /// Number of users re-estimating.
    pub fn estimating_users(&self) -> usize {
        popcount(&self.comm)
    }

    /// Whether the uplink pilots fit in the frame.
    pub fn is_feasible(&self, max_reestimations: usize) -> bool {
        self.estimating_users() <= max_reestimations
    }

    pub fn check_feasible(&self, training_length: usize, symbols_per_frame: usize) -> Result<()> {
        let needed = training_length * self.estimating_users();
        if needed > symbols_per_frame {
            return Err(IsacError::StageOneInfeasible {
                users: self.estimating_users(),
                needed,
                available: symbols_per_frame,
            });
        }
        Ok(())
    }

    /// Every decision pair over `users` users and `targets` targets, in
    /// binary counting order with the first user as the least significant bit.
    pub fn enumerate(users: usize, targets: usize) -> Vec<DecisionPair> {
        let n = users + targets;
        assert!(n < 31, "exhaustive enumeration over {n} bits");
        (0u32..1 << n)
            .map(|code| {
                let bits: Vec<bool> = (0..n).map(|i| code >> i & 1 == 1).collect();
                DecisionPair::new(bits[..users].to_vec(), bits[users..].to_vec())
            })
            .collect()
    }
}

pub fn popcount(bits: &[bool]) -> usize {
    bits.iter().filter(|&&b| b).count()
}

/// `"0110"`-style rendering.
pub fn bit_string(bits: &[bool]) -> String {
    bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

pub fn bits_to_f64(bits: &[bool]) -> Vec<f64> {
    bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumeration_covers_all_pairs() {
        let all = DecisionPair::enumerate(2, 1);
        assert_eq!(all.len(), 8);
        assert_eq!(all[0], DecisionPair::all(2, 1, false));
        assert_eq!(all[7], DecisionPair::all(2, 1, true));
        assert_eq!(all[1].comm, vec![true, false]);
        let unique: std::collections::HashSet<_> = all.iter().collect();
        assert_eq!(unique.len(), 8);
    }

    #[test]
    fn feasibility() {
        let d = DecisionPair::all(3, 2, true);
        assert_eq!(d.estimating_users(), 3);
        assert!(d.is_feasible(3));
        assert!(!d.is_feasible(2));
        assert!(d.check_feasible(10, 30).is_ok());
        assert!(d.check_feasible(10, 29).is_err());
        assert_eq!(bit_string(&d.comm), "111");
    }
}
