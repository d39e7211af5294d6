//! Flattening of the frame state into the network input and its running
//! standardization.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::comm::CommChannelState;
use crate::error::{IsacError, Result};
use crate::radar::TrackState;

/// `K(2L_T + 1) + 12Q`.
pub fn feature_dim(users: usize, antennas: usize, targets: usize) -> usize {
    users * (2 * antennas + 1) + targets * 12
}

/// Per user `Re(ĝ)`, `Im(ĝ)`, `ς`; per target `x̂` then the bound matrix in
/// row-major order.
pub fn featurize(users: &[CommChannelState], tracks: &[TrackState]) -> Result<DVector<f64>> {
    let mut out = Vec::new();
    for u in users {
        out.extend(u.g_hat.iter().map(|z| z.re));
        out.extend(u.g_hat.iter().map(|z| z.im));
        out.push(u.varsigma);
    }
    for t in tracks {
        out.extend(t.x_hat.iter());
        for i in 0..3 {
            for j in 0..3 {
                out.push(t.pcrb[(i, j)]);
            }
        }
    }
    if let Some(i) = out.iter().position(|v| !v.is_finite()) {
        return Err(IsacError::NonFinite(format!("feature {i}")));
    }
    Ok(DVector::from_vec(out))
}

/// Welford running mean and variance per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    count: u64,
    mean: DVector<f64>,
    m2: DVector<f64>,
}

impl Normalizer {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: DVector::zeros(dim),
            m2: DVector::zeros(dim),
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn observe(&mut self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.mean.len() {
            return Err(IsacError::DimensionMismatch {
                expected: self.mean.len(),
                got: x.len(),
            });
        }
        self.count += 1;
        let n = self.count as f64;
        for i in 0..x.len() {
            let d = x[i] - self.mean[i];
            self.mean[i] += d / n;
            self.m2[i] += d * (x[i] - self.mean[i]);
        }
        Ok(())
    }

    /// `(x − mean) / std`; dimensions with zero spread map to zero.
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = self.count.max(1) as f64;
        DVector::from_fn(x.len(), |i, _| {
            let std = (self.m2[i] / n).sqrt();
            if std > 0.0 {
                (x[i] - self.mean[i]) / std
            } else {
                0.0
            }
        })
    }

    pub fn observe_and_apply(&mut self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.observe(x)?;
        Ok(self.apply(x))
    }
}
