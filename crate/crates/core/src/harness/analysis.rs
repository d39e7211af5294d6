//! Derived series: moving averages, estimation frequencies and utility
//! ratios.

use crate::error::{IsacError, Result};

use super::record::FrameRecord;

/// Trailing mean; the first `window − 1` entries average the available
/// prefix.
pub fn moving_average(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if series.is_empty() {
        return Err(IsacError::EmptySeries);
    }
    if window == 0 {
        return Err(IsacError::InvalidArgument(
            "window must be at least 1".into(),
        ));
    }
    let mut out = Vec::with_capacity(series.len());
    let mut sum = 0.0;
    for (i, &x) in series.iter().enumerate() {
        sum += x;
        if i >= window {
            sum -= series[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    Ok(out)
}

/// Mean of the bits over consecutive non-overlapping blocks of `window`
/// frames; a trailing partial block is averaged over its length.
pub fn estimation_frequency(bits: &[bool], window: usize) -> Vec<f64> {
    let window = window.max(1);
    bits.chunks(window)
        .map(|c| c.iter().filter(|&&b| b).count() as f64 / c.len() as f64)
        .collect()
}

/// Fraction of frames with the bit set.
pub fn overall_frequency(bits: &[bool]) -> f64 {
    if bits.is_empty() {
        return f64::NAN;
    }
    bits.iter().filter(|&&b| b).count() as f64 / bits.len() as f64
}

/// Per-frame `U / U_reference`, then the trailing moving average.
pub fn relative_utility_ratio(
    records: &[FrameRecord],
    reference: &[FrameRecord],
    window: usize,
) -> Result<Vec<f64>> {
    if records.len() != reference.len() {
        return Err(IsacError::Misaligned(format!(
            "{} frames against {}",
            records.len(),
            reference.len()
        )));
    }
    let ratios: Vec<f64> = records
        .iter()
        .zip(reference)
        .map(|(a, b)| {
            if a.frame != b.frame {
                return Err(IsacError::Misaligned(format!(
                    "frame {} against {}",
                    a.frame, b.frame
                )));
            }
            Ok(a.u_genie / b.u_genie)
        })
        .collect::<Result<_>>()?;
    moving_average(&ratios, window)
}

/// Bit series of every user followed by every target.
pub fn bit_series(records: &[FrameRecord]) -> Vec<Vec<bool>> {
    let Some(first) = records.first() else {
        return Vec::new();
    };
    let n = first.users() + first.targets();
    (0..n)
        .map(|e| {
            records
                .iter()
                .map(|r| {
                    if e < r.users() {
                        r.comm_bits[e]
                    } else {
                        r.radar_bits[e - r.users()]
                    }
                })
                .collect()
        })
        .collect()
}
