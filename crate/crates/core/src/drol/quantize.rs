//! Order-preserving quantization of a relaxed decision into binary
//! candidates.

use crate::error::{IsacError, Result};

/// The first candidate thresholds at one half; the `i`-th flips around the
/// `(i−1)`-th entry closest to one half.
pub fn order_preserving_quantize(a_tilde: &[f64], count: usize) -> Result<Vec<Vec<bool>>> {
    let n = a_tilde.len();
    if n > 64 {
        return Err(IsacError::InvalidArgument(format!("{n} entries exceed 64")));
    }
    let mut masks = Vec::with_capacity(count);
    quantize_masks(a_tilde, count, &mut masks)?;
    Ok(masks
        .into_iter()
        .map(|m| (0..n).map(|i| m >> i & 1 == 1).collect())
        .collect())
}

/// As [`order_preserving_quantize`] with each candidate packed into a bit
/// mask (entry `i` in bit `i`), reusing `out`.
pub fn quantize_masks(a_tilde: &[f64], count: usize, out: &mut Vec<u64>) -> Result<()> {
    let n = a_tilde.len();
    if count == 0 || count > n + 1 || n > 64 {
        return Err(IsacError::InvalidArgument(format!(
            "candidate count {count} outside [1, {}]",
            n + 1
        )));
    }
    if let Some(v) = a_tilde.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(IsacError::InvalidArgument(format!(
            "relaxed entry {v} outside [0, 1]"
        )));
    }
    let mut order = [0usize; 64];
    let order = &mut order[..n];
    for (i, o) in order.iter_mut().enumerate() {
        *o = i;
    }
    order.sort_by(|&i, &j| {
        (a_tilde[i] - 0.5)
            .abs()
            .total_cmp(&(a_tilde[j] - 0.5).abs())
            .then(i.cmp(&j))
    });
    let mask = |pred: &dyn Fn(f64) -> bool| {
        a_tilde
            .iter()
            .enumerate()
            .fold(0u64, |m, (i, &v)| if pred(v) { m | 1 << i } else { m })
    };
    out.clear();
    out.push(mask(&|v| v >= 0.5));
    for &pivot in order.iter().take(count - 1) {
        let t = a_tilde[pivot];
        out.push(mask(&|v| v > t || (v == t && t <= 0.5)));
    }
    Ok(())
}

/// True when `ã[ℓ] ≥ ã[ℓ']` implies `a[ℓ] ≥ a[ℓ']` for every pair.
pub fn is_order_preserving(a_tilde: &[f64], bits: &[bool]) -> bool {
    a_tilde.iter().zip(bits).all(|(&x, &bx)| {
        a_tilde
            .iter()
            .zip(bits)
            .all(|(&y, &by)| !(x >= y) || bx >= by)
    })
}
