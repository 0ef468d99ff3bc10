//! Shared numeric helpers.

/// Pairwise (cascade) summation with a fixed split order, so the result
/// depends only on the input order and never on thread scheduling.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if xs.len() <= BLOCK {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Relative tolerance under which two aggregated scores count as tied.
///
/// Box sums from prefix tables and sums taken in different addend orders
/// differ by a few ulps for mathematically equal neighborhoods.
pub const TIE_RTOL: f64 = 1e-12;

/// Lowest index whose score is within [`TIE_RTOL`] of the maximum, together
/// with that score and the margin to the best score at any other index.
///
/// Returns `None` for an empty slice.
pub fn lowest_argmax(scores: &[f64]) -> Option<(usize, f64, f64)> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if scores.is_empty() {
        return None;
    }
    let floor = max - TIE_RTOL * max.abs();
    let best = scores.iter().position(|&s| s >= floor)?;
    let score = scores[best];
    let runner_up = scores
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != best)
        .map(|(_, &s)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    let gap = if runner_up.is_finite() {
        score - runner_up
    } else {
        score
    };
    Some((best, score, gap))
}

/// Decimal rendering with 17 significant digits, used for every float that
/// lands in an output file.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}
