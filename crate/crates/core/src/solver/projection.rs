use crate::measures::{Interval, NodeLayout, QuantileFn, SupportMode};

/// Weighted least-squares non-decreasing fit by pool-adjacent-violators.
pub fn isotonic_regression(y: &[f64], w: &[f64]) -> Vec<f64> {
    assert_eq!(y.len(), w.len());
    // blocks of (weighted mean, total weight, length)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(y.len());
    for (&yi, &wi) in y.iter().zip(w) {
        let mut cur = (yi, wi, 1usize);
        while let Some(&(mean, weight, len)) = blocks.last() {
            if mean <= cur.0 {
                break;
            }
            blocks.pop();
            let total = weight + cur.1;
            cur = ((mean * weight + cur.0 * cur.1) / total, total, len + cur.2);
        }
        blocks.push(cur);
    }
    let mut out = Vec::with_capacity(y.len());
    for (mean, _, len) in blocks {
        out.extend(std::iter::repeat_n(mean, len));
    }
    out
}

/// Nearest point (in the `w`-weighted norm) that is non-decreasing and lies
/// in `[lo, hi]`, with the endpoints pinned under fixed support.
pub(crate) fn project_weighted(raw: &[f64], w: &[f64], interval: Interval, mode: SupportMode) -> Vec<f64> {
    let (lo, hi) = (interval.lo(), interval.hi());
    let m = raw.len();
    match mode {
        SupportMode::Free => isotonic_regression(raw, w)
            .into_iter()
            .map(|v| v.clamp(lo, hi))
            .collect(),
        SupportMode::FixedEndpoints => {
            let mut out = Vec::with_capacity(m);
            out.push(lo);
            if m > 2 {
                out.extend(
                    isotonic_regression(&raw[1..m - 1], &w[1..m - 1])
                        .into_iter()
                        .map(|v| v.clamp(lo, hi)),
                );
            }
            out.push(hi);
            out
        }
    }
}

/// Euclidean projection of `raw` onto non-decreasing vectors in `interval`,
/// then endpoint pinning under fixed support. The result uses the endpoint
/// layout of the quantile solver.
pub fn project_monotone(raw: &[f64], interval: Interval, support_mode: SupportMode) -> QuantileFn {
    let w = vec![1.0; raw.len()];
    let values = project_weighted(raw, &w, interval, support_mode);
    QuantileFn::from_parts_unchecked(interval, NodeLayout::Endpoint, values, support_mode)
}
