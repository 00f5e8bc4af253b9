//! Sparsemax and segment-wise softmax.
//!
//! Sparsemax is the Euclidean projection of a score vector onto the
//! probability simplex. Unlike softmax it can assign exactly zero mass, which
//! makes it suitable for sparse soft cluster assignment.

use crate::diffcore::Matrix;
use crate::error::{Error, Result};

/// Projects `z` onto the probability simplex, writing into `out`.
///
/// Returns the threshold `tau` so that `out[i] = max(z[i] - tau, 0)`.
pub fn sparsemax_into(z: &[f64], out: &mut [f64]) -> f64 {
    debug_assert_eq!(z.len(), out.len());
    let mut sorted = z.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    // k(z) = max{k : 1 + k z_(k) > sum_{j<=k} z_(j)}
    let mut cumsum = 0.0;
    let mut support_sum = 0.0;
    let mut k = 0usize;
    for (i, &v) in sorted.iter().enumerate() {
        cumsum += v;
        if 1.0 + (i + 1) as f64 * v > cumsum {
            k = i + 1;
            support_sum = cumsum;
        }
    }
    let tau = (support_sum - 1.0) / k as f64;
    for (o, &v) in out.iter_mut().zip(z) {
        *o = (v - tau).max(0.0);
    }
    tau
}

/// Row-wise sparsemax.
pub fn sparsemax(z: &Matrix) -> Result<Matrix> {
    if z.cols() == 0 {
        return Err(Error::Empty("sparsemax row"));
    }
    let mut out = Matrix::zeros(z.rows(), z.cols());
    for r in 0..z.rows() {
        sparsemax_into(z.row(r), out.row_mut(r));
    }
    Ok(out)
}

/// Softmax over `v`, computed independently within each run of equal segment
/// ids. Segment ids must be non-decreasing; `None` treats `v` as one segment.
pub fn softmax(v: &[f64], segments: Option<&[usize]>) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    match segments {
        None => softmax_span(v, &mut out),
        Some(seg) => {
            assert_eq!(seg.len(), v.len(), "segment ids must cover every entry");
            for (start, end) in segment_spans(seg) {
                softmax_span(&v[start..end], &mut out[start..end]);
            }
        }
    }
    out
}

fn softmax_span(v: &[f64], out: &mut [f64]) {
    if v.is_empty() {
        return;
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &x) in out.iter_mut().zip(v) {
        *o = (x - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Half-open `[start, end)` index ranges of consecutive equal ids.
pub fn segment_spans(segments: &[usize]) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = 0;
    for i in 1..=segments.len() {
        if i == segments.len() || segments[i] != segments[start] {
            if i > start {
                spans.push((start, i));
            }
            start = i;
        }
    }
    spans
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sm(z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; z.len()];
        sparsemax_into(z, &mut out);
        out
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn sparsemax_examples() {
        assert!(close(&sm(&[0.0, 0.0, 0.0]), &[1.0 / 3.0; 3], 1e-15));
        assert_eq!(sm(&[10.0, 0.0, 0.0]), vec![1.0, 0.0, 0.0]);
        // tau = (0.9 - 1) / 3
        assert!(close(
            &sm(&[0.5, 0.3, 0.1]),
            &[0.533_333_333_333_333_3, 0.333_333_333_333_333_3, 0.133_333_333_333_333_3],
            1e-12
        ));
    }

    #[test]
    fn sparsemax_single_entry_is_one() {
        assert_eq!(sm(&[-3.0]), vec![1.0]);
    }

    #[test]
    fn sparsemax_rejects_empty_rows() {
        assert!(sparsemax(&Matrix::zeros(2, 0)).is_err());
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0], None), vec![0.5, 0.5]);
        assert_eq!(softmax(&[1.0, 1.0, 5.0], Some(&[0, 0, 1])), vec![0.5, 0.5, 1.0]);
        let p = softmax(&[1.0, 2.0, 3.0], None);
        assert!(close(&p, &[0.0900, 0.2447, 0.6652], 1e-4));
    }

    #[test]
    fn softmax_is_stable_for_large_inputs() {
        let p = softmax(&[1000.0, 1000.0], None);
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn spans() {
        assert_eq!(segment_spans(&[0, 0, 1, 2, 2]), vec![(0, 2), (2, 3), (3, 5)]);
        assert!(segment_spans(&[]).is_empty());
    }
}
