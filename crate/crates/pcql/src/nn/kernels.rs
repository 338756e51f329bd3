//! Scalar numeric kernels shared by the tape ops and the inference paths.

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-subtraction stabilized log-sum-exp of a nonempty slice.
pub fn logsumexp_slice(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "logsumexp of empty slice");
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Stabilized softmax of a nonempty slice.
pub fn softmax_slice(values: &[f64]) -> Vec<f64> {
    let lse = logsumexp_slice(values);
    values.iter().map(|v| (v - lse).exp()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logsumexp_of_constant_rows() {
        // n copies of c -> c + ln n, exactly up to fp rounding
        for n in 1..6usize {
            let v = vec![2.5; n];
            assert!((logsumexp_slice(&v) - (2.5 + (n as f64).ln())).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax_slice(&[3.0, -1.0, 0.5, 700.0]);
        let s: f64 = p.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_is_symmetric_and_bounded() {
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
        assert!((sigmoid(3.0) + sigmoid(-3.0) - 1.0).abs() < 1e-12);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }
}
