//! Small deterministic kernels shared by the quadrature and training loops.
//!
//! Every reduction here runs in a fixed order so results do not depend on
//! how callers schedule work across threads.

/// Dot product with eight independent accumulators (fixed order).
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Pairwise (cascade) summation.
pub fn sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        let mut s = 0.0;
        for x in xs {
            s += x;
        }
        return s;
    }
    let mid = xs.len() / 2;
    sum(&xs[..mid]) + sum(&xs[mid..])
}

/// `log Σ exp(x_i)`, max-shifted.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let shifted: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    max + sum(&shifted).ln()
}

/// Normalized `exp(x_i)` weights, max-shifted. Returns the weights and
/// `log Σ exp(x_i)`.
pub fn softmax(xs: &[f64]) -> (Vec<f64>, f64) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let total = sum(&w);
    let inv = 1.0 / total;
    for wi in &mut w {
        *wi *= inv;
    }
    (w, max + total.ln())
}

pub fn mean(xs: &[f64]) -> f64 {
    sum(xs) / xs.len() as f64
}

/// Mean of squares, then square root.
pub fn rms(xs: &[f64]) -> f64 {
    (dot(xs, xs) / xs.len() as f64).sqrt()
}

/// Deterministic 64-bit mixing (SplitMix64 finalizer), used to derive
/// independent per-task seeds from a master seed and integer tags.
pub fn mix_seed(master: u64, tags: &[u64]) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    let mut h = splitmix(master);
    for &t in tags {
        h = splitmix(h ^ splitmix(t.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..37).map(|i| i as f64 * 0.5).collect();
        let b: Vec<f64> = (0..37).map(|i| 1.0 - i as f64 * 0.1).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-10);
    }

    #[test]
    fn log_sum_exp_is_shift_stable() {
        let xs = [1000.0, 1000.0];
        assert!((log_sum_exp(&xs) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        let (w, lse) = softmax(&[-1e4, -1e4 + 1.0]);
        assert!((w[0] + w[1] - 1.0).abs() < 1e-15);
        assert!(lse.is_finite());
    }

    #[test]
    fn mixed_seeds_differ_per_tag() {
        let a = mix_seed(1, &[1, 25, 0]);
        let b = mix_seed(1, &[1, 25, 1]);
        let c = mix_seed(2, &[1, 25, 0]);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, mix_seed(1, &[1, 25, 0]));
    }
}
