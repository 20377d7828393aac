//! Wrapped Gaussian DOA targets over 360 one-degree bins.

use crate::error::{Error, Result};

pub const N_BINS: usize = 360;
pub const DEFAULT_SIGMA: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct DoaTarget {
    pub p: Vec<f64>,
    pub theta: usize,
    pub sigma: f64,
}

/// Gaussian over the cyclic bin distance to `theta`, normalised to sum 1.
/// Values depend only on the offset from `theta`, summed in offset order, so
/// rotating `theta` rotates the vector exactly.
pub fn gaussian_target(theta: usize, sigma: f64) -> Result<DoaTarget> {
    if theta >= N_BINS {
        return Err(Error::Config(format!("target bin {theta} outside [0, 360)")));
    }
    if !(sigma > 0.0) {
        return Err(Error::Config(format!("target sigma must be positive, got {sigma}")));
    }
    let by_offset: Vec<f64> = (0..N_BINS)
        .map(|k| {
            let d = k.min(N_BINS - k) as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = by_offset.iter().sum();
    let mut p = vec![0.0; N_BINS];
    for (k, v) in by_offset.iter().enumerate() {
        p[(theta + k) % N_BINS] = v / total;
    }
    Ok(DoaTarget { p, theta, sigma })
}

/// Index of the largest entry; the first one on ties.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn peak_sum_and_wrap() {
        for sigma in [1.0, 5.0, 10.0] {
            let t = gaussian_target(90, sigma).unwrap();
            assert_eq!(argmax(&t.p), 90);
            assert!((t.p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            let z = gaussian_target(0, sigma).unwrap();
            assert_eq!(z.p[359], z.p[1]);
        }
    }

    #[test]
    fn invalid_inputs() {
        assert!(gaussian_target(360, 4.0).is_err());
        assert!(gaussian_target(0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn rotation_is_exact(theta in 0usize..360, k in 0usize..360, sigma in 0.5f64..20.0) {
            let a = gaussian_target(theta, sigma).unwrap();
            let b = gaussian_target((theta + k) % 360, sigma).unwrap();
            for i in 0..360 {
                prop_assert_eq!(a.p[i], b.p[(i + k) % 360]);
            }
        }
    }
}
