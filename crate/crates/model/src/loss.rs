//! Loss functions and training targets.

use egodoa_core::eval::detection::{MAP_COLS, MAP_ROWS};
use egodoa_core::{Error, Result};

use crate::params::Mat;

/// `sum_i (p_i - p_hat_i)^2`.
pub fn emd_loss(p: &[f64], p_hat: &[f64]) -> Result<f64> {
    if p.len() != p_hat.len() {
        return Err(Error::Shape(format!(
            "EMD over {} target bins and {} predicted bins",
            p.len(),
            p_hat.len()
        )));
    }
    Ok(p.iter().zip(p_hat).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// Gradient of [`emd_loss`] with respect to `p_hat`.
pub fn emd_grad(p: &[f64], p_hat: &[f64]) -> Result<Vec<f64>> {
    if p.len() != p_hat.len() {
        return Err(Error::Shape("EMD gradient length mismatch".into()));
    }
    Ok(p.iter().zip(p_hat).map(|(a, b)| 2.0 * (b - a)).collect())
}

/// Binary cross-entropy of a probability against a 0/1 label, with the
/// probability clamped away from 0 and 1.
pub fn bce(prob: f64, label: bool) -> f64 {
    let p = prob.clamp(1e-12, 1.0 - 1e-12);
    if label {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// 90 x 180 binary map with every cell within `radius` cells of a speaker
/// cell set to 1. Azimuth wraps; elevation does not.
pub fn dilated_sphere_target(cells: &[(usize, usize)], radius: f64) -> Mat {
    let mut t = Mat::zeros((MAP_ROWS, MAP_COLS));
    let r = radius.max(0.0);
    let span = r.floor() as isize;
    for &(row, col) in cells {
        for dr in -span..=span {
            for dc in -span..=span {
                if ((dr * dr + dc * dc) as f64).sqrt() > r {
                    continue;
                }
                let rr = row as isize + dr;
                if rr < 0 || rr >= MAP_ROWS as isize {
                    continue;
                }
                let cc = (col as isize + dc).rem_euclid(MAP_COLS as isize);
                t[[rr as usize, cc as usize]] = 1.0;
            }
        }
    }
    t
}
