//! SRP-PHAT azimuth estimate for a two-microphone array.
//!
//! The frame-averaged GCC-PHAT is steered over a 1° azimuth grid. Each
//! candidate's expected lag, `-d cos(az) / c * fs` under the lag convention
//! of [`crate::features::gcc`], is generally fractional, so the response is
//! read off a band-limited (sinc) reconstruction of the lag sequence. With
//! two microphones az and 360 - az have identical expected lags; the front
//! image (az <= 180) is reported.

use std::f64::consts::PI;

use ndarray::{Array1, Array2};

use crate::features::gcc::GccPhatFeature;
use crate::geometry::{AzimuthDeg, BORESIGHT_DEG};
use crate::simulator::render::AcousticsConfig;

/// Peak magnitude below which the input is treated as silence.
pub const SILENCE_LEVEL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SrpEstimate {
    pub azimuth: AzimuthDeg,
    /// Set when the input was silent and `azimuth` is the boresight fallback.
    pub low_confidence: bool,
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Expected lag in samples for a far-field source at `az` degrees.
pub fn expected_lag(az_deg: f64, cfg: &AcousticsConfig) -> f64 {
    // fold onto [0, 180] so the mirrored pair shares bit-identical lags
    let a = crate::geometry::wrap_deg(az_deg);
    let folded = if a > 180.0 { 360.0 - a } else { a };
    -cfg.mic_spacing * folded.to_radians().cos() / cfg.sound_speed * cfg.sample_rate as f64
}

/// Precomputed steering weights, 360 azimuths by `n_lags`.
pub struct SrpSteering {
    weights: Array2<f64>,
}

impl SrpSteering {
    pub fn new(cfg: &AcousticsConfig, n_lags: usize) -> Self {
        let centre = (n_lags / 2) as f64;
        let mut weights = Array2::zeros((360, n_lags));
        for az in 0..360 {
            let tau = expected_lag(az as f64, cfg);
            for col in 0..n_lags {
                weights[[az, col]] = sinc(tau - (col as f64 - centre));
            }
        }
        Self { weights }
    }

    /// Steered response power at every integer azimuth.
    pub fn response(&self, mean_gcc: &Array1<f64>) -> Array1<f64> {
        self.weights.dot(mean_gcc)
    }

    pub fn estimate(&self, feat: &GccPhatFeature) -> SrpEstimate {
        let g = feat.mean_over_frames();
        if g.iter().all(|v| v.abs() < SILENCE_LEVEL) || g.len() != self.weights.ncols() {
            return SrpEstimate {
                azimuth: AzimuthDeg::new(BORESIGHT_DEG),
                low_confidence: true,
            };
        }
        let power = self.response(&g);
        let mut best = 0;
        for (az, p) in power.iter().enumerate() {
            if *p > power[best] {
                best = az;
            }
        }
        SrpEstimate {
            azimuth: AzimuthDeg::new(best as f64),
            low_confidence: false,
        }
    }
}

pub fn srp_phat_doa(feat: &GccPhatFeature, cfg: &AcousticsConfig) -> SrpEstimate {
    SrpSteering::new(cfg, feat.n_lags()).estimate(feat)
}
