//! Additive noise at a target signal-to-noise ratio.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulator::render::StereoSignal;
use crate::simulator::source::{pink_noise, white_noise};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    White,
    Pink,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub kind: NoiseKind,
    /// Target SNR in dB; `None` means no noise is added.
    pub snr_db: Option<f64>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            kind: NoiseKind::Pink,
            snr_db: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mixed<T> {
    pub signal: T,
    /// SNR measured on the mixture components. `None` when the clean signal
    /// is silent and the ratio is undefined.
    pub measured_snr_db: Option<f64>,
}

fn power(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
    }
}

fn fit(noise: &[f64], len: usize) -> Vec<f64> {
    noise.iter().cycle().take(len).copied().collect()
}

/// Returns `clean + g * noise` with `g` chosen so the SNR equals `snr_db`.
/// The noise is looped or truncated to the clean length. An infinite
/// `snr_db` returns the clean signal untouched. When `clean` is silent the
/// noise is added at unit gain and the measured SNR is reported as `None`.
pub fn mix_at_snr(clean: &[f64], noise: &[f64], snr_db: f64) -> Result<Mixed<Vec<f64>>> {
    if snr_db == f64::INFINITY {
        return Ok(Mixed {
            signal: clean.to_vec(),
            measured_snr_db: Some(f64::INFINITY),
        });
    }
    if !snr_db.is_finite() {
        return Err(Error::Config(format!("invalid SNR {snr_db}")));
    }
    let noise = fit(noise, clean.len());
    let pn = power(&noise);
    if !(pn > 0.0) {
        return Err(Error::InvalidNoise("noise is all zeros".into()));
    }
    let pc = power(clean);
    if pc == 0.0 {
        return Ok(Mixed {
            signal: noise,
            measured_snr_db: None,
        });
    }
    let g = (pc / (pn * 10f64.powf(snr_db / 10.0))).sqrt();
    let scaled: Vec<f64> = noise.iter().map(|v| g * v).collect();
    let measured = 10.0 * (pc / power(&scaled)).log10();
    let signal = clean.iter().zip(&scaled).map(|(c, n)| c + n).collect();
    Ok(Mixed {
        signal,
        measured_snr_db: Some(measured),
    })
}

/// Stereo variant: independent noise per channel, one gain computed from the
/// power over both channels.
pub fn mix_stereo_at_snr(clean: &StereoSignal, noise: [&[f64]; 2], snr_db: f64) -> Result<Mixed<StereoSignal>> {
    let mut joined = clean.left.clone();
    joined.extend_from_slice(&clean.right);
    let n = clean.len();
    let mut nz = fit(noise[0], n);
    nz.extend(fit(noise[1], n));
    let m = mix_at_snr(&joined, &nz, snr_db)?;
    let right = m.signal[n..].to_vec();
    let mut left = m.signal;
    left.truncate(n);
    Ok(Mixed {
        signal: StereoSignal {
            left,
            right,
            sample_rate: clean.sample_rate,
        },
        measured_snr_db: m.measured_snr_db,
    })
}

/// Applies `cfg` to `clean` with noise drawn from `seed`.
pub fn add_noise(clean: &StereoSignal, cfg: &NoiseConfig, seed: u64) -> Result<Mixed<StereoSignal>> {
    let Some(snr) = cfg.snr_db else {
        return Ok(Mixed {
            signal: clean.clone(),
            measured_snr_db: Some(f64::INFINITY),
        });
    };
    let n = clean.len();
    let gen = |s: u64| match cfg.kind {
        NoiseKind::White => white_noise(s, n),
        NoiseKind::Pink => pink_noise(s, n),
    };
    let a = gen(seed);
    let b = gen(seed ^ 0x9E37_79B9_7F4A_7C15);
    mix_stereo_at_snr(clean, [&a, &b], snr)
}
