//! GCC-PHAT lag-domain features.
//!
//! Lag convention: column `k` of a feature with `Z` columns holds lag
//! `k - Z/2` samples, and a positive lag means the first channel (left ear)
//! leads, i.e. the second channel is a delayed copy of the first.

use std::sync::Arc;

use ndarray::{Array1, Array2, Axis};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::features::stft::StftFrames;

pub const DEFAULT_LAGS: usize = 96;
pub const PHAT_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GccPhatFeature {
    /// `L_a` frames by `Z` lags.
    pub data: Array2<f64>,
}

impl GccPhatFeature {
    pub fn n_lags(&self) -> usize {
        self.data.ncols()
    }

    pub fn n_frames(&self) -> usize {
        self.data.nrows()
    }

    /// Lag in samples represented by column `col`.
    pub fn lag_of(&self, col: usize) -> isize {
        col as isize - (self.n_lags() / 2) as isize
    }

    /// Frame-averaged correlation over lags.
    pub fn mean_over_frames(&self) -> Array1<f64> {
        self.data
            .mean_axis(Axis(0))
            .unwrap_or_else(|| Array1::zeros(self.n_lags()))
    }

    /// Integer peak lag of each frame (first maximum wins).
    pub fn peak_lags(&self) -> Vec<isize> {
        self.data
            .rows()
            .into_iter()
            .map(|row| {
                let mut best = 0;
                for (i, v) in row.iter().enumerate() {
                    if *v > row[best] {
                        best = i;
                    }
                }
                self.lag_of(best)
            })
            .collect()
    }
}

pub struct GccPhat {
    window: usize,
    n_lags: usize,
    ifft: Arc<dyn Fft<f64>>,
}

impl GccPhat {
    pub fn new(window: usize, n_lags: usize) -> Result<Self> {
        if n_lags == 0 || n_lags > window {
            return Err(Error::Config(format!(
                "{n_lags} lags do not fit a {window}-point window"
            )));
        }
        Ok(Self {
            window,
            n_lags,
            ifft: FftPlanner::new().plan_fft_inverse(window),
        })
    }

    pub fn process(&self, ch1: &StftFrames, ch2: &StftFrames) -> Result<GccPhatFeature> {
        if ch1.data.dim() != ch2.data.dim() || ch1.window != ch2.window {
            return Err(Error::Shape(format!(
                "STFT shapes differ: {:?} vs {:?}",
                ch1.data.dim(),
                ch2.data.dim()
            )));
        }
        if ch1.window != self.window {
            return Err(Error::Shape(format!(
                "STFT window {} does not match plan window {}",
                ch1.window, self.window
            )));
        }
        let n = self.window;
        let half = n / 2;
        let t = ch1.n_frames();
        let mut out = Array2::zeros((t, self.n_lags));
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let centre = (self.n_lags / 2) as isize;
        for f in 0..t {
            for k in 0..=half {
                let cross = ch1.data[[f, k]] * ch2.data[[f, k]].conj();
                buf[k] = cross / cross.norm().max(PHAT_EPS);
            }
            for k in half + 1..n {
                buf[k] = buf[n - k].conj();
            }
            self.ifft.process(&mut buf);
            for col in 0..self.n_lags {
                let lag = col as isize - centre;
                let idx = (-lag).rem_euclid(n as isize) as usize;
                out[[f, col]] = buf[idx].re / n as f64;
            }
        }
        Ok(GccPhatFeature { data: out })
    }
}

pub fn gcc_phat(ch1: &StftFrames, ch2: &StftFrames, n_lags: usize) -> Result<GccPhatFeature> {
    GccPhat::new(ch1.window, n_lags)?.process(ch1, ch2)
}
