//! Short-time Fourier transform with a periodic Hann window.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub const DEFAULT_WINDOW: usize = 1024;
pub const DEFAULT_HOP: usize = 320;

/// Complex spectrogram, `T` frames by `window / 2 + 1` bins.
#[derive(Debug, Clone, PartialEq)]
pub struct StftFrames {
    pub data: Array2<Complex64>,
    pub window: usize,
    pub hop: usize,
}

impl StftFrames {
    pub fn n_frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_bins(&self) -> usize {
        self.data.ncols()
    }
}

pub fn n_frames(len: usize, window: usize, hop: usize) -> usize {
    if len < window {
        0
    } else {
        (len - window) / hop + 1
    }
}

pub fn hann(window: usize) -> Vec<f64> {
    (0..window)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / window as f64).cos())
        .collect()
}

/// Reusable STFT plan for one window/hop pair.
pub struct Stft {
    window: usize,
    hop: usize,
    taper: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(window: usize, hop: usize) -> Result<Self> {
        if window < 2 || hop == 0 {
            return Err(Error::Config(format!("invalid STFT window {window} / hop {hop}")));
        }
        let fft = FftPlanner::new().plan_fft_forward(window);
        Ok(Self {
            window,
            hop,
            taper: hann(window),
            fft,
        })
    }

    pub fn process(&self, wave: &[f64]) -> Result<StftFrames> {
        if wave.len() < self.window {
            return Err(Error::TooShort {
                needed: self.window,
                got: wave.len(),
            });
        }
        let t = n_frames(wave.len(), self.window, self.hop);
        let f = self.window / 2 + 1;
        let mut data = Array2::zeros((t, f));
        let mut buf = vec![Complex64::new(0.0, 0.0); self.window];
        for frame in 0..t {
            let off = frame * self.hop;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = Complex64::new(wave[off + i] * self.taper[i], 0.0);
            }
            self.fft.process(&mut buf);
            for k in 0..f {
                data[[frame, k]] = buf[k];
            }
        }
        Ok(StftFrames {
            data,
            window: self.window,
            hop: self.hop,
        })
    }
}

pub fn stft(wave: &[f64], window: usize, hop: usize) -> Result<StftFrames> {
    Stft::new(window, hop)?.process(wave)
}
