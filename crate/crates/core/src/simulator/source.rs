//! Dry source signals: a speech-like babble generator and test tones.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Pure tone at unit amplitude.
pub fn tone(freq: f64, duration: f64, sample_rate: u32) -> Vec<f64> {
    let n = (duration * sample_rate as f64).round() as usize;
    let w = 2.0 * PI * freq / sample_rate as f64;
    (0..n).map(|i| (w * i as f64).sin()).collect()
}

/// White Gaussian noise with unit variance.
pub fn white_noise(seed: u64, len: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Pink (1/f) noise via the Voss-McCartney/Kellet filter, roughly unit variance.
pub fn pink_noise(seed: u64, len: usize) -> Vec<f64> {
    let white = white_noise(seed, len);
    let (mut b0, mut b1, mut b2, mut b3, mut b4, mut b5, mut b6) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    let mut out = Vec::with_capacity(len);
    for w in white {
        b0 = 0.99886 * b0 + w * 0.0555179;
        b1 = 0.99332 * b1 + w * 0.0750759;
        b2 = 0.96900 * b2 + w * 0.1538520;
        b3 = 0.86650 * b3 + w * 0.3104856;
        b4 = 0.55000 * b4 + w * 0.5329522;
        b5 = -0.7616 * b5 - w * 0.0168980;
        out.push((b0 + b1 + b2 + b3 + b4 + b5 + b6 + w * 0.5362) * 0.2);
        b6 = w * 0.115926;
    }
    out
}

/// Two-pole resonator used as a formant filter.
struct Resonator {
    a1: f64,
    a2: f64,
    gain: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new(freq: f64, bandwidth: f64, sample_rate: f64) -> Self {
        let r = (-PI * bandwidth / sample_rate).exp();
        let theta = 2.0 * PI * freq / sample_rate;
        Self {
            a1: 2.0 * r * theta.cos(),
            a2: -r * r,
            gain: 1.0 - r,
            y1: 0.0,
            y2: 0.0,
        }
    }

    fn process(&mut self, x: f64) -> f64 {
        let y = self.gain * x + self.a1 * self.y1 + self.a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Speech-like babble: syllables of voiced (glottal pulse train through three
/// formant resonators) and unvoiced (noise) excitation under a syllabic
/// envelope that never drops fully to silence. Normalised to unit RMS.
pub fn synth_speech(seed: u64, duration: f64, sample_rate: u32) -> Vec<f64> {
    let fs = sample_rate as f64;
    let n = (duration * fs).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);

    let mut phase = 0.0f64;
    let mut i = 0usize;
    while i < n {
        let syl_len = ((rng.random_range(0.12..0.30)) * fs) as usize;
        let voiced = rng.random_bool(0.75);
        let f0 = rng.random_range(95.0..230.0);
        let glide = rng.random_range(-0.25..0.25);
        let formants: [f64; 3] = [
            rng.random_range(300.0..850.0),
            rng.random_range(900.0..2300.0),
            rng.random_range(2300.0..3400.0),
        ];
        let mut res: Vec<Resonator> = formants
            .iter()
            .zip([80.0, 110.0, 160.0])
            .map(|(&f, bw)| Resonator::new(f.min(0.45 * fs), bw, fs))
            .collect();
        let level = rng.random_range(0.5..1.0);
        for k in 0..syl_len.min(n - i) {
            let frac = k as f64 / syl_len as f64;
            let env = 0.25 + 0.75 * (PI * frac).sin().powi(2);
            let noise: f64 = StandardNormal.sample(&mut rng);
            let excitation = if voiced {
                let f = f0 * (1.0 + glide * frac);
                phase += f / fs;
                let pulse = if phase >= 1.0 {
                    phase -= 1.0;
                    1.0
                } else {
                    0.0
                };
                8.0 * pulse + 0.15 * noise
            } else {
                noise
            };
            let shaped: f64 = res.iter_mut().map(|r| r.process(excitation)).sum::<f64>();
            // a little direct broadband component keeps every band excited
            out.push(level * env * (shaped + 0.08 * noise));
        }
        i += syl_len;
    }
    out.truncate(n);
    normalize_rms(&mut out);
    out
}

pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

pub(crate) fn normalize_rms(x: &mut [f64]) {
    let r = rms(x);
    if r > 0.0 {
        x.iter_mut().for_each(|v| *v /= r);
    }
}
