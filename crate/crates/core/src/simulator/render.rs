//! Parametric binaural renderer.
//!
//! Two microphones sit on the wearer's interaural axis. For every output
//! sample and ear the renderer solves the retarded emission time against the
//! moving speaker, reads the source there through a 4x-oversampled linear
//! interpolator (so time-varying delay produces Doppler on its own), applies
//! 1/r spreading clamped at 0.3 m, and a head-shadow one-pole low-pass whose
//! cutoff falls as the source moves to the opposite side of, or behind, that
//! ear. An optional diffuse tail of exponentially decaying noise adds
//! reverberation.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{num_complex::Complex64, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::simulator::trajectory::Trajectory;

const OVERSAMPLE: usize = 4;
const SINC_HALF_TAPS: isize = 16;
const NEAR_FIELD_CLAMP_M: f64 = 0.3;
const SHADOW_CLOSED_HZ: f64 = 500.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcousticsConfig {
    pub sample_rate: u32,
    /// Speed of sound, m/s.
    pub sound_speed: f64,
    /// Distance between the two microphones, metres.
    pub mic_spacing: f64,
    /// Head-shadow strength in `[0, 1]`; 0 renders pure delay and spreading.
    pub head_shadow: f64,
    /// Length of the diffuse reverberation tail, seconds (0 disables it).
    pub reverb_tail: f64,
    /// Energy of the tail relative to the direct path, dB.
    pub reverb_level_db: f64,
    /// RMS level of the source at 1 m, dBFS.
    pub source_level_dbfs: f64,
}

impl Default for AcousticsConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            sound_speed: 343.0,
            mic_spacing: 0.16,
            head_shadow: 1.0,
            reverb_tail: 0.0,
            reverb_level_db: -15.0,
            source_level_dbfs: -26.0,
        }
    }
}

impl AcousticsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate != 16_000 && self.sample_rate != 48_000 {
            return Err(Error::Config(format!(
                "sample rate must be 16000 or 48000, got {}",
                self.sample_rate
            )));
        }
        if !(self.mic_spacing > 0.0) || !(self.sound_speed > 0.0) {
            return Err(Error::Config("mic spacing and sound speed must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.head_shadow) {
            return Err(Error::Config("head shadow strength outside [0, 1]".into()));
        }
        if !(self.reverb_tail >= 0.0) {
            return Err(Error::Config("reverb tail must be non-negative".into()));
        }
        Ok(())
    }

    /// Largest inter-microphone delay, in samples.
    pub fn max_delay_samples(&self) -> f64 {
        self.mic_spacing / self.sound_speed * self.sample_rate as f64
    }
}

/// Mono source waveform; `samples[0]` is emitted at `start_time` seconds.
#[derive(Debug, Clone)]
pub struct SourceSignal {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub start_time: f64,
}

/// Two-channel signal, channel 0 = left ear, channel 1 = right ear.
#[derive(Debug, Clone, PartialEq)]
pub struct StereoSignal {
    pub left: Vec<f64>,
    pub right: Vec<f64>,
    pub sample_rate: u32,
}

impl StereoSignal {
    pub fn silent(len: usize, sample_rate: u32) -> Self {
        Self {
            left: vec![0.0; len],
            right: vec![0.0; len],
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.left.len()
    }

    pub fn is_empty(&self) -> bool {
        self.left.is_empty()
    }

    pub fn add(&mut self, other: &StereoSignal) {
        for (a, b) in self.left.iter_mut().zip(&other.left) {
            *a += b;
        }
        for (a, b) in self.right.iter_mut().zip(&other.right) {
            *a += b;
        }
    }

    /// Hard-clips to `[-1, 1]` and returns the number of clipped samples.
    pub fn clip(&mut self) -> usize {
        let mut n = 0;
        for v in self.left.iter_mut().chain(self.right.iter_mut()) {
            if !v.is_finite() {
                *v = 0.0;
                n += 1;
            } else if v.abs() > 1.0 {
                *v = v.signum();
                n += 1;
            }
        }
        n
    }
}

/// Band-limited 4x upsampler (Hann-windowed sinc, 32 taps per phase).
fn oversample(x: &[f64]) -> Vec<f64> {
    let taps: Vec<Vec<f64>> = (0..OVERSAMPLE)
        .map(|p| {
            let frac = p as f64 / OVERSAMPLE as f64;
            (-SINC_HALF_TAPS + 1..=SINC_HALF_TAPS)
                .map(|j| {
                    let t = frac - j as f64;
                    let sinc = if t.abs() < 1e-12 {
                        1.0
                    } else {
                        (PI * t).sin() / (PI * t)
                    };
                    let w = 0.5 + 0.5 * (PI * t / SINC_HALF_TAPS as f64).cos();
                    sinc * w
                })
                .collect()
        })
        .collect();
    let n = x.len() as isize;
    let mut out = Vec::with_capacity(x.len() * OVERSAMPLE);
    for m in 0..n {
        out.push(x[m as usize]);
        for phase in taps.iter().skip(1) {
            let mut acc = 0.0;
            for (k, j) in (-SINC_HALF_TAPS + 1..=SINC_HALF_TAPS).enumerate() {
                let idx = m + j;
                if idx >= 0 && idx < n {
                    acc += x[idx as usize] * phase[k];
                }
            }
            out.push(acc);
        }
    }
    out
}

struct FractionalReader {
    os: Vec<f64>,
    start_time: f64,
    rate: f64,
}

impl FractionalReader {
    fn new(src: &SourceSignal) -> Self {
        Self {
            os: oversample(&src.samples),
            start_time: src.start_time,
            rate: src.sample_rate as f64 * OVERSAMPLE as f64,
        }
    }

    fn read(&self, t: f64) -> f64 {
        let q = (t - self.start_time) * self.rate;
        if q < 0.0 {
            return 0.0;
        }
        let i = q.floor() as usize;
        if i + 1 >= self.os.len() {
            return 0.0;
        }
        let f = q - i as f64;
        self.os[i] * (1.0 - f) + self.os[i + 1] * f
    }
}

fn ear_positions(w: &Pose, spacing: f64) -> [[f64; 3]; 2] {
    let (rx, rz) = w.right();
    let h = spacing / 2.0;
    [[w.x - h * rx, w.y, w.z - h * rz], [w.x + h * rx, w.y, w.z + h * rz]]
}

fn dist(a: &[f64; 3], p: &Pose) -> f64 {
    let dx = p.x - a[0];
    let dy = p.y - a[1];
    let dz = p.z - a[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Shadow amount in `[0, 1]` for the left and right ear given the source
/// direction in the wearer frame.
pub fn shadow_amounts(wearer: &Pose, source: &Pose, strength: f64) -> [f64; 2] {
    let (right, _, fwd) = wearer.to_local(source.x, source.y, source.z);
    let norm = right.hypot(fwd);
    if norm < 1e-12 {
        return [0.0, 0.0];
    }
    let ur = right / norm;
    let uf = fwd / norm;
    let rear = (-uf).max(0.0);
    let lateral_left = (1.0 + ur) / 2.0;
    let lateral_right = (1.0 - ur) / 2.0;
    [
        strength * (0.7 * lateral_left + 0.5 * rear).clamp(0.0, 1.0),
        strength * (0.7 * lateral_right + 0.5 * rear).clamp(0.0, 1.0),
    ]
}

/// Renders the speaker's source at the wearer's two microphones for
/// `duration` seconds starting at trajectory time 0.
pub fn render_binaural(
    wearer: &Trajectory,
    speaker: &Trajectory,
    source: &SourceSignal,
    cfg: &AcousticsConfig,
    duration: f64,
    reverb_seed: u64,
) -> Result<StereoSignal> {
    cfg.validate()?;
    if source.sample_rate != cfg.sample_rate {
        return Err(Error::Config(format!(
            "source sample rate {} does not match the renderer's {}",
            source.sample_rate, cfg.sample_rate
        )));
    }
    let fs = cfg.sample_rate as f64;
    let n = (duration * fs).round() as usize;
    let c = cfg.sound_speed;
    let reader = FractionalReader::new(source);
    let level = 10f64.powf(cfg.source_level_dbfs / 20.0);
    let f_open = 0.45 * fs;

    let mut out = StereoSignal::silent(n, cfg.sample_rate);
    let mut lp_state = [0.0f64; 2];
    for i in 0..n {
        let t = i as f64 / fs;
        let w = wearer.pose_at(t);
        let ears = ear_positions(&w, cfg.mic_spacing);
        let spk_now = speaker.pose_at(t);
        let shadow = shadow_amounts(&w, &spk_now, cfg.head_shadow);
        for (e, ear) in ears.iter().enumerate() {
            let mut r = dist(ear, &spk_now);
            let mut te = t - r / c;
            for _ in 0..3 {
                r = dist(ear, &speaker.pose_at(te));
                te = t - r / c;
            }
            let x = reader.read(te) / r.max(NEAR_FIELD_CLAMP_M);
            let fc = f_open * (SHADOW_CLOSED_HZ / f_open).powf(shadow[e]);
            let alpha = 1.0 - (-2.0 * PI * fc / fs).exp();
            lp_state[e] += alpha * (x - lp_state[e]);
            let v = level * (1.0 - 0.5 * shadow[e]) * lp_state[e];
            if e == 0 {
                out.left[i] = v;
            } else {
                out.right[i] = v;
            }
        }
    }

    if cfg.reverb_tail > 0.0 {
        add_diffuse_tail(&mut out, cfg, reverb_seed);
    }
    Ok(out)
}

fn add_diffuse_tail(sig: &mut StereoSignal, cfg: &AcousticsConfig, seed: u64) {
    let fs = cfg.sample_rate as f64;
    let len = (cfg.reverb_tail * fs).round() as usize;
    if len == 0 {
        return;
    }
    let pre_delay = (0.005 * fs).round() as usize;
    let gain = 10f64.powf(cfg.reverb_level_db / 20.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for ch in [&mut sig.left, &mut sig.right] {
        let mut h: Vec<f64> = (0..pre_delay + len)
            .map(|k| {
                if k < pre_delay {
                    return 0.0;
                }
                let n: f64 = StandardNormal.sample(&mut rng);
                // 60 dB decay over the tail length
                n * (-6.907755 * (k - pre_delay) as f64 / len as f64).exp()
            })
            .collect();
        let energy: f64 = h.iter().map(|v| v * v).sum();
        if energy > 0.0 {
            let s = gain / energy.sqrt();
            h.iter_mut().for_each(|v| *v *= s);
        }
        let wet = fft_convolve(ch, &h);
        for (d, w) in ch.iter_mut().zip(wet) {
            *d += w;
        }
    }
}

/// Linear convolution truncated to `a.len()` samples.
pub fn fft_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return vec![0.0; a.len()];
    }
    let n = (a.len() + b.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut fa: Vec<Complex64> = a.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fa.resize(n, Complex64::new(0.0, 0.0));
    let mut fb: Vec<Complex64> = b.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fb.resize(n, Complex64::new(0.0, 0.0));
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    inv.process(&mut fa);
    fa.iter().take(a.len()).map(|v| v.re / n as f64).collect()
}

/// Time intervals (seconds) during which the wearer talks.
pub type ActivitySchedule = Vec<(f64, f64)>;

pub fn is_active(schedule: &ActivitySchedule, t: f64) -> bool {
    schedule.iter().any(|&(a, b)| t >= a && t < b)
}

/// Wearer self-speech: a near-field source equidistant from both
/// microphones, so zero ITD, 12 dB above the speaker's reference level and
/// gated by `schedule` with 20 ms raised-cosine ramps.
pub fn render_self_speech(
    source: &SourceSignal,
    schedule: &ActivitySchedule,
    cfg: &AcousticsConfig,
    duration: f64,
) -> Result<StereoSignal> {
    cfg.validate()?;
    if source.sample_rate != cfg.sample_rate {
        return Err(Error::Config("self-speech sample rate mismatch".into()));
    }
    let fs = cfg.sample_rate as f64;
    let n = (duration * fs).round() as usize;
    let level = 10f64.powf((cfg.source_level_dbfs + 12.0) / 20.0);
    let ramp = 0.02;
    let mut out = StereoSignal::silent(n, cfg.sample_rate);
    for i in 0..n {
        let t = i as f64 / fs;
        let mut g = 0.0f64;
        for &(a, b) in schedule {
            if t >= a - ramp && t < b + ramp {
                let up = ((t - (a - ramp)) / ramp).clamp(0.0, 1.0);
                let down = (((b + ramp) - t) / ramp).clamp(0.0, 1.0);
                let e = up.min(down);
                g = g.max(0.5 - 0.5 * (PI * e).cos());
            }
        }
        if g == 0.0 {
            continue;
        }
        let k = ((t - source.start_time) * fs).round();
        let v = if k >= 0.0 && (k as usize) < source.samples.len() {
            source.samples[k as usize]
        } else {
            0.0
        };
        out.left[i] = level * g * v;
        out.right[i] = level * g * v;
    }
    Ok(out)
}
