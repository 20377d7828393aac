//! Scene assembly, chunking and on-disk dataset layout.
//!
//! Layout under the output directory:
//!
//! ```text
//! manifest.jsonl              one row per chunk
//! dataset.json                generating config and summary counts
//! scenes/scene_0000/chunk_00000.wav
//! scenes/scene_0000/chunk_00000.png
//! ```
//!
//! A scene of `D` seconds at `fps` yields `D * fps / frame_stride` chunks.
//! Chunk `i` covers audio samples `[i * stride, i * stride + clip)` and is
//! annotated with the poses at the clip centre; audio is rendered for
//! `D + clip` seconds so every chunk is complete.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{in_fov, relative_doa, AzimuthDeg, CameraIntrinsics, Pose};
use crate::io::{write_png, write_wav_stereo};
use crate::seed::derive_seed;
use crate::simulator::frame::{render_frame, FrameImage};
use crate::simulator::noise::{add_noise, NoiseConfig};
use crate::simulator::render::{
    is_active, render_binaural, render_self_speech, AcousticsConfig, ActivitySchedule, SourceSignal, StereoSignal,
};
use crate::simulator::source::synth_speech;
use crate::simulator::trajectory::{gen_trajectory, gen_wearer_trajectory, GazeParams, Trajectory, TrajectoryParams};

const PRE_ROLL_S: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Chunking {
    /// Annotation frame rate, frames per second.
    pub fps: f64,
    pub frames_per_clip: usize,
    /// One chunk every this many frames.
    pub frame_stride: usize,
}

impl Default for Chunking {
    fn default() -> Self {
        Self {
            fps: 50.0,
            frames_per_clip: 25,
            frame_stride: 2,
        }
    }
}

impl Chunking {
    fn frames_to_samples(&self, frames: usize, sample_rate: u32) -> Result<usize> {
        let exact = frames as f64 * sample_rate as f64 / self.fps;
        if (exact - exact.round()).abs() > 1e-9 || exact < 1.0 {
            return Err(Error::Config(format!(
                "{frames} frames at {} fps is not a whole number of samples at {sample_rate} Hz",
                self.fps
            )));
        }
        Ok(exact.round() as usize)
    }

    pub fn clip_samples(&self, sample_rate: u32) -> Result<usize> {
        self.frames_to_samples(self.frames_per_clip, sample_rate)
    }

    pub fn stride_samples(&self, sample_rate: u32) -> Result<usize> {
        self.frames_to_samples(self.frame_stride, sample_rate)
    }

    pub fn clip_duration(&self) -> f64 {
        self.frames_per_clip as f64 / self.fps
    }

    pub fn chunks_in(&self, duration: f64) -> usize {
        let frames = (duration * self.fps + 1e-9).floor() as usize;
        frames / self.frame_stride
    }
}

/// Everything that shapes one scene apart from its seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    /// Motion parameters for both people; `trajectory.duration` is the
    /// annotated scene length.
    pub trajectory: TrajectoryParams,
    pub gaze: GazeParams,
    pub acoustics: AcousticsConfig,
    pub noise: NoiseConfig,
    pub camera: CameraIntrinsics,
    pub chunking: Chunking,
    /// Probability that a scene contains wearer self-speech.
    pub wearer_speech_probability: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            trajectory: TrajectoryParams::default(),
            gaze: GazeParams::default(),
            acoustics: AcousticsConfig::default(),
            noise: NoiseConfig::default(),
            camera: CameraIntrinsics::default(),
            chunking: Chunking::default(),
            wearer_speech_probability: 0.0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        self.trajectory.validate()?;
        self.acoustics.validate()?;
        CameraIntrinsics::new(self.camera.horizontal_fov(), self.camera.width(), self.camera.height())?;
        self.chunking.clip_samples(self.acoustics.sample_rate)?;
        self.chunking.stride_samples(self.acoustics.sample_rate)?;
        if !(0.0..=1.0).contains(&self.wearer_speech_probability) {
            return Err(Error::Config("wearer speech probability outside [0, 1]".into()));
        }
        if let Some(snr) = self.noise.snr_db {
            if !snr.is_finite() {
                return Err(Error::Config("noise SNR must be finite or omitted".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    /// Scenes `i % 10` in 0..=7 train, 8 validate, 9 test.
    pub fn for_scene(index: usize) -> Self {
        match index % 10 {
            8 => Split::Val,
            9 => Split::Test,
            _ => Split::Train,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub index: usize,
    pub seed: u64,
    pub split: Split,
}

/// Scene list for a dataset seed: scene `i` gets an independent seed.
pub fn scene_specs(seed: u64, num_scenes: usize) -> Vec<SceneSpec> {
    (0..num_scenes)
        .map(|index| SceneSpec {
            index,
            seed: derive_seed(seed, index as u64),
            split: Split::for_scene(index),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipAnnotation {
    pub azimuth: AzimuthDeg,
    pub in_fov: bool,
    pub wearer: Pose,
    pub speaker: Pose,
    pub wearer_speaking: bool,
}

/// Two-channel audio segment (channel 0 left, channel 1 right).
#[derive(Debug, Clone, PartialEq)]
pub struct BinauralClip {
    pub left: Vec<f32>,
    pub right: Vec<f32>,
    pub sample_rate: u32,
    pub annotation: ClipAnnotation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRow {
    pub scene_id: String,
    pub scene_index: usize,
    pub chunk_index: usize,
    pub split: Split,
    pub t_start: f64,
    pub t_center: f64,
    pub t_end: f64,
    pub wearer: Pose,
    pub speaker: Pose,
    /// Ground-truth azimuth rounded to an integer degree bin.
    pub azimuth_deg: usize,
    pub in_fov: bool,
    pub wearer_speaking: bool,
    pub wav: String,
    pub png: String,
}

#[derive(Debug, Clone)]
pub struct Chunk {
    pub clip: BinauralClip,
    pub frame: FrameImage,
    pub row: ManifestRow,
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub spec: SceneSpec,
    pub chunks: Vec<Chunk>,
    /// `None` when the SNR was undefined (silent clean signal).
    pub measured_snr_db: Option<f64>,
    pub clipped_samples: usize,
}

fn self_speech_schedule(rng: &mut ChaCha8Rng, duration: f64) -> ActivitySchedule {
    let mut out = Vec::new();
    let mut t = rng.random_range(0.0..0.5);
    let mut on = rng.random_bool(0.5);
    while t < duration {
        let len = rng.random_range(0.4..1.5);
        if on {
            out.push((t, (t + len).min(duration)));
        }
        on = !on;
        t += len;
    }
    out
}

pub fn scene_id(index: usize) -> String {
    format!("scene_{index:04}")
}

/// Wearer and speaker trajectories of a scene, covering the annotated
/// duration plus one clip.
pub fn scene_trajectories(spec: &SceneSpec, cfg: &SceneConfig) -> Result<(Trajectory, Trajectory)> {
    let mut params = cfg.trajectory.clone();
    params.duration = cfg.trajectory.duration + cfg.chunking.clip_duration();
    let speaker = gen_trajectory(derive_seed(spec.seed, 1), &params)?;
    let wearer = gen_wearer_trajectory(derive_seed(spec.seed, 2), &params, &speaker, &cfg.gaze)?;
    Ok((wearer, speaker))
}

/// Generates one scene in memory.
pub fn simulate_scene(spec: &SceneSpec, cfg: &SceneConfig) -> Result<Scene> {
    cfg.validate()?;
    let fs = cfg.acoustics.sample_rate;
    let clip_len = cfg.chunking.clip_samples(fs)?;
    let stride = cfg.chunking.stride_samples(fs)?;
    let duration = cfg.trajectory.duration;
    let total = duration + cfg.chunking.clip_duration();

    let (wearer, speaker) = scene_trajectories(spec, cfg)?;

    let source = SourceSignal {
        samples: synth_speech(derive_seed(spec.seed, 3), total + PRE_ROLL_S, fs),
        sample_rate: fs,
        start_time: -PRE_ROLL_S,
    };
    let mut audio: StereoSignal = render_binaural(
        &wearer,
        &speaker,
        &source,
        &cfg.acoustics,
        total,
        derive_seed(spec.seed, 4),
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 5));
    let schedule = if rng.random_bool(cfg.wearer_speech_probability) {
        self_speech_schedule(&mut rng, total)
    } else {
        Vec::new()
    };
    if !schedule.is_empty() {
        let own = SourceSignal {
            samples: synth_speech(derive_seed(spec.seed, 6), total, fs),
            sample_rate: fs,
            start_time: 0.0,
        };
        audio.add(&render_self_speech(&own, &schedule, &cfg.acoustics, total)?);
    }

    let mixed = add_noise(&audio, &cfg.noise, derive_seed(spec.seed, 7))?;
    let mut audio = mixed.signal;
    let clipped_samples = audio.clip();

    let n_chunks = cfg.chunking.chunks_in(duration);
    let frame_seed = derive_seed(spec.seed, 8);
    let sid = scene_id(spec.index);
    let mut chunks = Vec::with_capacity(n_chunks);
    for i in 0..n_chunks {
        let start = i * stride;
        let t_start = start as f64 / fs as f64;
        let t_center = (start as f64 + clip_len as f64 / 2.0) / fs as f64;
        let t_end = (start + clip_len) as f64 / fs as f64;
        let w = wearer.pose_at(t_center);
        let s = speaker.pose_at(t_center);
        let azimuth = relative_doa(&w, &s)?;
        let bin = azimuth.bin();
        let wearer_speaking = is_active(&schedule, t_center);
        let annotation = ClipAnnotation {
            azimuth,
            in_fov: in_fov(AzimuthDeg::new(bin as f64)),
            wearer: w,
            speaker: s,
            wearer_speaking,
        };
        let clip = BinauralClip {
            left: audio.left[start..start + clip_len].iter().map(|&v| v as f32).collect(),
            right: audio.right[start..start + clip_len].iter().map(|&v| v as f32).collect(),
            sample_rate: fs,
            annotation,
        };
        let frame = render_frame(&w, &s, &cfg.camera, frame_seed);
        let stem = format!("scenes/{sid}/chunk_{i:05}");
        let row = ManifestRow {
            scene_id: sid.clone(),
            scene_index: spec.index,
            chunk_index: i,
            split: spec.split,
            t_start,
            t_center,
            t_end,
            wearer: w,
            speaker: s,
            azimuth_deg: bin,
            in_fov: clip.annotation.in_fov,
            wearer_speaking,
            wav: format!("{stem}.wav"),
            png: format!("{stem}.png"),
        };
        chunks.push(Chunk { clip, frame, row });
    }
    Ok(Scene {
        spec: *spec,
        chunks,
        measured_snr_db: mixed.measured_snr_db,
        clipped_samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSummary {
    pub scene_id: String,
    pub split: Split,
    pub chunks: usize,
    pub in_fov_chunks: usize,
    /// `null` when undefined; infinite SNR (no noise) is also written as `null`
    /// together with `noise_added = false`.
    pub measured_snr_db: Option<f64>,
    pub noise_added: bool,
    pub clipped_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub scenes: usize,
    pub chunks: usize,
    pub in_fov_fraction: f64,
    pub train_chunks: usize,
    pub val_chunks: usize,
    pub test_chunks: usize,
    pub per_scene: Vec<SceneSummary>,
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const DATASET_INFO_FILE: &str = "dataset.json";

fn write_scene(scene: &Scene, out_dir: &Path) -> Result<()> {
    let dir = out_dir.join("scenes").join(scene_id(scene.spec.index));
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for c in &scene.chunks {
        write_wav_stereo(
            &out_dir.join(&c.row.wav),
            &c.clip.left,
            &c.clip.right,
            c.clip.sample_rate,
        )?;
        write_png(&out_dir.join(&c.row.png), &c.frame)?;
    }
    Ok(())
}

/// Simulates every scene, writes audio/frames and the manifest. Scenes are
/// generated on up to `workers` threads; output is identical for any worker
/// count because each scene owns its seed and rows are written in scene order.
pub fn write_dataset(specs: &[SceneSpec], cfg: &SceneConfig, out_dir: &Path, workers: usize) -> Result<DatasetSummary> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let run = |spec: &SceneSpec| -> Result<(Vec<ManifestRow>, SceneSummary)> {
        let scene = simulate_scene(spec, cfg)?;
        write_scene(&scene, out_dir)?;
        let in_fov_chunks = scene.chunks.iter().filter(|c| c.row.in_fov).count();
        let noise_added = cfg.noise.snr_db.is_some();
        let summary = SceneSummary {
            scene_id: scene_id(spec.index),
            split: spec.split,
            chunks: scene.chunks.len(),
            in_fov_chunks,
            measured_snr_db: scene.measured_snr_db.filter(|v| v.is_finite()),
            noise_added,
            clipped_samples: scene.clipped_samples,
        };
        Ok((scene.chunks.into_iter().map(|c| c.row).collect(), summary))
    };
    let results: Vec<Result<(Vec<ManifestRow>, SceneSummary)>> = if workers <= 1 {
        specs.iter().map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        pool.install(|| specs.par_iter().map(run).collect())
    };

    let manifest_path = out_dir.join(MANIFEST_FILE);
    let file = fs::File::create(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let mut w = BufWriter::new(file);
    let mut per_scene = Vec::with_capacity(specs.len());
    for r in results {
        let (rows, summary) = r?;
        for row in rows {
            let line = serde_json::to_string(&row).map_err(|e| Error::format(&manifest_path, e.to_string()))?;
            writeln!(w, "{line}").map_err(|e| Error::io(&manifest_path, e))?;
        }
        per_scene.push(summary);
    }
    w.flush().map_err(|e| Error::io(&manifest_path, e))?;

    let count = |s: Split| {
        per_scene
            .iter()
            .filter(|p| p.split == s)
            .map(|p| p.chunks)
            .sum::<usize>()
    };
    let chunks: usize = per_scene.iter().map(|p| p.chunks).sum();
    let in_fov_total: usize = per_scene.iter().map(|p| p.in_fov_chunks).sum();
    let summary = DatasetSummary {
        scenes: specs.len(),
        chunks,
        in_fov_fraction: if chunks == 0 {
            0.0
        } else {
            in_fov_total as f64 / chunks as f64
        },
        train_chunks: count(Split::Train),
        val_chunks: count(Split::Val),
        test_chunks: count(Split::Test),
        per_scene,
    };
    let info = serde_json::json!({ "config": cfg, "specs": specs, "summary": summary });
    let info_path = out_dir.join(DATASET_INFO_FILE);
    let text = serde_json::to_string_pretty(&info).map_err(|e| Error::format(&info_path, e.to_string()))?;
    fs::write(&info_path, text + "\n").map_err(|e| Error::io(&info_path, e))?;
    Ok(summary)
}

/// Reads every row of a manifest file.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row = serde_json::from_str(&line).map_err(|e| Error::format(path, format!("line {}: {e}", n + 1)))?;
        rows.push(row);
    }
    Ok(rows)
}

/// Absolute path of a manifest-relative artifact.
pub fn artifact_path(dataset_dir: &Path, rel: &str) -> PathBuf {
    dataset_dir.join(rel)
}
