//! Audio and visual features: STFT, GCC-PHAT, SRP-PHAT, patches, targets,
//! and the on-disk feature cache.

pub mod cache;
pub mod gcc;
pub mod patch;
pub mod srp;
pub mod stft;
pub mod target;

use std::fs;
use std::path::Path;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_png, read_wav_stereo};
use crate::simulator::dataset::{read_manifest, ManifestRow, SceneConfig, DATASET_INFO_FILE, MANIFEST_FILE};
use crate::simulator::frame::FrameImage;

pub use cache::{ChunkFeatures, FeatureCache, Lookup};
pub use gcc::{gcc_phat, GccPhat, GccPhatFeature};
pub use patch::{patchify, unpatchify, PatchSequence};
pub use srp::{srp_phat_doa, SrpEstimate, SrpSteering};
pub use stft::{stft, Stft, StftFrames};
pub use target::{argmax, gaussian_target, DoaTarget, DEFAULT_SIGMA, N_BINS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub window: usize,
    pub hop: usize,
    pub n_lags: usize,
    pub patch: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            window: stft::DEFAULT_WINDOW,
            hop: stft::DEFAULT_HOP,
            n_lags: gcc::DEFAULT_LAGS,
            patch: patch::DEFAULT_PATCH,
        }
    }
}

/// Reusable plans for per-chunk feature extraction.
pub struct FeatureExtractor {
    cfg: FeatureConfig,
    stft: Stft,
    gcc: GccPhat,
}

impl FeatureExtractor {
    pub fn new(cfg: &FeatureConfig) -> Result<Self> {
        Ok(Self {
            cfg: cfg.clone(),
            stft: Stft::new(cfg.window, cfg.hop)?,
            gcc: GccPhat::new(cfg.window, cfg.n_lags)?,
        })
    }

    pub fn gcc(&self, left: &[f32], right: &[f32]) -> Result<GccPhatFeature> {
        let l: Vec<f64> = left.iter().map(|&v| v as f64).collect();
        let r: Vec<f64> = right.iter().map(|&v| v as f64).collect();
        self.gcc.process(&self.stft.process(&l)?, &self.stft.process(&r)?)
    }

    pub fn extract(&self, left: &[f32], right: &[f32], frame: &FrameImage) -> Result<ChunkFeatures> {
        let g = self.gcc(left, right)?;
        Ok(ChunkFeatures {
            gcc: g.data.mapv(|v| v as f32),
            patches: patchify(frame, self.cfg.patch)?.data,
        })
    }
}

/// Reads the generating config of a dataset directory.
pub fn read_scene_config(dataset_dir: &Path) -> Result<SceneConfig> {
    let path = dataset_dir.join(DATASET_INFO_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    serde_json::from_value(v["config"].clone()).map_err(|e| Error::format(&path, e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturizeStats {
    pub computed: usize,
    pub reused: usize,
    pub stale: usize,
    pub gcc_shape: [usize; 2],
    pub patch_shape: [usize; 2],
    pub config_hash: String,
}

pub const FEATURE_INFO_FILE: &str = "features.json";

/// Computes (or reuses) features for every chunk of a dataset. Entries whose
/// header hash differs from the current config are recomputed, or rejected
/// with [`Error::Cache`] when `strict` is set.
pub fn featurize_dataset(
    dataset_dir: &Path,
    cache_dir: &Path,
    cfg: &FeatureConfig,
    workers: usize,
    strict: bool,
) -> Result<FeaturizeStats> {
    let scene_cfg = read_scene_config(dataset_dir)?;
    let rows = read_manifest(&dataset_dir.join(MANIFEST_FILE))?;
    let hash = cache::config_hash(cfg, scene_cfg.acoustics.sample_rate);
    let cache = FeatureCache::new(cache_dir, hash.clone());
    let extractor = FeatureExtractor::new(cfg)?;
    fs::create_dir_all(cache_dir).map_err(|e| Error::io(cache_dir, e))?;

    #[derive(Clone, Copy)]
    enum Outcome {
        Reused([usize; 2], [usize; 2]),
        Computed([usize; 2], [usize; 2], bool),
    }
    let one = |row: &ManifestRow| -> Result<Outcome> {
        let stale = match cache.lookup(&row.wav)? {
            Lookup::Hit(f) => return Ok(Outcome::Reused(shape(&f.gcc), shape(&f.patches))),
            Lookup::Missing => false,
            Lookup::Stale { found } => {
                if strict {
                    return Err(Error::Cache(format!(
                        "{} was built with config {found}, current is {}",
                        cache.path_for(&row.wav).display(),
                        cache.hash()
                    )));
                }
                true
            }
        };
        let (l, r, sr) = read_wav_stereo(&dataset_dir.join(&row.wav))?;
        if sr != scene_cfg.acoustics.sample_rate {
            return Err(Error::format(
                dataset_dir.join(&row.wav),
                "sample rate differs from dataset config",
            ));
        }
        let frame = read_png(&dataset_dir.join(&row.png))?;
        let f = extractor.extract(&l, &r, &frame)?;
        cache.store(&row.wav, &f)?;
        Ok(Outcome::Computed(shape(&f.gcc), shape(&f.patches), stale))
    };
    let results: Vec<Result<Outcome>> = if workers <= 1 {
        rows.iter().map(one).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        pool.install(|| rows.par_iter().map(one).collect())
    };
    let mut stats = FeaturizeStats {
        computed: 0,
        reused: 0,
        stale: 0,
        gcc_shape: [0, 0],
        patch_shape: [0, 0],
        config_hash: hash,
    };
    for r in results {
        match r? {
            Outcome::Reused(g, p) => {
                stats.reused += 1;
                stats.gcc_shape = g;
                stats.patch_shape = p;
            }
            Outcome::Computed(g, p, stale) => {
                stats.computed += 1;
                stats.stale += stale as usize;
                stats.gcc_shape = g;
                stats.patch_shape = p;
            }
        }
    }
    info!(
        "features: {} computed, {} reused ({} stale); gcc {:?}, patches {:?}",
        stats.computed, stats.reused, stats.stale, stats.gcc_shape, stats.patch_shape
    );
    let info_path = cache_dir.join(FEATURE_INFO_FILE);
    let info = serde_json::json!({ "config": cfg, "config_hash": stats.config_hash, "chunks": rows.len(),
        "gcc_shape": stats.gcc_shape, "patch_shape": stats.patch_shape,
        "lag_convention": cache::LAG_CONVENTION, "patch_layout": cache::PATCH_LAYOUT });
    let text = serde_json::to_string_pretty(&info).map_err(|e| Error::format(&info_path, e.to_string()))?;
    fs::write(&info_path, text + "\n").map_err(|e| Error::io(&info_path, e))?;
    Ok(stats)
}

fn shape<T>(a: &ndarray::Array2<T>) -> [usize; 2] {
    [a.nrows(), a.ncols()]
}

/// Loads cached features for `rows`, in order. Every entry must exist and
/// match the current config hash.
pub fn load_features(
    dataset_dir: &Path,
    cache_dir: &Path,
    cfg: &FeatureConfig,
    rows: &[ManifestRow],
) -> Result<Vec<ChunkFeatures>> {
    let scene_cfg = read_scene_config(dataset_dir)?;
    let cache = FeatureCache::new(cache_dir, cache::config_hash(cfg, scene_cfg.acoustics.sample_rate));
    rows.iter()
        .map(|row| match cache.lookup(&row.wav)? {
            Lookup::Hit(f) => Ok(f),
            Lookup::Missing => Err(Error::io(
                cache.path_for(&row.wav),
                std::io::Error::new(std::io::ErrorKind::NotFound, "feature file missing; run featurize"),
            )),
            Lookup::Stale { found } => Err(Error::Cache(format!(
                "{} is stale (hash {found}); re-run featurize",
                cache.path_for(&row.wav).display()
            ))),
        })
        .collect()
}
