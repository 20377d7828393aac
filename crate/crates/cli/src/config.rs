//! Run configuration: presets, file loading (TOML or JSON), flag overrides.

use std::fs;
use std::path::{Path, PathBuf};

use egodoa_core::features::FeatureConfig;
use egodoa_core::seed::derive_seed;
use egodoa_core::simulator::SceneConfig;
use egodoa_core::{Error, Result};
use egodoa_model::{ModelConfig, OptimizerConfig, TrainConfig, TrainMode};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Environment variable that overrides `paths.out_dir`.
pub const OUT_ENV: &str = "EGODOA_OUT";

/// Name of the merged config written next to every stage's outputs.
pub const EFFECTIVE_CONFIG_FILE: &str = "effective_config.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Paper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Root under which every subcommand writes.
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub scenes: usize,
    pub scene: SceneConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeaturizeSection {
    pub features: FeatureConfig,
    /// Fail on stale cache entries instead of recomputing them.
    pub strict: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    /// Each variant is trained into its own directory under `train/`. An
    /// empty list leaves only the SRP-PHAT baseline for `evaluate`.
    pub variants: Vec<TrainMode>,
    /// Continue from `last.ckpt` when present.
    pub resume: bool,
    /// `model.seed` and `train.seed` are derived from the global seed.
    pub model: ModelConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointChoice {
    Best,
    Last,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateSection {
    pub checkpoint: CheckpointChoice,
    pub srp_baseline: bool,
    pub threshold_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSection {
    /// Test chunks per method in the posterior-example CSV.
    pub posterior_examples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub seed: u64,
    /// Worker threads for simulate, featurize and training; 1 is the
    /// deterministic single-threaded mode.
    pub workers: usize,
    pub paths: Paths,
    pub simulate: SimulateSection,
    pub featurize: FeaturizeSection,
    pub train: TrainSection,
    pub evaluate: EvaluateSection,
    pub report: ReportSection,
}

/// Values given on the command line; `None` leaves the file value alone.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub preset: Option<Preset>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Desk => desk(),
            Preset::Paper => paper(),
        }
    }

    /// Preset defaults, then the file (if any), then flags, then `EGODOA_OUT`.
    pub fn load(path: Option<&Path>, ov: &Overrides) -> Result<Self> {
        let file = match path {
            Some(p) => Some(read_value(p)?),
            None => None,
        };
        let file_preset = match file.as_ref().and_then(|v| v.get("preset")) {
            Some(v) => {
                Some(serde_json::from_value::<Preset>(v.clone()).map_err(|e| Error::Config(format!("preset: {e}")))?)
            }
            None => None,
        };
        let preset = ov.preset.or(file_preset).unwrap_or(Preset::Desk);
        let mut merged = serde_json::to_value(Self::preset(preset)).expect("config serializes");
        if let Some(f) = file {
            merge(&mut merged, f, "")?;
        }
        let mut cfg: RunConfig = serde_json::from_value(merged).map_err(|e| Error::Config(e.to_string()))?;
        cfg.preset = preset;
        if let Some(s) = ov.seed {
            cfg.seed = s;
        }
        if let Some(w) = ov.workers {
            cfg.workers = w;
        }
        if let Some(o) = &ov.out_dir {
            cfg.paths.out_dir = o.clone();
        }
        cfg.resolve_seeds();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `EGODOA_OUT` if set.
    pub fn with_env(mut self) -> Self {
        if let Some(v) = std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()) {
            self.paths.out_dir = PathBuf::from(v);
        }
        self
    }

    pub fn resolve_seeds(&mut self) {
        self.train.model.seed = derive_seed(self.seed, 0x4d4f_4445);
        self.train.train.seed = derive_seed(self.seed, 0x5452_4e00);
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.simulate.scenes == 0 {
            return Err(Error::Config("simulate.scenes must be positive".into()));
        }
        if self.paths.out_dir.as_os_str().is_empty() {
            return Err(Error::Config("paths.out_dir is empty".into()));
        }
        if self.paths.out_dir.is_file() {
            return Err(Error::Config(format!(
                "output root {} is a file",
                self.paths.out_dir.display()
            )));
        }
        let v = &self.train.variants;
        if v.iter().enumerate().any(|(i, m)| v[..i].contains(m)) {
            return Err(Error::Config("train.variants lists a mode twice".into()));
        }
        if !(self.evaluate.threshold_deg > 0.0) {
            return Err(Error::Config("evaluate.threshold_deg must be positive".into()));
        }
        self.simulate.scene.validate()?;
        self.train.model.validate()?;
        self.train.train.validate()
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.paths.out_dir.join("dataset")
    }

    pub fn features_dir(&self) -> PathBuf {
        self.paths.out_dir.join("features")
    }

    pub fn train_dir(&self, mode: TrainMode) -> PathBuf {
        self.paths.out_dir.join("train").join(mode_name(mode))
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.paths.out_dir.join("eval")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.paths.out_dir.join("report")
    }

    /// Writes the merged config into `dir`.
    pub fn write_effective(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(EFFECTIVE_CONFIG_FILE);
        let text = serde_json::to_string_pretty(self).expect("config serializes");
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }
}

pub fn mode_name(mode: TrainMode) -> &'static str {
    match mode {
        TrainMode::Separate => "audio_visual",
        TrainMode::AudioOnly => "audio_only",
    }
}

fn read_value(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let parsed = if is_json {
        serde_json::from_str::<Value>(&text).map_err(|e| e.to_string())
    } else {
        toml::from_str::<toml::Value>(&text)
            .map_err(|e| e.to_string())
            .and_then(|t| serde_json::to_value(t).map_err(|e| e.to_string()))
    };
    let v = parsed.map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if !v.is_object() {
        return Err(Error::Config(format!("{}: top level must be a table", path.display())));
    }
    Ok(v)
}

/// Recursive merge of `src` into `dst`. Keys missing from `dst` are copied
/// over and left for deserialization to reject if unknown. A table replaces a
/// tagged enum wholesale when the tag changes.
fn merge(dst: &mut Value, src: Value, at: &str) -> Result<()> {
    match (dst, src) {
        (Value::Object(d), Value::Object(s)) => {
            let retag = matches!((d.get("kind"), s.get("kind")), (Some(a), Some(b)) if a != b);
            if retag {
                d.clear();
            }
            for (k, v) in s {
                let path = if at.is_empty() { k.clone() } else { format!("{at}.{k}") };
                match d.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v, &path)?,
                    Some(slot) => *slot = v,
                    None => {
                        d.insert(k, v);
                    }
                }
            }
            Ok(())
        }
        (d, s) => {
            *d = s;
            Ok(())
        }
    }
}

fn desk() -> RunConfig {
    let mut scene = SceneConfig::default();
    scene.trajectory.duration = DESK_SCENE_SECONDS;
    scene.noise.snr_db = Some(DESK_SNR_DB);
    scene.acoustics.reverb_tail = DESK_REVERB_TAIL;
    scene.gaze.attend_probability = DESK_ATTEND_PROBABILITY;
    RunConfig {
        preset: Preset::Desk,
        seed: 0,
        workers: 1,
        paths: Paths {
            out_dir: PathBuf::from("runs/desk"),
        },
        simulate: SimulateSection {
            scenes: DESK_SCENES,
            scene,
        },
        featurize: FeaturizeSection {
            features: FeatureConfig::default(),
            strict: false,
        },
        train: TrainSection {
            variants: vec![TrainMode::Separate, TrainMode::AudioOnly],
            resume: false,
            model: ModelConfig {
                hidden: 64,
                ff: 128,
                ..ModelConfig::default()
            },
            train: TrainConfig {
                epochs: DESK_EPOCHS,
                batch_size: 64,
                optimizer: OptimizerConfig::adam(DESK_LR),
                patience: 0,
                ..TrainConfig::default()
            },
        },
        evaluate: EvaluateSection {
            checkpoint: CheckpointChoice::Best,
            srp_baseline: true,
            threshold_deg: 2.0,
        },
        report: ReportSection { posterior_examples: 2 },
    }
}

/// One chunk per scene: 2000 chunks from 2000 independent geometries.
pub const DESK_SCENES: usize = 2000;
pub const DESK_SCENE_SECONDS: f64 = 0.04;
/// Lower than the default so that roughly two thirds of chunks fall outside the view.
pub const DESK_ATTEND_PROBABILITY: f64 = 0.4;
pub const DESK_SNR_DB: f64 = 10.0;
pub const DESK_REVERB_TAIL: f64 = 0.3;
pub const DESK_EPOCHS: usize = 12;
pub const DESK_LR: f64 = 1e-3;

fn paper() -> RunConfig {
    let mut scene = SceneConfig::default();
    scene.acoustics.sample_rate = 48_000;
    scene.trajectory.duration = 60.0;
    scene.noise.snr_db = Some(10.0);
    scene.acoustics.reverb_tail = 0.3;
    scene.wearer_speech_probability = 0.5;
    RunConfig {
        preset: Preset::Paper,
        seed: 0,
        workers: 1,
        paths: Paths {
            out_dir: PathBuf::from("runs/paper"),
        },
        simulate: SimulateSection { scenes: 307, scene },
        featurize: FeaturizeSection {
            features: FeatureConfig::default(),
            strict: false,
        },
        train: TrainSection {
            variants: vec![TrainMode::Separate, TrainMode::AudioOnly],
            resume: false,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        },
        evaluate: EvaluateSection {
            checkpoint: CheckpointChoice::Best,
            srp_baseline: true,
            threshold_deg: 2.0,
        },
        report: ReportSection { posterior_examples: 2 },
    }
}
