//! Separate audio-visual / audio-only training.
//!
//! Each batch is split by the in-FOV flag: in-FOV chunks go through the
//! fused classifier, the rest through the audio-only path. Both halves share
//! one summed EMD loss and one optimizer step.

use std::path::Path;

use egodoa_core::eval::{accuracy_at, mean_ae};
use egodoa_core::features::{argmax, gaussian_target};
use egodoa_core::seed::derive_seed;
use egodoa_core::{Error, Result};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::graph::Graph;
use crate::network::{
    audio_only_predict, encode_audio, encode_visual, fuse_predict, patches_to_unit, wearer_activity_logit, Model, Route,
};
use crate::optim::{clip_global_norm, Optimizer, OptimizerConfig};
use crate::params::{Gradients, Mat};

/// Seed stream for the per-epoch shuffle.
const SHUFFLE_STREAM: u64 = 0x5348_5546;

/// One training or evaluation chunk.
#[derive(Debug, Clone)]
pub struct Example {
    pub gcc: Mat,
    pub patches: Option<Array2<u8>>,
    pub in_fov: bool,
    pub azimuth: usize,
    pub wearer_speaking: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// In-FOV chunks through the fused path, the rest audio-only.
    Separate,
    /// Every chunk through the audio-only path (ablation).
    AudioOnly,
}

impl TrainMode {
    pub fn route(self, in_fov: bool) -> Route {
        match self {
            TrainMode::Separate if in_fov => Route::AudioVisual,
            _ => Route::AudioOnly,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub clip_norm: Option<f64>,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
    pub target_sigma: f64,
    pub mode: TrainMode,
    /// Weight of the wearer-activity BCE term; needs a wearer head.
    pub wearer_weight: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 512,
            optimizer: OptimizerConfig::default(),
            clip_norm: None,
            patience: 5,
            target_sigma: egodoa_core::features::DEFAULT_SIGMA,
            mode: TrainMode::Separate,
            wearer_weight: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.target_sigma > 0.0) {
            return Err(Error::Config("target_sigma must be positive".into()));
        }
        if matches!(self.clip_norm, Some(c) if !(c > 0.0)) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        if !(self.wearer_weight >= 0.0) {
            return Err(Error::Config("wearer_weight must be non-negative".into()));
        }
        self.optimizer.validate()
    }
}

/// Index sets of one batch: fused-path and audio-only-path members.
pub fn partition(batch: &[&Example], mode: TrainMode) -> (Vec<usize>, Vec<usize>) {
    let mut av = Vec::new();
    let mut ao = Vec::new();
    for (i, ex) in batch.iter().enumerate() {
        match mode.route(ex.in_fov) {
            Route::AudioVisual => av.push(i),
            Route::AudioOnly => ao.push(i),
        }
    }
    (av, ao)
}

/// Target vector as a 1 x bins row.
pub fn target_row(azimuth: usize, sigma: f64, bins: usize) -> Result<Mat> {
    let t = gaussian_target(azimuth, sigma)?;
    if t.p.len() != bins {
        return Err(Error::Shape(format!(
            "{} target bins for a {bins}-bin model",
            t.p.len()
        )));
    }
    Ok(Mat::from_shape_vec((1, bins), t.p).expect("row shape"))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    /// Summed EMD over the batch divided by the batch size, plus the
    /// weighted wearer term.
    pub loss: f64,
    pub emd_av: f64,
    pub emd_ao: f64,
    pub n_av: usize,
    pub n_ao: usize,
    pub wearer_bce: f64,
}

struct ExampleGrad {
    emd: f64,
    bce: f64,
    route: Route,
    grads: Gradients,
}

fn example_gradient(model: &Model, ex: &Example, route: Route, cfg: &TrainConfig) -> Result<ExampleGrad> {
    let target = target_row(ex.azimuth, cfg.target_sigma, model.config().bins)?;
    let mut g = Graph::new(model.params());
    let za = encode_audio(&mut g, model, &ex.gcc)?;
    let post = match route {
        Route::AudioVisual => {
            let p = ex
                .patches
                .as_ref()
                .ok_or_else(|| Error::Shape("in-FOV chunk without patches".into()))?;
            let zv = encode_visual(&mut g, model, &patches_to_unit(p))?;
            fuse_predict(&mut g, model, za, zv).posterior
        }
        Route::AudioOnly => audio_only_predict(&mut g, model, za),
    };
    let emd = g.squared_error(post, &target);
    let mut bce = 0.0;
    let loss = if cfg.wearer_weight > 0.0 {
        let z = wearer_activity_logit(&mut g, model, za)?;
        let y = Mat::from_elem((1, 1), if ex.wearer_speaking { 1.0 } else { 0.0 });
        let b = g.bce_with_logits(z, &y);
        bce = g.scalar(b);
        let wb = g.scale(b, cfg.wearer_weight);
        g.sum(&[emd, wb])
    } else {
        emd
    };
    Ok(ExampleGrad {
        emd: g.scalar(emd),
        bce,
        route,
        grads: g.backward(loss),
    })
}

/// Loss and mean gradient of one batch. Per-example gradients may be
/// computed in parallel; they are always reduced in batch order.
pub fn batch_gradients(model: &Model, batch: &[&Example], cfg: &TrainConfig) -> Result<(StepReport, Gradients)> {
    if batch.is_empty() {
        return Err(Error::Empty("training batch".into()));
    }
    let (av, ao) = partition(batch, cfg.mode);
    let routes: Vec<Route> = {
        let mut r = vec![Route::AudioOnly; batch.len()];
        for &i in &av {
            r[i] = Route::AudioVisual;
        }
        r
    };
    let n = batch.len() as f64;
    let mut report = StepReport {
        n_av: av.len(),
        n_ao: ao.len(),
        ..StepReport::default()
    };
    let mut grads = Gradients::zeros(model.params().len());
    let mut emd_sum = 0.0;
    let mut bce_sum = 0.0;
    // bounded groups keep at most a few per-example gradient sets alive
    let group = 2 * rayon::current_num_threads();
    for (exs, rts) in batch.chunks(group).zip(routes.chunks(group)) {
        let parts: Vec<Result<ExampleGrad>> = exs
            .par_iter()
            .zip(rts.par_iter())
            .map(|(ex, &route)| example_gradient(model, ex, route, cfg))
            .collect();
        for p in parts {
            let p = p?;
            match p.route {
                Route::AudioVisual => report.emd_av += p.emd,
                Route::AudioOnly => report.emd_ao += p.emd,
            }
            emd_sum += p.emd;
            bce_sum += p.bce;
            grads.merge(p.grads);
        }
    }
    grads.scale(1.0 / n);
    report.wearer_bce = bce_sum / n;
    report.loss = emd_sum / n + cfg.wearer_weight * report.wearer_bce;
    if !report.loss.is_finite() {
        return Err(Error::Numerical(format!("non-finite training loss {}", report.loss)));
    }
    Ok((report, grads))
}

/// One separate-training step: partition, forward both paths, summed EMD,
/// one optimizer update.
pub fn train_step_separate(
    model: &mut Model,
    opt: &mut Optimizer,
    batch: &[&Example],
    cfg: &TrainConfig,
) -> Result<StepReport> {
    let (report, mut grads) = batch_gradients(model, batch, cfg)?;
    if let Some(c) = cfg.clip_norm {
        clip_global_norm(&mut grads, c);
    }
    opt.step(model.params_mut(), &grads);
    if !model.params().all_finite() {
        return Err(Error::Numerical("parameters became non-finite".into()));
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub loss: f64,
    pub accuracy: f64,
    pub mean_ae: f64,
}

/// Posterior for one example under `mode` routing.
pub fn predict(model: &Model, ex: &Example, mode: TrainMode) -> Result<Vec<f64>> {
    let route = mode.route(ex.in_fov);
    match route {
        Route::AudioVisual => {
            let p = ex
                .patches
                .as_ref()
                .ok_or_else(|| Error::Shape("in-FOV chunk without patches".into()))?;
            model.posterior(&ex.gcc, Some(&patches_to_unit(p)), route)
        }
        Route::AudioOnly => model.posterior(&ex.gcc, None, route),
    }
}

/// Posteriors for many examples, in order.
pub fn predict_all(model: &Model, examples: &[Example], mode: TrainMode) -> Result<Vec<Vec<f64>>> {
    examples.par_iter().map(|ex| predict(model, ex, mode)).collect()
}

/// Mean EMD, accuracy at 2 degrees and mean AE over `examples`.
pub fn evaluate_split(model: &Model, examples: &[Example], mode: TrainMode, sigma: f64) -> Result<SplitMetrics> {
    if examples.is_empty() {
        return Err(Error::Empty("evaluation split".into()));
    }
    let posts = predict_all(model, examples, mode)?;
    let mut loss = 0.0;
    let mut preds = Vec::with_capacity(examples.len());
    let mut gts = Vec::with_capacity(examples.len());
    for (ex, p) in examples.iter().zip(&posts) {
        let t = gaussian_target(ex.azimuth, sigma)?;
        loss += crate::loss::emd_loss(&t.p, p)?;
        preds.push(argmax(p) as f64);
        gts.push(ex.azimuth as f64);
    }
    Ok(SplitMetrics {
        loss: loss / examples.len() as f64,
        accuracy: accuracy_at(&preds, &gts, 2.0)?,
        mean_ae: mean_ae(&preds, &gts)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
    pub mean_ae: f64,
}

/// Progress carried across epochs and through checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub epochs_done: usize,
    pub best_val_ae: Option<f64>,
    pub best_epoch: Option<usize>,
    pub bad_epochs: usize,
    pub stopped_early: bool,
    pub history: Vec<EpochRecord>,
}

impl TrainState {
    pub fn new() -> Self {
        Self {
            epochs_done: 0,
            best_val_ae: None,
            best_epoch: None,
            bad_epochs: 0,
            stopped_early: false,
            history: Vec::new(),
        }
    }

    pub fn finished(&self, cfg: &TrainConfig) -> bool {
        self.stopped_early || self.epochs_done >= cfg.epochs
    }

    /// Training-curve CSV text.
    /// One row per epoch; validation cells are blank without a validation split.
    pub fn history_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,train_accuracy,train_mean_ae,val_loss,val_accuracy,val_mean_ae\n");
        for r in self.history.iter().filter(|r| r.split == "train") {
            s.push_str(&format!("{},{},{},{}", r.epoch, r.loss, r.accuracy, r.mean_ae));
            match self.history.iter().find(|v| v.epoch == r.epoch && v.split == "val") {
                Some(v) => s.push_str(&format!(",{},{},{}\n", v.loss, v.accuracy, v.mean_ae)),
                None => s.push_str(",,,\n"),
            }
        }
        s
    }
}

impl Default for TrainState {
    fn default() -> Self {
        Self::new()
    }
}

/// Shuffled example order for `epoch` (1-based), a pure function of the
/// seed so a resumed run sees the same batches.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed ^ SHUFFLE_STREAM, epoch as u64));
    idx.shuffle(&mut rng);
    idx
}

pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";

/// Runs epochs until `cfg.epochs` or early stopping. With `ckpt_dir`, the
/// full state is written to `last.ckpt` after every epoch and to
/// `best.ckpt` whenever validation AE improves. `on_epoch` sees each
/// finished epoch's records.
pub fn fit(
    model: &mut Model,
    opt: &mut Optimizer,
    state: &mut TrainState,
    train: &[Example],
    val: &[Example],
    cfg: &TrainConfig,
    ckpt_dir: Option<&Path>,
    mut on_epoch: impl FnMut(&TrainState),
) -> Result<()> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training split".into()));
    }
    while !state.finished(cfg) {
        let epoch = state.epochs_done + 1;
        let order = epoch_order(train.len(), cfg.seed, epoch);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train[i]).collect();
            let r = train_step_separate(model, opt, &batch, cfg)?;
            loss_sum += r.loss * batch.len() as f64;
        }
        let tr = evaluate_split(model, train, cfg.mode, cfg.target_sigma)?;
        state.history.push(EpochRecord {
            epoch,
            split: "train".into(),
            loss: loss_sum / train.len() as f64,
            accuracy: tr.accuracy,
            mean_ae: tr.mean_ae,
        });
        let mut improved = false;
        if !val.is_empty() {
            let v = evaluate_split(model, val, cfg.mode, cfg.target_sigma)?;
            state.history.push(EpochRecord {
                epoch,
                split: "val".into(),
                loss: v.loss,
                accuracy: v.accuracy,
                mean_ae: v.mean_ae,
            });
            if state.best_val_ae.is_none_or(|b| v.mean_ae < b) {
                state.best_val_ae = Some(v.mean_ae);
                state.best_epoch = Some(epoch);
                state.bad_epochs = 0;
                improved = true;
            } else {
                state.bad_epochs += 1;
                if cfg.patience > 0 && state.bad_epochs >= cfg.patience {
                    state.stopped_early = true;
                }
            }
        } else {
            state.best_epoch = Some(epoch);
            improved = true;
        }
        state.epochs_done = epoch;
        log::info!(
            "epoch {epoch}: train loss {:.5} AE {:.2}{}",
            loss_sum / train.len() as f64,
            tr.mean_ae,
            state
                .history
                .last()
                .filter(|r| r.split == "val")
                .map(|r| format!(", val AE {:.2}", r.mean_ae))
                .unwrap_or_default()
        );
        if let Some(dir) = ckpt_dir {
            let ck = Checkpoint {
                model: model.clone(),
                optimizer: opt.clone(),
                train_config: cfg.clone(),
                state: state.clone(),
            };
            ck.save(&dir.join(LAST_CHECKPOINT))?;
            if improved {
                ck.save(&dir.join(BEST_CHECKPOINT))?;
            }
        }
        on_epoch(state);
    }
    Ok(())
}
