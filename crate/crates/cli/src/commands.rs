//! Subcommand bodies. Each reads only from earlier stages' directories and
//! writes only under its own directory below the output root.

use std::fs;
use std::path::{Path, PathBuf};

use egodoa_core::eval::{error_histogram, EvalReport};
use egodoa_core::features::{
    argmax, featurize_dataset, load_features, read_scene_config, FeaturizeStats, GccPhatFeature, SrpSteering,
    FEATURE_INFO_FILE,
};
use egodoa_core::simulator::dataset::MANIFEST_FILE;
use egodoa_core::simulator::{read_manifest, scene_specs, write_dataset, DatasetSummary, ManifestRow, Split};
use egodoa_core::{Error, Result};
use egodoa_model::train::{fit, predict_all, BEST_CHECKPOINT, LAST_CHECKPOINT};
use egodoa_model::{Checkpoint, Example, Model, Optimizer, TrainMode, TrainState};
use log::info;
use serde::{Deserialize, Serialize};

use crate::config::{mode_name, CheckpointChoice, RunConfig};

pub const TRAIN_LOG_FILE: &str = "log.csv";
pub const EVAL_JSON_FILE: &str = "report.json";
pub const EVAL_CSV_FILE: &str = "report.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const SRP_METHOD: &str = "srp_phat";
pub const CURVE_FILE: &str = "training_curve.csv";
pub const POSTERIOR_FILE: &str = "posterior_examples.csv";

fn posterior_file(method: &str) -> String {
    format!("posteriors_{method}.csv")
}

fn histogram_file(method: &str) -> String {
    format!("histogram_{method}.csv")
}

fn missing(path: &Path, what: &str) -> Error {
    Error::io(
        path,
        std::io::Error::new(std::io::ErrorKind::NotFound, what.to_string()),
    )
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(missing(path, what))
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::format(path, e.to_string())
}

/// Runs `f` on a pool of `workers` threads.
fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    Ok(pool.install(f))
}

pub fn simulate(cfg: &RunConfig) -> Result<DatasetSummary> {
    let out = cfg.dataset_dir();
    let specs = scene_specs(cfg.seed, cfg.simulate.scenes);
    let summary = write_dataset(&specs, &cfg.simulate.scene, &out, cfg.workers)?;
    cfg.write_effective(&out)?;
    info!(
        "simulated {} scenes, {} chunks (train {}, val {}, test {}), in-FOV fraction {:.4}",
        summary.scenes,
        summary.chunks,
        summary.train_chunks,
        summary.val_chunks,
        summary.test_chunks,
        summary.in_fov_fraction
    );
    Ok(summary)
}

pub fn featurize(cfg: &RunConfig) -> Result<FeaturizeStats> {
    let data = cfg.dataset_dir();
    require(&data.join(MANIFEST_FILE), "dataset manifest missing; run simulate")?;
    let out = cfg.features_dir();
    let stats = featurize_dataset(&data, &out, &cfg.featurize.features, cfg.workers, cfg.featurize.strict)?;
    cfg.write_effective(&out)?;
    Ok(stats)
}

/// Manifest rows of one split, with examples built from cached features.
/// Patches are kept only for in-FOV chunks when `visual` is set.
pub fn load_split(cfg: &RunConfig, split: Split, visual: bool) -> Result<(Vec<ManifestRow>, Vec<Example>)> {
    let data = cfg.dataset_dir();
    let rows: Vec<ManifestRow> = read_manifest(&data.join(MANIFEST_FILE))?
        .into_iter()
        .filter(|r| r.split == split)
        .collect();
    let feats = load_features(&data, &cfg.features_dir(), &cfg.featurize.features, &rows)?;
    let examples = rows
        .iter()
        .zip(feats)
        .map(|(r, f)| Example {
            gcc: f.gcc.mapv(|v| v as f64),
            patches: (visual && r.in_fov).then_some(f.patches),
            in_fov: r.in_fov,
            azimuth: r.azimuth_deg,
            wearer_speaking: r.wearer_speaking,
        })
        .collect();
    Ok((rows, examples))
}

fn check_stage_inputs(cfg: &RunConfig) -> Result<()> {
    require(
        &cfg.dataset_dir().join(MANIFEST_FILE),
        "dataset manifest missing; run simulate",
    )?;
    require(
        &cfg.features_dir().join(FEATURE_INFO_FILE),
        "feature cache missing; run featurize",
    )
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub mode: TrainMode,
    pub dir: PathBuf,
    pub state: TrainState,
}

pub fn train(cfg: &RunConfig) -> Result<Vec<TrainOutcome>> {
    check_stage_inputs(cfg)?;
    if cfg.train.variants.is_empty() {
        return Err(Error::Config("train.variants is empty; nothing to train".into()));
    }
    let mut out = Vec::new();
    for &mode in &cfg.train.variants {
        out.push(train_variant(cfg, mode)?);
    }
    Ok(out)
}

fn train_variant(cfg: &RunConfig, mode: TrainMode) -> Result<TrainOutcome> {
    let visual = mode == TrainMode::Separate;
    let (_, train) = load_split(cfg, Split::Train, visual)?;
    let (_, val) = load_split(cfg, Split::Val, visual)?;
    let first = train.first().ok_or_else(|| Error::Empty("training split".into()))?;
    let mut mc = cfg.train.model.clone();
    mc.audio_len = first.gcc.nrows();
    mc.audio_dim = first.gcc.ncols();
    if let Some(p) = train.iter().find_map(|e| e.patches.as_ref()) {
        mc.visual_len = p.nrows();
        mc.visual_dim = p.ncols();
    }
    let mut tc = cfg.train.train.clone();
    tc.mode = mode;

    let dir = cfg.train_dir(mode);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    cfg.write_effective(&dir)?;
    let last = dir.join(LAST_CHECKPOINT);
    let (mut model, mut opt, mut state) = if cfg.train.resume && last.exists() {
        let ck = Checkpoint::load(&last)?;
        if ck.model.config() != &mc {
            return Err(Error::Config(format!(
                "{}: model config differs from the run config",
                last.display()
            )));
        }
        let mut saved = ck.train_config.clone();
        saved.epochs = tc.epochs;
        if saved != tc {
            return Err(Error::Config(format!(
                "{}: training config differs from the run config",
                last.display()
            )));
        }
        info!("{}: resuming after epoch {}", mode_name(mode), ck.state.epochs_done);
        (ck.model, ck.optimizer, ck.state)
    } else {
        let model = Model::new(mc)?;
        let opt = Optimizer::new(tc.optimizer.clone(), model.params())?;
        (model, opt, TrainState::new())
    };
    info!(
        "{}: {} train / {} val chunks, {} parameters",
        mode_name(mode),
        train.len(),
        val.len(),
        model.params().scalar_count()
    );
    let log_path = dir.join(TRAIN_LOG_FILE);
    let mut log_err = None;
    let res = with_pool(cfg.workers, || {
        fit(&mut model, &mut opt, &mut state, &train, &val, &tc, Some(&dir), |s| {
            if let Err(e) = write_text(&log_path, &s.history_csv()) {
                log_err.get_or_insert(e);
            }
        })
    })?;
    if let Err(e) = res {
        if matches!(e, Error::Numerical(_)) {
            return Err(Error::Numerical(format!(
                "{} training diverged after epoch {}: {e}",
                mode_name(mode),
                state.epochs_done
            )));
        }
        return Err(e);
    }
    if let Some(e) = log_err {
        return Err(e);
    }
    write_text(&log_path, &state.history_csv())?;
    Ok(TrainOutcome { mode, dir, state })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub threshold_deg: f64,
    pub test_chunks: usize,
    pub checkpoint: CheckpointChoice,
    pub methods: Vec<EvalReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PredictionRow {
    method: String,
    scene_id: String,
    chunk_index: usize,
    in_fov: bool,
    gt_deg: usize,
    pred_deg: f64,
}

pub fn evaluate(cfg: &RunConfig) -> Result<EvalSummary> {
    check_stage_inputs(cfg)?;
    let ckpt_name = match cfg.evaluate.checkpoint {
        CheckpointChoice::Best => BEST_CHECKPOINT,
        CheckpointChoice::Last => LAST_CHECKPOINT,
    };
    for &mode in &cfg.train.variants {
        require(&cfg.train_dir(mode).join(ckpt_name), "checkpoint missing; run train")?;
    }
    let (rows, test) = load_split(cfg, Split::Test, true)?;
    if test.is_empty() {
        return Err(Error::Empty("test split".into()));
    }
    let gts: Vec<f64> = test.iter().map(|e| e.azimuth as f64).collect();
    let fov: Vec<bool> = test.iter().map(|e| e.in_fov).collect();
    let thr = cfg.evaluate.threshold_deg;
    let out = cfg.eval_dir();
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;

    let mut methods = Vec::new();
    let mut predictions: Vec<(String, Vec<f64>)> = Vec::new();
    for &mode in &cfg.train.variants {
        let name = mode_name(mode);
        let ck = Checkpoint::load(&cfg.train_dir(mode).join(ckpt_name))?;
        let posts = with_pool(cfg.workers, || predict_all(&ck.model, &test, mode))??;
        let preds: Vec<f64> = posts.iter().map(|p| argmax(p) as f64).collect();
        write_posteriors(&out.join(posterior_file(name)), &rows, &posts)?;
        let r = EvalReport::compute(name, &preds, &gts, &fov, thr)?;
        info!(
            "{name}: overall AE {:?}, in-FOV {:?}, out-of-FOV {:?}",
            r.overall.mean_ae, r.in_fov.mean_ae, r.out_of_fov.mean_ae
        );
        methods.push(r);
        predictions.push((name.to_string(), preds));
    }
    if cfg.evaluate.srp_baseline {
        let acoustics = read_scene_config(&cfg.dataset_dir())?.acoustics;
        let steering = SrpSteering::new(&acoustics, cfg.featurize.features.n_lags);
        let preds: Vec<f64> = test
            .iter()
            .map(|e| steering.estimate(&GccPhatFeature { data: e.gcc.clone() }).azimuth.deg())
            .collect();
        let r = EvalReport::compute(SRP_METHOD, &preds, &gts, &fov, thr)?;
        info!(
            "{SRP_METHOD}: overall AE {:?}, in-FOV {:?}, out-of-FOV {:?}",
            r.overall.mean_ae, r.in_fov.mean_ae, r.out_of_fov.mean_ae
        );
        methods.push(r);
        predictions.push((SRP_METHOD.to_string(), preds));
    }

    let summary = EvalSummary {
        threshold_deg: thr,
        test_chunks: test.len(),
        checkpoint: cfg.evaluate.checkpoint,
        methods,
    };
    let json = serde_json::to_string_pretty(&summary).expect("report serializes");
    write_text(&out.join(EVAL_JSON_FILE), &(json + "\n"))?;

    let csv_path = out.join(EVAL_CSV_FILE);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "subset", "count", "accuracy", "mean_ae"])
        .map_err(csv_err(&csv_path))?;
    for m in &summary.methods {
        for r in m.csv_rows() {
            w.write_record(&r).map_err(csv_err(&csv_path))?;
        }
    }
    write_text(
        &csv_path,
        &String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8"),
    )?;

    let pred_path = out.join(PREDICTIONS_FILE);
    let mut w = csv::Writer::from_writer(Vec::new());
    for (name, preds) in &predictions {
        for (row, p) in rows.iter().zip(preds) {
            w.serialize(PredictionRow {
                method: name.clone(),
                scene_id: row.scene_id.clone(),
                chunk_index: row.chunk_index,
                in_fov: row.in_fov,
                gt_deg: row.azimuth_deg,
                pred_deg: *p,
            })
            .map_err(csv_err(&pred_path))?;
        }
    }
    write_text(
        &pred_path,
        &String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8"),
    )?;
    cfg.write_effective(&out)?;
    Ok(summary)
}

fn posterior_header(n: usize) -> Vec<String> {
    let mut h: Vec<String> = ["scene_id", "chunk_index", "in_fov", "gt_deg", "pred_deg"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((0..n).map(|b| format!("p{b}")));
    h
}

fn write_posteriors(path: &Path, rows: &[ManifestRow], posts: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let n = posts.first().map_or(0, Vec::len);
    w.write_record(posterior_header(n)).map_err(csv_err(path))?;
    for (row, p) in rows.iter().zip(posts) {
        let mut rec = vec![
            row.scene_id.clone(),
            row.chunk_index.to_string(),
            row.in_fov.to_string(),
            row.azimuth_deg.to_string(),
            argmax(p).to_string(),
        ];
        rec.extend(p.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err(path))?;
    }
    write_text(
        path,
        &String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8"),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOutput {
    pub files: Vec<PathBuf>,
}

pub fn report(cfg: &RunConfig) -> Result<ReportOutput> {
    let eval = cfg.eval_dir();
    let pred_path = eval.join(PREDICTIONS_FILE);
    require(&pred_path, "predictions missing; run evaluate")?;
    for &mode in &cfg.train.variants {
        require(
            &eval.join(posterior_file(mode_name(mode))),
            "posteriors missing; run evaluate",
        )?;
        require(
            &cfg.train_dir(mode).join(TRAIN_LOG_FILE),
            "training log missing; run train",
        )?;
    }
    let out = cfg.report_dir();
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut files = Vec::new();

    // error histograms, one file per method
    let mut rd = csv::Reader::from_path(&pred_path).map_err(csv_err(&pred_path))?;
    let mut by_method: Vec<(String, Vec<f64>, Vec<f64>)> = Vec::new();
    for rec in rd.deserialize::<PredictionRow>() {
        let r = rec.map_err(csv_err(&pred_path))?;
        if by_method.last().is_none_or(|m| m.0 != r.method) {
            by_method.push((r.method.clone(), Vec::new(), Vec::new()));
        }
        let m = by_method.last_mut().expect("pushed above");
        m.1.push(r.pred_deg);
        m.2.push(r.gt_deg as f64);
    }
    for (method, preds, gts) in &by_method {
        let h = error_histogram(preds, gts)?;
        let path = out.join(histogram_file(method));
        let mut w = csv::Writer::from_writer(Vec::new());
        for b in h.populated() {
            w.serialize(b).map_err(csv_err(&path))?;
        }
        let bytes = w.into_inner().expect("in-memory writer");
        let text = if bytes.is_empty() {
            "gt_bin_deg,mean_ae_deg,count\n".to_string()
        } else {
            String::from_utf8(bytes).expect("utf-8")
        };
        write_text(&path, &text)?;
        files.push(path);
    }

    // posterior examples, alternating in-FOV and out-of-FOV chunks
    let path = out.join(POSTERIOR_FILE);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header_done = false;
    for &mode in &cfg.train.variants {
        let method = mode_name(mode);
        let src = eval.join(posterior_file(method));
        let mut rd = csv::Reader::from_path(&src).map_err(csv_err(&src))?;
        if !header_done {
            let mut h = vec!["method".to_string()];
            h.extend(rd.headers().map_err(csv_err(&src))?.iter().map(str::to_string));
            w.write_record(&h).map_err(csv_err(&path))?;
            header_done = true;
        }
        let recs: Vec<csv::StringRecord> = rd
            .records()
            .collect::<std::result::Result<_, _>>()
            .map_err(csv_err(&src))?;
        let inside: Vec<&csv::StringRecord> = recs.iter().filter(|r| &r[2] == "true").collect();
        let outside: Vec<&csv::StringRecord> = recs.iter().filter(|r| &r[2] != "true").collect();
        let mut picked = Vec::new();
        let (mut i, mut o) = (0, 0);
        while picked.len() < cfg.report.posterior_examples && (i < inside.len() || o < outside.len()) {
            let take_inside = (picked.len() % 2 == 0 && i < inside.len()) || o >= outside.len();
            if take_inside {
                picked.push(inside[i]);
                i += 1;
            } else {
                picked.push(outside[o]);
                o += 1;
            }
        }
        for r in picked {
            let mut rec = vec![method.to_string()];
            rec.extend(r.iter().map(str::to_string));
            w.write_record(&rec).map_err(csv_err(&path))?;
        }
    }
    write_text(
        &path,
        &String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8"),
    )?;
    files.push(path);

    // training curves of every variant
    let path = out.join(CURVE_FILE);
    let mut text =
        String::from("variant,epoch,train_loss,train_accuracy,train_mean_ae,val_loss,val_accuracy,val_mean_ae\n");
    for &mode in &cfg.train.variants {
        let src = cfg.train_dir(mode).join(TRAIN_LOG_FILE);
        let log = fs::read_to_string(&src).map_err(|e| Error::io(&src, e))?;
        for line in log.lines().skip(1).filter(|l| !l.is_empty()) {
            text.push_str(mode_name(mode));
            text.push(',');
            text.push_str(line);
            text.push('\n');
        }
    }
    write_text(&path, &text)?;
    files.push(path);
    cfg.write_effective(&out)?;
    Ok(ReportOutput { files })
}
