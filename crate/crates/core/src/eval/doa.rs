//! Single-speaker DOA metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{cyclic_abs_error, AzimuthDeg};

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    c: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.c
    }
}

fn check(preds: &[f64], gts: &[f64]) -> Result<()> {
    if preds.len() != gts.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} ground truths",
            preds.len(),
            gts.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Empty("no predictions to score".into()));
    }
    Ok(())
}

/// Percentage of predictions whose cyclic error is strictly below `threshold`.
pub fn accuracy_at(preds: &[f64], gts: &[f64], threshold: f64) -> Result<f64> {
    check(preds, gts)?;
    let hits = preds
        .iter()
        .zip(gts)
        .filter(|(p, g)| cyclic_abs_error(**p, **g) < threshold)
        .count();
    Ok(100.0 * hits as f64 / preds.len() as f64)
}

pub fn mean_ae(preds: &[f64], gts: &[f64]) -> Result<f64> {
    check(preds, gts)?;
    let mut s = CompensatedSum::default();
    for (p, g) in preds.iter().zip(gts) {
        s.add(cyclic_abs_error(*p, *g));
    }
    Ok(s.value() / preds.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubMetrics {
    pub count: usize,
    /// Percent; `None` for an empty subset.
    pub accuracy: Option<f64>,
    pub mean_ae: Option<f64>,
}

/// Accuracy and mean AE accumulated in a single pass.
#[derive(Debug, Clone, Copy)]
pub struct DoaAccumulator {
    threshold: f64,
    count: usize,
    hits: usize,
    ae: CompensatedSum,
}

impl DoaAccumulator {
    pub fn new(threshold: f64) -> Self {
        Self {
            threshold,
            count: 0,
            hits: 0,
            ae: CompensatedSum::default(),
        }
    }

    pub fn push(&mut self, pred: f64, gt: f64) {
        let e = cyclic_abs_error(pred, gt);
        self.count += 1;
        self.hits += (e < self.threshold) as usize;
        self.ae.add(e);
    }

    pub fn finish(&self) -> SubMetrics {
        if self.count == 0 {
            return SubMetrics {
                count: 0,
                accuracy: None,
                mean_ae: None,
            };
        }
        SubMetrics {
            count: self.count,
            accuracy: Some(100.0 * self.hits as f64 / self.count as f64),
            mean_ae: Some(self.ae.value() / self.count as f64),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub gt_bin_deg: usize,
    pub mean_ae_deg: f64,
    pub count: usize,
}

/// Mean AE per integer ground-truth degree. Unpopulated bins are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorHistogram {
    pub bins: Vec<Option<HistogramBin>>,
}

impl ErrorHistogram {
    pub fn populated(&self) -> impl Iterator<Item = &HistogramBin> {
        self.bins.iter().flatten()
    }
}

pub fn error_histogram(preds: &[f64], gts: &[f64]) -> Result<ErrorHistogram> {
    check(preds, gts)?;
    let mut sums = vec![CompensatedSum::default(); 360];
    let mut counts = vec![0usize; 360];
    for (p, g) in preds.iter().zip(gts) {
        let b = AzimuthDeg::new(*g).bin();
        sums[b].add(cyclic_abs_error(*p, *g));
        counts[b] += 1;
    }
    let bins = (0..360)
        .map(|b| {
            (counts[b] > 0).then(|| HistogramBin {
                gt_bin_deg: b,
                mean_ae_deg: sums[b].value() / counts[b] as f64,
                count: counts[b],
            })
        })
        .collect();
    Ok(ErrorHistogram { bins })
}

/// Overall / in-FOV / out-of-FOV breakdown for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub chunks: usize,
    pub threshold_deg: f64,
    pub overall: SubMetrics,
    pub in_fov: SubMetrics,
    pub out_of_fov: SubMetrics,
    #[serde(skip)]
    pub histogram: Vec<HistogramBin>,
}

impl EvalReport {
    pub fn compute(method: &str, preds: &[f64], gts: &[f64], in_fov: &[bool], threshold: f64) -> Result<Self> {
        check(preds, gts)?;
        if in_fov.len() != preds.len() {
            return Err(Error::Shape("in-FOV flags do not match predictions".into()));
        }
        let mut all = DoaAccumulator::new(threshold);
        let mut inside = DoaAccumulator::new(threshold);
        let mut outside = DoaAccumulator::new(threshold);
        for ((p, g), f) in preds.iter().zip(gts).zip(in_fov) {
            all.push(*p, *g);
            if *f {
                inside.push(*p, *g);
            } else {
                outside.push(*p, *g);
            }
        }
        Ok(Self {
            method: method.to_string(),
            chunks: preds.len(),
            threshold_deg: threshold,
            overall: all.finish(),
            in_fov: inside.finish(),
            out_of_fov: outside.finish(),
            histogram: error_histogram(preds, gts)?.populated().copied().collect(),
        })
    }

    /// `(subset, count, accuracy, mean_ae)` rows; empty subsets give blank cells.
    pub fn csv_rows(&self) -> Vec<[String; 5]> {
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        [
            ("overall", self.overall),
            ("in_fov", self.in_fov),
            ("out_of_fov", self.out_of_fov),
        ]
        .iter()
        .map(|(name, m)| {
            [
                self.method.clone(),
                name.to_string(),
                m.count.to_string(),
                cell(m.accuracy),
                cell(m.mean_ae),
            ]
        })
        .collect()
    }
}
