//! Multi-speaker detection post-processing and metrics.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::doa::CompensatedSum;
use crate::geometry::{great_circle_deg, SpherePoint};

pub const MAP_ROWS: usize = 90;
pub const MAP_COLS: usize = 180;
pub const CELL_DEG: f64 = 2.0;

/// Centre of a spherical map cell: rows run over elevation from -90°,
/// columns over azimuth from 0°, both at 2°.
pub fn cell_center(row: usize, col: usize) -> SpherePoint {
    SpherePoint::new((col as f64 + 0.5) * CELL_DEG, -90.0 + (row as f64 + 0.5) * CELL_DEG)
        .expect("cell centres are valid sphere points")
}

/// Cell containing a sphere point.
pub fn cell_of(p: &SpherePoint) -> (usize, usize) {
    let row = (((p.elevation() + 90.0) / CELL_DEG).floor() as usize).min(MAP_ROWS - 1);
    let col = ((p.azimuth() / CELL_DEG).floor() as usize) % MAP_COLS;
    (row, col)
}

/// Euclidean distance in cells; the column (azimuth) axis wraps.
pub fn cell_distance(a: (usize, usize), b: (usize, usize), cols: usize) -> f64 {
    let dr = a.0 as f64 - b.0 as f64;
    let raw = (a.1 as isize - b.1 as isize).unsigned_abs();
    let dc = raw.min(cols - raw) as f64;
    (dr * dr + dc * dc).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub row: usize,
    pub col: usize,
    pub point: SpherePoint,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSet {
    pub detections: Vec<Detection>,
    pub radius: f64,
    pub threshold: f64,
}

/// Greedy NMS: the highest remaining cell strictly above `threshold` is
/// kept and every cell within `radius` of it is suppressed. Ties go to the
/// lower row-major index.
pub fn nms_sphere(map: &Array2<f64>, radius: f64, threshold: f64) -> DetectionSet {
    let (rows, cols) = map.dim();
    let mut order: Vec<usize> = (0..rows * cols)
        .filter(|&i| map[[i / cols, i % cols]] > threshold)
        .collect();
    order.sort_by(|&a, &b| map[[b / cols, b % cols]].total_cmp(&map[[a / cols, a % cols]]));
    let mut suppressed = vec![false; rows * cols];
    let mut detections = Vec::new();
    let reach = radius.floor().max(0.0) as isize;
    for idx in order {
        if suppressed[idx] {
            continue;
        }
        let (r, c) = (idx / cols, idx % cols);
        detections.push(Detection {
            row: r,
            col: c,
            point: if (rows, cols) == (MAP_ROWS, MAP_COLS) {
                cell_center(r, c)
            } else {
                SpherePoint::new(c as f64 * 360.0 / cols as f64, 0.0).expect("valid")
            },
            score: map[[r, c]],
        });
        for dr in -reach..=reach {
            let rr = r as isize + dr;
            if rr < 0 || rr >= rows as isize {
                continue;
            }
            for dc in -reach..=reach {
                let cc = (c as isize + dc).rem_euclid(cols as isize) as usize;
                if cell_distance((r, c), (rr as usize, cc), cols) <= radius {
                    suppressed[rr as usize * cols + cc] = true;
                }
            }
        }
    }
    DetectionSet {
        detections,
        radius,
        threshold,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `(pred, gt)` pairs, sorted by prediction index.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_preds: Vec<usize>,
    pub unmatched_gts: Vec<usize>,
    pub total_cost: f64,
}

/// Minimum-cost assignment (Kuhn-Munkres with potentials, O(n^3)).
/// Rectangular matrices are padded to square with zero-cost dummy rows or
/// columns; pairs involving a dummy are reported as unmatched.
pub fn hungarian_match(cost: &Array2<f64>) -> Assignment {
    let (p, g) = cost.dim();
    let n = p.max(g);
    if n == 0 {
        return Assignment {
            pairs: vec![],
            unmatched_preds: vec![],
            unmatched_gts: vec![],
            total_cost: 0.0,
        };
    }
    let c = |i: usize, j: usize| if i < p && j < g { cost[[i, j]] } else { 0.0 };
    // 1-based potentials formulation
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut col_owner = vec![0usize; n + 1];
    for i in 1..=n {
        col_owner[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = c(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![usize::MAX; n];
    for j in 1..=n {
        if col_owner[j] > 0 {
            row_to_col[col_owner[j] - 1] = j - 1;
        }
    }
    let mut pairs = Vec::new();
    let mut unmatched_preds = Vec::new();
    let mut matched_gt = vec![false; g];
    let mut total = 0.0;
    for (i, &j) in row_to_col.iter().enumerate().take(p) {
        if j < g {
            pairs.push((i, j));
            matched_gt[j] = true;
            total += cost[[i, j]];
        } else {
            unmatched_preds.push(i);
        }
    }
    let unmatched_gts = (0..g).filter(|&j| !matched_gt[j]).collect();
    Assignment {
        pairs,
        unmatched_preds,
        unmatched_gts,
        total_cost: total,
    }
}

/// Prediction-side (E1) and ground-truth-side (E2) distance statistics in
/// degrees; stds are population standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct E1E2 {
    pub mean_e1: f64,
    pub std1: f64,
    pub count1: usize,
    pub mean_e2: f64,
    pub std2: f64,
    pub count2: usize,
}

pub const UNMATCHED_DISTANCE_DEG: f64 = 180.0;

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let mut s = CompensatedSum::default();
    xs.iter().for_each(|x| s.add(*x));
    let mean = s.value() / xs.len() as f64;
    let mut v = CompensatedSum::default();
    xs.iter().for_each(|x| v.add((x - mean) * (x - mean)));
    (mean, (v.value() / xs.len() as f64).sqrt())
}

pub fn mean_e1_e2(preds: &[SpherePoint], gts: &[SpherePoint]) -> E1E2 {
    let cost = Array2::from_shape_fn((preds.len(), gts.len()), |(i, j)| great_circle_deg(&preds[i], &gts[j]));
    let a = hungarian_match(&cost);
    let mut e1 = vec![UNMATCHED_DISTANCE_DEG; preds.len()];
    let mut e2 = vec![UNMATCHED_DISTANCE_DEG; gts.len()];
    for &(i, j) in &a.pairs {
        e1[i] = cost[[i, j]];
        e2[j] = cost[[i, j]];
    }
    let (mean_e1, std1) = mean_std(&e1);
    let (mean_e2, std2) = mean_std(&e2);
    E1E2 {
        mean_e1,
        std1,
        count1: e1.len(),
        mean_e2,
        std2,
        count2: e2.len(),
    }
}

/// Average precision with the all-points precision envelope. Items are
/// ranked by descending score; equal scores keep their input order.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape("scores and labels differ in length".into()));
    }
    let positives = labels.iter().filter(|l| **l).count();
    if positives == 0 {
        return Err(Error::UndefinedMetric(
            "average precision needs at least one positive".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut tp = 0usize;
    let mut precision = Vec::with_capacity(order.len());
    let mut is_pos = Vec::with_capacity(order.len());
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            tp += 1;
        }
        precision.push(tp as f64 / (rank + 1) as f64);
        is_pos.push(labels[i]);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let mut ap = 0.0;
    for (k, pos) in is_pos.iter().enumerate() {
        if *pos {
            ap += precision[k];
        }
    }
    Ok(ap / positives as f64)
}
