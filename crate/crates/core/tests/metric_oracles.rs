use egodoa_core::eval::detection::cell_distance;
use egodoa_core::eval::{average_precision, hungarian_match, mean_e1_e2, nms_sphere};
use egodoa_core::geometry::{cyclic_abs_error, SpherePoint};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn perm_cost(c: &Array2<f64>, p: &[usize]) -> f64 {
    p.iter().enumerate().map(|(i, &j)| c[[i, j]]).sum()
}

#[test]
fn hungarian_equals_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let perms = permutations(5);
    assert_eq!(perms.len(), 120);
    for _ in 0..200 {
        let c = Array2::from_shape_fn((5, 5), |_| rng.random_range(0.0..100.0));
        let best = perms.iter().map(|p| perm_cost(&c, p)).fold(f64::INFINITY, f64::min);
        let a = hungarian_match(&c);
        let mut p = vec![0; 5];
        for (i, j) in &a.pairs {
            p[*i] = *j;
        }
        assert_eq!(perm_cost(&c, &p), best);
    }
}

#[test]
fn hungarian_beats_random_permutations() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let n = rng.random_range(2..8);
        let c = Array2::from_shape_fn((n, n), |_| rng.random_range(-5.0..50.0));
        let a = hungarian_match(&c);
        let mut p: Vec<usize> = (0..n).collect();
        for _ in 0..1000 {
            p.shuffle(&mut rng);
            assert!(a.total_cost <= perm_cost(&c, &p) + 1e-9);
        }
    }
}

/// Re-scans the whole grid for the best unsuppressed cell every iteration.
fn brute_force_nms(m: &Array2<f64>, radius: f64, threshold: f64) -> Vec<(usize, usize, f64)> {
    let (rows, cols) = m.dim();
    let mut alive = vec![true; rows * cols];
    let mut out = Vec::new();
    loop {
        let mut best: Option<usize> = None;
        for i in 0..rows * cols {
            let v = m[[i / cols, i % cols]];
            if alive[i] && v > threshold && best.is_none_or(|b| v > m[[b / cols, b % cols]]) {
                best = Some(i);
            }
        }
        let Some(b) = best else { break };
        let (r, c) = (b / cols, b % cols);
        out.push((r, c, m[[r, c]]));
        for i in 0..rows * cols {
            if cell_distance((r, c), (i / cols, i % cols), cols) <= radius {
                alive[i] = false;
            }
        }
    }
    out
}

#[test]
fn nms_equals_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..100 {
        // coarse values make ties common
        let m = Array2::from_shape_fn((20, 20), |_| (rng.random_range(-10..10) as f64) / 2.0);
        let radius = [1.0, 2.5, 5.0][trial % 3];
        let got: Vec<(usize, usize, f64)> = nms_sphere(&m, radius, 0.0)
            .detections
            .iter()
            .map(|d| (d.row, d.col, d.score))
            .collect();
        assert_eq!(got, brute_force_nms(&m, radius, 0.0));
    }
}

#[test]
fn nms_output_respects_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10 {
        let m = Array2::from_shape_fn((90, 180), |_| rng.random_range(-1.0..1.0));
        let d = nms_sphere(&m, 5.0, 0.0);
        for (i, a) in d.detections.iter().enumerate() {
            assert!(a.score > 0.0);
            for b in &d.detections[i + 1..] {
                assert!(cell_distance((a.row, a.col), (b.row, b.col), 180) > 5.0);
            }
        }
    }
}

#[test]
fn e1_e2_swap_symmetry() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let n = rng.random_range(0..6);
        let mut pt = || SpherePoint::new(rng.random_range(0.0..360.0), rng.random_range(-90.0..=90.0)).unwrap();
        let a: Vec<SpherePoint> = (0..n).map(|_| pt()).collect();
        let b: Vec<SpherePoint> = (0..n).map(|_| pt()).collect();
        let x = mean_e1_e2(&a, &b);
        let y = mean_e1_e2(&b, &a);
        assert_eq!((x.mean_e1, x.std1), (y.mean_e2, y.std2));
        assert_eq!((x.mean_e2, x.std2), (y.mean_e1, y.std1));
    }
}

#[test]
fn ap_is_one_when_positives_lead() {
    let scores = [0.9, 0.8, 0.7, 0.2, 0.1];
    let labels = [true, true, true, false, false];
    assert_eq!(average_precision(&scores, &labels).unwrap(), 1.0);
}

#[test]
fn cyclic_error_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..100_000 {
        let a = rng.random_range(0.0..360.0);
        let b = rng.random_range(0.0..360.0);
        let e = cyclic_abs_error(a, b);
        assert_eq!(e, cyclic_abs_error(b, a));
        assert!((0.0..=180.0).contains(&e));
        let d = (a - b).abs();
        let rule = if d > 180.0 { 360.0 - d } else { d };
        assert!((e - rule).abs() < 1e-9);
    }
}
