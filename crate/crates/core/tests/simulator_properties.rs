use egodoa_core::features::{gcc_phat, stft};
use egodoa_core::geometry::{in_fov, project_pinhole, relative_doa, AzimuthDeg, CameraIntrinsics, Pose};
use egodoa_core::simulator::dataset::scene_trajectories;
use egodoa_core::simulator::source::white_noise;
use egodoa_core::simulator::{
    gen_trajectory, render_binaural, scene_specs, AcousticsConfig, SceneConfig, SourceSignal, Trajectory,
    TrajectoryParams,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn itd_sign_matches_geometry() {
    let cfg = AcousticsConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let src = SourceSignal {
        samples: white_noise(1, 4000),
        sample_rate: 16000,
        start_time: -0.05,
    };
    let mut checked = 0;
    for _ in 0..1000 {
        let w = Pose::new(
            rng.random_range(1.0..5.0),
            1.6,
            rng.random_range(1.0..4.0),
            rng.random_range(0.0..360.0),
        );
        let s = Pose::new(
            rng.random_range(0.5..5.5),
            rng.random_range(1.4..1.8),
            rng.random_range(0.5..4.5),
            0.0,
        );
        if w.horizontal_distance(&s) < 0.5 {
            continue;
        }
        let az = relative_doa(&w, &s).unwrap().deg();
        if (az - 90.0).abs() < 1.0 || (az - 270.0).abs() < 1.0 {
            continue;
        }
        let out = render_binaural(
            &Trajectory::stationary(w, 1.0, 50.0),
            &Trajectory::stationary(s, 1.0, 50.0),
            &src,
            &cfg,
            0.15,
            0,
        )
        .unwrap();
        let g = gcc_phat(
            &stft(&out.left, 1024, 320).unwrap(),
            &stft(&out.right, 1024, 320).unwrap(),
            96,
        )
        .unwrap();
        let mean = g.mean_over_frames();
        let peak = mean.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0 as isize - 48;
        // left ear nearer (az in (90, 270)) means left leads: positive lag
        let left_nearer = az > 90.0 && az < 270.0;
        if peak != 0 {
            assert_eq!(peak > 0, left_nearer, "az {az}, peak {peak}");
        } else {
            // sub-sample delay near broadside
            assert!(cyclic_90(az) < 8.0, "az {az} produced zero lag");
        }
        checked += 1;
    }
    assert!(checked > 900);
}

fn cyclic_90(az: f64) -> f64 {
    (az - 90.0).abs().min((az - 270.0).abs())
}

#[test]
fn fov_and_projection_agree() {
    let cam = CameraIntrinsics::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut inside = 0;
    for _ in 0..10_000 {
        let w = Pose::new(0.0, 1.6, 0.0, rng.random_range(0.0..360.0));
        let r: f64 = rng.random_range(0.5..6.0);
        let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let s = Pose::new(r * a.cos(), 1.6, r * a.sin(), 0.0);
        let az = relative_doa(&w, &s).unwrap();
        if (az.deg() - 60.0).abs() < 1e-6 || (az.deg() - 120.0).abs() < 1e-6 {
            continue;
        }
        let proj = project_pinhole(&w, &s, &cam);
        let on_image = proj.is_some_and(|(u, _)| (0.0..=224.0).contains(&u));
        assert_eq!(on_image, in_fov(az), "az {}", az.deg());
        inside += on_image as usize;
    }
    assert!(inside > 500);
}

#[test]
fn trajectories_respect_bounds_and_speeds() {
    let params = TrajectoryParams::default();
    for seed in 0..50 {
        let t = gen_trajectory(seed, &params).unwrap();
        for (_, p) in t.samples() {
            assert!(params.room.contains(p.x, p.z));
        }
        for v in t.tick_speeds() {
            assert!(v < 1e-9 || (0.5 - 1e-9..=1.5 + 1e-9).contains(&v), "speed {v}");
        }
    }
}

#[test]
fn in_fov_fraction_over_an_hour() {
    let cfg = SceneConfig::default();
    let scenes = (3600.0 / cfg.trajectory.duration).ceil() as usize;
    let (mut total, mut inside) = (0usize, 0usize);
    for spec in scene_specs(2024, scenes) {
        let (w, s) = scene_trajectories(&spec, &cfg).unwrap();
        for i in 0..cfg.chunking.chunks_in(cfg.trajectory.duration) {
            let t = (i as f64 * 640.0 + 4000.0) / 16000.0;
            let az = relative_doa(&w.pose_at(t), &s.pose_at(t)).unwrap();
            inside += in_fov(AzimuthDeg::new(az.bin() as f64)) as usize;
            total += 1;
        }
    }
    let frac = inside as f64 / total as f64;
    assert!((0.2..=0.8).contains(&frac), "in-FOV fraction {frac}");
}
