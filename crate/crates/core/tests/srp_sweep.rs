use std::f64::consts::PI;

use egodoa_core::features::srp::{expected_lag, SrpSteering};
use egodoa_core::features::{gcc_phat, stft};
use egodoa_core::geometry::{cyclic_abs_error, AzimuthDeg};
use egodoa_core::simulator::source::white_noise;
use egodoa_core::simulator::AcousticsConfig;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

fn frac_delay(x: &[f64], d: f64) -> Vec<f64> {
    let n = x.len();
    let mut planner = FftPlanner::new();
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, b) in buf.iter_mut().enumerate() {
        if k == n / 2 {
            *b = Complex64::new(0.0, 0.0);
            continue;
        }
        let f = if k < n / 2 { k as f64 } else { k as f64 - n as f64 };
        *b *= Complex64::from_polar(1.0, -2.0 * PI * f * d / n as f64);
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

#[test]
fn far_field_sweep_within_two_degrees() {
    for fs in [16_000u32, 48_000] {
        let cfg = AcousticsConfig {
            sample_rate: fs,
            ..Default::default()
        };
        let steer = SrpSteering::new(&cfg, 96);
        let src = white_noise(17, 8192);
        let mut worst: f64 = 0.0;
        for az in 0..360 {
            let tau = expected_lag(az as f64, &cfg);
            let l = frac_delay(&src, -tau / 2.0);
            let r = frac_delay(&src, tau / 2.0);
            let g = gcc_phat(&stft(&l, 1024, 320).unwrap(), &stft(&r, 1024, 320).unwrap(), 96).unwrap();
            let est = steer.estimate(&g).azimuth;
            let truth = AzimuthDeg::new(az as f64);
            let ae =
                cyclic_abs_error(est.deg(), truth.deg()).min(cyclic_abs_error(est.deg(), truth.back_image().deg()));
            worst = worst.max(ae);
        }
        assert!(worst <= 2.0, "fs {fs}: worst {worst}");
    }
}
