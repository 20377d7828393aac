//! Wearer-relative geometry.
//!
//! World frame: `x` points east, `y` up, `z` north. A pose's yaw is measured in
//! degrees clockwise from north, so a wearer with yaw 0 faces `+z` and has its
//! right ear towards `+x`.
//!
//! Relative azimuths follow the camera convention used throughout the crate:
//! 0° is the wearer's right, 90° straight ahead, 180° the left and 270° behind.
//! The camera field of view therefore maps to azimuths `[60°, 120°]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Horizontal field of view of the head-mounted camera, degrees.
pub const DEFAULT_FOV_DEG: f64 = 60.0;
/// Azimuth of the camera boresight.
pub const BORESIGHT_DEG: f64 = 90.0;

/// Wraps an angle in degrees into `[0, 360)`.
#[inline]
pub fn wrap_deg(angle: f64) -> f64 {
    let w = angle.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if w >= 360.0 {
        0.0
    } else {
        w
    }
}

/// Position plus yaw of a wearer or speaker at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    yaw: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, z: f64, yaw_deg: f64) -> Self {
        Self {
            x,
            y,
            z,
            yaw: wrap_deg(yaw_deg),
        }
    }

    #[inline]
    pub fn yaw(&self) -> f64 {
        self.yaw
    }

    pub fn with_yaw(mut self, yaw_deg: f64) -> Self {
        self.yaw = wrap_deg(yaw_deg);
        self
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.yaw.is_finite()
    }

    /// Unit facing direction in the horizontal `(x, z)` plane.
    pub fn forward(&self) -> (f64, f64) {
        let r = self.yaw.to_radians();
        (r.sin(), r.cos())
    }

    /// Unit direction of the right ear in the horizontal `(x, z)` plane.
    pub fn right(&self) -> (f64, f64) {
        let r = self.yaw.to_radians();
        (r.cos(), -r.sin())
    }

    /// Expresses a world point in this pose's body frame as `(right, up, forward)`.
    pub fn to_local(&self, x: f64, y: f64, z: f64) -> (f64, f64, f64) {
        let dx = x - self.x;
        let dz = z - self.z;
        let r = self.yaw.to_radians();
        let (s, c) = r.sin_cos();
        (dx * c - dz * s, y - self.y, dx * s + dz * c)
    }

    pub fn horizontal_distance(&self, other: &Pose) -> f64 {
        (other.x - self.x).hypot(other.z - self.z)
    }

    pub fn distance(&self, other: &Pose) -> f64 {
        let dy = other.y - self.y;
        (self.horizontal_distance(other).powi(2) + dy * dy).sqrt()
    }
}

/// Wearer-relative azimuth in `[0, 360)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AzimuthDeg(f64);

impl AzimuthDeg {
    pub fn new(deg: f64) -> Self {
        Self(wrap_deg(deg))
    }

    #[inline]
    pub fn deg(self) -> f64 {
        self.0
    }

    /// Mirror image across the interaural axis (front/back confusion partner).
    pub fn back_image(self) -> Self {
        Self::new(360.0 - self.0)
    }

    /// Integer degree bin, `round(az) mod 360`.
    pub fn bin(self) -> usize {
        (self.0.round() as usize) % 360
    }
}

/// Pinhole camera with square pixels and its principal point at the image centre.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    horizontal_fov: f64,
    width: usize,
    height: usize,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self {
            horizontal_fov: DEFAULT_FOV_DEG,
            width: 224,
            height: 224,
        }
    }
}

impl CameraIntrinsics {
    pub fn new(horizontal_fov: f64, width: usize, height: usize) -> Result<Self> {
        if !(horizontal_fov > 0.0 && horizontal_fov < 180.0) {
            return Err(Error::Config(format!(
                "horizontal fov must lie in (0, 180), got {horizontal_fov}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::Config(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        Ok(Self {
            horizontal_fov,
            width,
            height,
        })
    }

    pub fn horizontal_fov(&self) -> f64 {
        self.horizontal_fov
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Focal length in pixels.
    pub fn focal(&self) -> f64 {
        (self.width as f64 / 2.0) / (self.horizontal_fov.to_radians() / 2.0).tan()
    }

    pub fn principal_point(&self) -> (f64, f64) {
        (self.width as f64 / 2.0, self.height as f64 / 2.0)
    }
}

/// Point on the unit sphere around the wearer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpherePoint {
    azimuth: f64,
    elevation: f64,
}

impl SpherePoint {
    pub fn new(azimuth: f64, elevation: f64) -> Result<Self> {
        if !elevation.is_finite() || !(-90.0..=90.0).contains(&elevation) || !azimuth.is_finite() {
            return Err(Error::Geometry(format!(
                "invalid sphere point (az {azimuth}, el {elevation})"
            )));
        }
        Ok(Self {
            azimuth: wrap_deg(azimuth),
            elevation,
        })
    }

    pub fn azimuth(&self) -> f64 {
        self.azimuth
    }

    pub fn elevation(&self) -> f64 {
        self.elevation
    }

    pub fn unit_vector(&self) -> [f64; 3] {
        let (sa, ca) = self.azimuth.to_radians().sin_cos();
        let (se, ce) = self.elevation.to_radians().sin_cos();
        [ce * ca, ce * sa, se]
    }
}

/// Azimuth of `speaker` seen from `wearer`.
///
/// Uses the wearer-to-speaker displacement with a full-quadrant arctangent so
/// that a speaker straight ahead reads 90°. Elevation is ignored.
pub fn relative_doa(wearer: &Pose, speaker: &Pose) -> Result<AzimuthDeg> {
    if !wearer.is_finite() || !speaker.is_finite() {
        return Err(Error::Geometry("non-finite pose".into()));
    }
    if wearer.x == speaker.x && wearer.z == speaker.z {
        return Err(Error::Geometry(
            "wearer and speaker share the same horizontal position".into(),
        ));
    }
    let (right, _, forward) = wearer.to_local(speaker.x, speaker.y, speaker.z);
    Ok(AzimuthDeg::new(forward.atan2(right).to_degrees()))
}

/// Speaker direction on the wearer's sphere (azimuth as [`relative_doa`], elevation from height).
pub fn relative_sphere_point(wearer: &Pose, speaker: &Pose) -> Result<SpherePoint> {
    let az = relative_doa(wearer, speaker)?;
    let el = (speaker.y - wearer.y)
        .atan2(wearer.horizontal_distance(speaker))
        .to_degrees();
    SpherePoint::new(az.deg(), el)
}

/// Absolute angular error with cyclic wrap, in `[0, 180]`.
pub fn cyclic_abs_error(theta: f64, theta_hat: f64) -> f64 {
    // |a - b| is exactly symmetric in floating point, a - b wrapped is not
    let d = wrap_deg((theta - theta_hat).abs());
    d.min(360.0 - d)
}

/// Whether an azimuth lies inside the default 60° camera field of view (bounds inclusive).
pub fn in_fov(az: AzimuthDeg) -> bool {
    in_fov_of(az, DEFAULT_FOV_DEG)
}

/// Field-of-view test for an arbitrary horizontal FOV centred on the boresight.
pub fn in_fov_of(az: AzimuthDeg, fov_deg: f64) -> bool {
    let half = fov_deg / 2.0;
    let a = az.deg();
    a >= BORESIGHT_DEG - half && a <= BORESIGHT_DEG + half
}

/// Projects the speaker's head centre into the wearer's camera.
///
/// Returns `None` when the speaker is behind the camera plane or outside the
/// horizontal field of view. Image `u` grows to the right and `v` downwards, so
/// a speaker at azimuth 60° lands on the right edge.
pub fn project_pinhole(wearer: &Pose, speaker: &Pose, cam: &CameraIntrinsics) -> Option<(f64, f64)> {
    let az = relative_doa(wearer, speaker).ok()?;
    let (right, up, forward) = wearer.to_local(speaker.x, speaker.y, speaker.z);
    if forward <= 0.0 || !in_fov_of(az, cam.horizontal_fov()) {
        return None;
    }
    let f = cam.focal();
    let (cx, cy) = cam.principal_point();
    Some((cx + f * right / forward, cy - f * up / forward))
}

/// Received frequency for a moving receiver and source.
///
/// `v_r` is the receiver speed towards the source and `v_s` the source speed
/// towards the receiver, both in m/s.
pub fn doppler_shift(f: f64, v_r: f64, v_s: f64, c: f64) -> Result<f64> {
    if !(c > 0.0) {
        return Err(Error::InvalidVelocity(format!("sound speed must be positive, got {c}")));
    }
    if v_s >= c {
        return Err(Error::InvalidVelocity(format!(
            "source speed {v_s} m/s reaches the sound speed {c} m/s"
        )));
    }
    Ok(f * (c + v_r) / (c - v_s))
}

/// Central angle between two sphere points, degrees in `[0, 180]`.
pub fn great_circle_deg(a: &SpherePoint, b: &SpherePoint) -> f64 {
    let u = a.unit_vector();
    let v = b.unit_vector();
    let dot = u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
    let cross = [
        u[1] * v[2] - u[2] * v[1],
        u[2] * v[0] - u[0] * v[2],
        u[0] * v[1] - u[1] * v[0],
    ];
    let cn = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
    cn.atan2(dot).to_degrees()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    /// Rotate the displacement into the wearer frame by hand and take atan2.
    fn rotation_oracle(wearer: &Pose, sx: f64, sz: f64) -> f64 {
        let r = wearer.yaw().to_radians();
        let dx = sx - wearer.x;
        let dz = sz - wearer.z;
        let right = dx * r.cos() - dz * r.sin();
        let fwd = dx * r.sin() + dz * r.cos();
        wrap_deg(fwd.atan2(right).to_degrees())
    }

    #[test]
    fn relative_doa_examples() {
        let w = Pose::new(0.0, 0.0, 0.0, 0.0);
        let ahead = relative_doa(&w, &Pose::new(0.0, 0.0, 2.0, 0.0)).unwrap();
        assert_abs_diff_eq!(ahead.deg(), 90.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ahead.deg(), rotation_oracle(&w, 0.0, 2.0), epsilon = 1e-12);
        let right = relative_doa(&w, &Pose::new(2.0, 0.0, 0.0, 0.0)).unwrap();
        assert_abs_diff_eq!(right.deg(), 0.0, epsilon = 1e-12);

        // yaw 90 faces east; the speaker at +x is then straight ahead
        let w90 = Pose::new(0.0, 0.0, 0.0, 90.0);
        let a = relative_doa(&w90, &Pose::new(2.0, 0.0, 0.0, 0.0)).unwrap();
        assert_abs_diff_eq!(a.deg(), 90.0, epsilon = 1e-9);
    }

    #[test]
    fn relative_doa_rejects_coincident() {
        let w = Pose::new(1.0, 1.6, 2.0, 10.0);
        let s = Pose::new(1.0, 1.2, 2.0, 0.0);
        assert!(matches!(relative_doa(&w, &s), Err(Error::Geometry(_))));
    }

    #[test]
    fn wrap_examples() {
        assert_eq!(wrap_deg(370.0), 10.0);
        assert_eq!(wrap_deg(-90.0), 270.0);
        assert_eq!(wrap_deg(0.0), 0.0);
        assert!(wrap_deg(-1e-20) < 360.0);
    }

    #[test]
    fn cyclic_error_examples() {
        assert_abs_diff_eq!(cyclic_abs_error(350.0, 10.0), 20.0, epsilon = 1e-12);
        assert_eq!(cyclic_abs_error(90.0, 90.0), 0.0);
        assert_abs_diff_eq!(cyclic_abs_error(0.0, 190.0), 170.0, epsilon = 1e-12);
    }

    #[test]
    fn fov_examples() {
        assert!(in_fov(AzimuthDeg::new(90.0)));
        assert!(!in_fov(AzimuthDeg::new(270.0)));
        assert!(in_fov(AzimuthDeg::new(60.0)));
        assert!(in_fov(AzimuthDeg::new(120.0)));
        assert!(!in_fov(AzimuthDeg::new(120.0001)));
    }

    #[test]
    fn projection_examples() {
        let cam = CameraIntrinsics::default();
        let w = Pose::new(0.0, 1.6, 0.0, 0.0);
        let (u, v) = project_pinhole(&w, &Pose::new(0.0, 1.6, 3.0, 0.0), &cam).unwrap();
        assert_abs_diff_eq!(u, 112.0, epsilon = 1e-9);
        assert_abs_diff_eq!(v, 112.0, epsilon = 1e-9);

        let at = |deg: f64| {
            let r = deg.to_radians();
            Pose::new(2.0 * r.cos(), 1.6, 2.0 * r.sin(), 0.0)
        };
        assert!(project_pinhole(&w, &at(150.0), &cam).is_none());
        assert!(project_pinhole(&w, &at(270.0), &cam).is_none());

        // az 60 sits 30° right of boresight: offset tan(30°) * f = half the width
        let (u60, _) = project_pinhole(&w, &at(60.0 + 1e-9), &cam).unwrap();
        let expected = 112.0 + (30.0f64).to_radians().tan() * (112.0 / (30.0f64).to_radians().tan());
        assert_abs_diff_eq!(u60, expected, epsilon = 1e-6);
        assert_abs_diff_eq!(u60, 224.0, epsilon = 1e-6);
        let (u120, _) = project_pinhole(&w, &at(120.0 - 1e-9), &cam).unwrap();
        assert_abs_diff_eq!(u120, 0.0, epsilon = 1e-6);
    }

    #[test]
    fn doppler_examples() {
        assert_eq!(doppler_shift(1000.0, 0.0, 0.0, 343.0).unwrap(), 1000.0);
        assert_abs_diff_eq!(
            doppler_shift(1000.0, 1.0, 1.0, 343.0).unwrap(),
            1000.0 * 344.0 / 342.0,
            epsilon = 1e-9
        );
        assert_abs_diff_eq!(doppler_shift(1000.0, 1.0, 1.0, 343.0).unwrap(), 1005.85, epsilon = 0.01);
        assert_abs_diff_eq!(
            doppler_shift(1000.0, 0.0, 34.3, 343.0).unwrap(),
            1111.11,
            epsilon = 0.01
        );
        assert!(matches!(
            doppler_shift(1000.0, 0.0, 343.0, 343.0),
            Err(Error::InvalidVelocity(_))
        ));
    }

    #[test]
    fn great_circle_examples() {
        let p = |a, e| SpherePoint::new(a, e).unwrap();
        assert_eq!(great_circle_deg(&p(10.0, 5.0), &p(10.0, 5.0)), 0.0);
        assert_abs_diff_eq!(great_circle_deg(&p(0.0, 0.0), &p(180.0, 0.0)), 180.0, epsilon = 1e-9);
        assert_abs_diff_eq!(great_circle_deg(&p(0.0, 0.0), &p(90.0, 0.0)), 90.0, epsilon = 1e-9);
        assert_abs_diff_eq!(great_circle_deg(&p(0.0, 90.0), &p(123.0, 90.0)), 0.0, epsilon = 1e-9);
    }

    proptest! {
        #[test]
        fn wrap_is_idempotent(x in -1e6f64..1e6) {
            let w = wrap_deg(x);
            prop_assert!((0.0..360.0).contains(&w));
            prop_assert_eq!(wrap_deg(w), w);
        }

        #[test]
        fn cyclic_error_symmetric(a in -720f64..720.0, b in -720f64..720.0) {
            let e = cyclic_abs_error(a, b);
            prop_assert_eq!(e, cyclic_abs_error(b, a));
            prop_assert!((0.0..=180.0).contains(&e));
        }

        #[test]
        fn relative_doa_joint_rotation(
            yaw in 0f64..360.0, delta in -360f64..360.0,
            dist in 0.5f64..8.0, bearing in 0f64..360.0,
            wx in -5f64..5.0, wz in -5f64..5.0,
        ) {
            let w = Pose::new(wx, 1.6, wz, yaw);
            let b = bearing.to_radians();
            let s = Pose::new(wx + dist * b.sin(), 1.5, wz + dist * b.cos(), 0.0);
            let a0 = relative_doa(&w, &s).unwrap().deg();
            // rotate wearer yaw and the displacement (clockwise) by delta
            let w2 = w.with_yaw(yaw + delta);
            let b2 = (bearing + delta).to_radians();
            let s2 = Pose::new(wx + dist * b2.sin(), 1.5, wz + dist * b2.cos(), 0.0);
            let a1 = relative_doa(&w2, &s2).unwrap().deg();
            prop_assert!(cyclic_abs_error(a0, a1) < 1e-9);
            prop_assert!(cyclic_abs_error(a0, rotation_oracle(&w, s.x, s.z)) < 1e-9);
        }
    }
}
