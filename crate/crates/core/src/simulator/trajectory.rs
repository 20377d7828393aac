//! Random-walk trajectories for the wearer and the speaker.
//!
//! Motion is organised in periods. At the start of each period the walker
//! either stands still (with the configured stop probability) or picks a new
//! heading and speed and walks in a straight line, reflecting off the room
//! walls. Yaw follows the heading while walking and is held while standing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_deg, Pose};

/// Axis-aligned floor area, metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomBounds {
    pub x_min: f64,
    pub x_max: f64,
    pub z_min: f64,
    pub z_max: f64,
}

impl Default for RoomBounds {
    fn default() -> Self {
        Self {
            x_min: 0.0,
            x_max: 6.0,
            z_min: 0.0,
            z_max: 5.0,
        }
    }
}

impl RoomBounds {
    pub fn contains(&self, x: f64, z: f64) -> bool {
        x >= self.x_min && x <= self.x_max && z >= self.z_min && z <= self.z_max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectoryParams {
    pub room: RoomBounds,
    /// Walking speed range, m/s.
    pub speed_range: (f64, f64),
    /// Duration of one motion period, seconds.
    pub period_range: (f64, f64),
    pub stop_probability: f64,
    pub duration: f64,
    pub tick_rate: f64,
    /// Head height, metres.
    pub height: f64,
    /// Distance kept from the walls when placing the initial position.
    pub margin: f64,
}

impl Default for TrajectoryParams {
    fn default() -> Self {
        Self {
            room: RoomBounds::default(),
            speed_range: (0.5, 1.5),
            period_range: (2.0, 4.0),
            stop_probability: 0.5,
            duration: 10.0,
            tick_rate: 50.0,
            height: 1.6,
            margin: 0.5,
        }
    }
}

impl TrajectoryParams {
    pub fn validate(&self) -> Result<()> {
        let r = &self.room;
        let w = r.x_max - r.x_min;
        let d = r.z_max - r.z_min;
        if !(w.is_finite() && d.is_finite()) || w <= 2.0 * self.margin || d <= 2.0 * self.margin {
            return Err(Error::Config(format!(
                "degenerate room {w:.3} x {d:.3} m for margin {} m",
                self.margin
            )));
        }
        let (lo, hi) = self.speed_range;
        if !(lo > 0.0 && lo <= hi && hi <= 10.0) {
            return Err(Error::Config(format!("speed range ({lo}, {hi}) outside (0, 10]")));
        }
        let (plo, phi) = self.period_range;
        if !(plo > 0.0 && plo <= phi) {
            return Err(Error::Config(format!("invalid period range ({plo}, {phi})")));
        }
        if !(0.0..=1.0).contains(&self.stop_probability) {
            return Err(Error::Config(format!(
                "stop probability {} outside [0, 1]",
                self.stop_probability
            )));
        }
        if !(self.duration > 0.0 && self.tick_rate > 0.0) {
            return Err(Error::Config("duration and tick rate must be positive".into()));
        }
        // one tick must fit inside the room for wall reflection to stay in bounds
        if hi / self.tick_rate >= w.min(d) / 2.0 {
            return Err(Error::Config("room too small for the per-tick step".into()));
        }
        Ok(())
    }

    pub fn ticks(&self) -> usize {
        (self.duration * self.tick_rate).round() as usize + 1
    }
}

/// Timestamped poses sampled at a fixed tick rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    tick_rate: f64,
    samples: Vec<(f64, Pose)>,
}

impl Trajectory {
    pub fn new(tick_rate: f64, samples: Vec<(f64, Pose)>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("trajectory without samples".into()));
        }
        if samples.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::Config("trajectory timestamps must increase".into()));
        }
        Ok(Self { tick_rate, samples })
    }

    /// A pose held fixed for the given duration.
    pub fn stationary(pose: Pose, duration: f64, tick_rate: f64) -> Self {
        let n = (duration * tick_rate).round() as usize + 1;
        let samples = (0..n).map(|k| (k as f64 / tick_rate, pose)).collect();
        Self { tick_rate, samples }
    }

    /// Constant-velocity motion with fixed yaw; velocity in world `(x, z)` m/s.
    pub fn linear(start: Pose, velocity: (f64, f64), duration: f64, tick_rate: f64) -> Self {
        let n = (duration * tick_rate).round() as usize + 1;
        let samples = (0..n)
            .map(|k| {
                let t = k as f64 / tick_rate;
                let p = Pose::new(start.x + velocity.0 * t, start.y, start.z + velocity.1 * t, start.yaw());
                (t, p)
            })
            .collect();
        Self { tick_rate, samples }
    }

    pub fn tick_rate(&self) -> f64 {
        self.tick_rate
    }

    pub fn samples(&self) -> &[(f64, Pose)] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.last().map(|s| s.0).unwrap_or(0.0) - self.samples[0].0
    }

    /// Pose at an arbitrary time: linear in position, shortest arc in yaw,
    /// clamped to the first/last sample outside the covered span.
    pub fn pose_at(&self, t: f64) -> Pose {
        let first = self.samples[0];
        let last = self.samples[self.samples.len() - 1];
        if t <= first.0 {
            return first.1;
        }
        if t >= last.0 {
            return last.1;
        }
        let pos = (t - first.0) * self.tick_rate;
        let k = (pos.floor() as usize).min(self.samples.len() - 2);
        let (t0, a) = self.samples[k];
        let (t1, b) = self.samples[k + 1];
        let f = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
        let mut dyaw = b.yaw() - a.yaw();
        if dyaw > 180.0 {
            dyaw -= 360.0;
        } else if dyaw < -180.0 {
            dyaw += 360.0;
        }
        Pose::new(
            a.x + f * (b.x - a.x),
            a.y + f * (b.y - a.y),
            a.z + f * (b.z - a.z),
            a.yaw() + f * dyaw,
        )
    }

    /// Per-tick speeds (m/s) in the horizontal plane.
    pub fn tick_speeds(&self) -> Vec<f64> {
        self.samples
            .windows(2)
            .map(|w| w[0].1.horizontal_distance(&w[1].1) / (w[1].0 - w[0].0))
            .collect()
    }
}

/// Behaviour of the camera wearer towards the speaker.
///
/// A plain random walk leaves the speaker in view only ~1/6 of the time; real
/// wearers look at whoever is talking. When attending, the wearer's heading or
/// standing gaze points at the speaker plus a uniform jitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GazeParams {
    /// Probability that a period is spent attending to the speaker.
    pub attend_probability: f64,
    /// Half-width of the uniform gaze offset, degrees.
    pub jitter_deg: f64,
    /// The wearer stops walking rather than come closer than this, metres.
    pub min_separation: f64,
}

impl Default for GazeParams {
    fn default() -> Self {
        Self {
            attend_probability: 0.7,
            jitter_deg: 45.0,
            min_separation: 1.0,
        }
    }
}

/// Independent random walk.
pub fn gen_trajectory(seed: u64, params: &TrajectoryParams) -> Result<Trajectory> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    walk(&mut rng, params, None)
}

/// Random walk for the wearer, optionally attending to a speaker trajectory.
pub fn gen_wearer_trajectory(
    seed: u64,
    params: &TrajectoryParams,
    speaker: &Trajectory,
    gaze: &GazeParams,
) -> Result<Trajectory> {
    params.validate()?;
    if !(0.0..=1.0).contains(&gaze.attend_probability) {
        return Err(Error::Config("gaze attend probability outside [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    walk(&mut rng, params, Some((speaker, gaze)))
}

fn bearing_deg(from: &Pose, to_x: f64, to_z: f64) -> f64 {
    wrap_deg((to_x - from.x).atan2(to_z - from.z).to_degrees())
}

fn walk(
    rng: &mut ChaCha8Rng,
    params: &TrajectoryParams,
    attend: Option<(&Trajectory, &GazeParams)>,
) -> Result<Trajectory> {
    let room = params.room;
    let m = params.margin;
    let x0 = rng.random_range(room.x_min + m..=room.x_max - m);
    let z0 = rng.random_range(room.z_min + m..=room.z_max - m);
    let yaw0 = rng.random_range(0.0..360.0);
    let mut pose = Pose::new(x0, params.height, z0, yaw0);

    let n = params.ticks();
    let dt = 1.0 / params.tick_rate;
    let mut samples = Vec::with_capacity(n);
    samples.push((0.0, pose));

    // velocity in (x, z); zero while standing
    let mut vel = (0.0f64, 0.0f64);
    let mut gaze_offset: Option<f64> = None;
    let mut period_end = 0.0f64;

    for k in 1..n {
        let t_prev = (k - 1) as f64 * dt;
        let t = k as f64 * dt;
        if t_prev >= period_end - 1e-12 {
            period_end = t_prev + rng.random_range(params.period_range.0..=params.period_range.1);
            let stop = rng.random_bool(params.stop_probability);
            let attending = match attend {
                Some((_, g)) => rng.random_bool(g.attend_probability),
                None => false,
            };
            let jitter = match attend {
                Some((_, g)) if g.jitter_deg > 0.0 => rng.random_range(-g.jitter_deg..=g.jitter_deg),
                _ => 0.0,
            };
            let free_heading = rng.random_range(0.0..360.0);
            let speed = rng.random_range(params.speed_range.0..=params.speed_range.1);
            gaze_offset = if attending { Some(jitter) } else { None };
            if stop {
                vel = (0.0, 0.0);
            } else {
                let heading = match (attending, attend) {
                    (true, Some((spk, _))) => {
                        let s = spk.pose_at(t_prev);
                        bearing_deg(&pose, s.x, s.z) + jitter
                    }
                    _ => free_heading,
                };
                let h = heading.to_radians();
                vel = (speed * h.sin(), speed * h.cos());
            }
        }

        let mut next_x = pose.x + vel.0 * dt;
        let mut next_z = pose.z + vel.1 * dt;
        if next_x < room.x_min || next_x > room.x_max {
            vel.0 = -vel.0;
            next_x = pose.x + vel.0 * dt;
        }
        if next_z < room.z_min || next_z > room.z_max {
            vel.1 = -vel.1;
            next_z = pose.z + vel.1 * dt;
        }
        if let Some((spk, g)) = attend {
            let s = spk.pose_at(t);
            if (next_x - s.x).hypot(next_z - s.z) < g.min_separation && (vel.0 != 0.0 || vel.1 != 0.0) {
                vel = (0.0, 0.0);
                next_x = pose.x;
                next_z = pose.z;
            }
        }

        let moving = vel.0 != 0.0 || vel.1 != 0.0;
        let yaw = match (gaze_offset, attend) {
            (Some(off), Some((spk, _))) if !moving => {
                let s = spk.pose_at(t);
                if (s.x - next_x).hypot(s.z - next_z) > 1e-9 {
                    bearing_deg(&Pose::new(next_x, 0.0, next_z, 0.0), s.x, s.z) + off
                } else {
                    pose.yaw()
                }
            }
            _ if moving => vel.0.atan2(vel.1).to_degrees(),
            _ => pose.yaw(),
        };
        pose = Pose::new(next_x, params.height, next_z, yaw);
        samples.push((t, pose));
    }
    Trajectory::new(params.tick_rate, samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_for_a_seed() {
        let p = TrajectoryParams::default();
        let a = gen_trajectory(42, &p).unwrap();
        let b = gen_trajectory(42, &p).unwrap();
        assert_eq!(a, b);
        let c = gen_trajectory(43, &p).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn always_stopping_never_moves() {
        let p = TrajectoryParams {
            stop_probability: 1.0,
            ..Default::default()
        };
        let t = gen_trajectory(7, &p).unwrap();
        let first = t.samples()[0].1;
        assert!(t.samples().iter().all(|(_, pose)| *pose == first));
    }

    #[test]
    fn speeds_and_bounds_hold() {
        let p = TrajectoryParams {
            duration: 30.0,
            ..Default::default()
        };
        for seed in 0..20 {
            let t = gen_trajectory(seed, &p).unwrap();
            for (_, pose) in t.samples() {
                assert!(p.room.contains(pose.x, pose.z), "seed {seed} left the room");
            }
            for v in t.tick_speeds() {
                assert!(
                    v == 0.0 || (v >= 0.5 - 1e-9 && v <= 1.5 + 1e-9),
                    "seed {seed} speed {v}"
                );
            }
            let ts: Vec<f64> = t.samples().iter().map(|s| s.0).collect();
            assert!(ts.windows(2).all(|w| w[1] > w[0]));
        }
    }

    #[test]
    fn degenerate_room_is_rejected() {
        let p = TrajectoryParams {
            room: RoomBounds {
                x_min: 0.0,
                x_max: 0.5,
                z_min: 0.0,
                z_max: 5.0,
            },
            ..Default::default()
        };
        assert!(matches!(gen_trajectory(1, &p), Err(Error::Config(_))));
    }

    #[test]
    fn wearer_keeps_distance_and_bounds() {
        let p = TrajectoryParams {
            duration: 20.0,
            ..Default::default()
        };
        let spk = gen_trajectory(3, &p).unwrap();
        let w = gen_wearer_trajectory(4, &p, &spk, &GazeParams::default()).unwrap();
        assert_eq!(w.len(), spk.len());
        for v in w.tick_speeds() {
            assert!(v == 0.0 || (0.5 - 1e-9..=1.5 + 1e-9).contains(&v));
        }
        for (_, pose) in w.samples() {
            assert!(p.room.contains(pose.x, pose.z));
        }
    }

    #[test]
    fn pose_interpolation_takes_short_arc() {
        let a = Pose::new(0.0, 1.6, 0.0, 350.0);
        let b = Pose::new(1.0, 1.6, 0.0, 10.0);
        let t = Trajectory::new(1.0, vec![(0.0, a), (1.0, b)]).unwrap();
        let mid = t.pose_at(0.5);
        assert!((mid.x - 0.5).abs() < 1e-12);
        assert!(mid.yaw() < 1e-9 || (360.0 - mid.yaw()) < 1e-9);
    }
}
