//! Synthetic camera frames: a seeded textured room with a head-and-torso
//! silhouette wherever the speaker projects into the image.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{project_pinhole, CameraIntrinsics, Pose};

const HEAD_RADIUS_M: f64 = 0.11;
const NECK_M: f64 = 0.16;
const TORSO_HEIGHT_M: f64 = 0.75;
const TORSO_HALF_WIDTH_M: f64 = 0.22;
const SKIN: [u8; 3] = [222, 170, 138];
const SHIRT: [u8; 3] = [176, 38, 44];

/// Row-major RGB image, 8 bits per channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl FrameImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Shape(format!(
                "{} bytes for a {width}x{height} RGB image",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    fn set(&mut self, row: usize, col: usize, rgb: [u8; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

/// Background only: a horizon gradient (lighter wall above, darker floor
/// below) with blocky seeded texture and fine grain.
pub fn render_background(cam: &CameraIntrinsics, seed: u64) -> FrameImage {
    let (w, h) = (cam.width(), cam.height());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let block = 8usize;
    let bw = w.div_ceil(block);
    let bh = h.div_ceil(block);
    let blocks: Vec<f64> = (0..bw * bh).map(|_| rng.random_range(-18.0..18.0)).collect();
    let tint: [f64; 3] = [
        rng.random_range(-12.0..12.0),
        rng.random_range(-12.0..12.0),
        rng.random_range(-12.0..12.0),
    ];
    let horizon = cam.principal_point().1;
    let mut img = FrameImage::filled(w, h, [0, 0, 0]);
    for row in 0..h {
        let base = if (row as f64) < horizon {
            170.0 - 40.0 * (horizon - row as f64) / horizon.max(1.0)
        } else {
            110.0 - 50.0 * (row as f64 - horizon) / (h as f64 - horizon).max(1.0)
        };
        for col in 0..w {
            let tex = blocks[(row / block) * bw + col / block];
            let grain: f64 = rng.random_range(-5.0..5.0);
            let mut px = [0u8; 3];
            for (c, p) in px.iter_mut().enumerate() {
                // keep the background grey-ish so the silhouette colours stand out
                *p = (base + tex + grain + tint[c]).clamp(0.0, 255.0) as u8;
            }
            img.set(row, col, px);
        }
    }
    img
}

/// Renders the wearer's camera view. The speaker's head centre is projected
/// through the pinhole model; the head disc and torso scale with 1/depth.
pub fn render_frame(wearer: &Pose, speaker: &Pose, cam: &CameraIntrinsics, seed: u64) -> FrameImage {
    let mut img = render_background(cam, seed);
    let Some((u, v)) = project_pinhole(wearer, speaker, cam) else {
        return img;
    };
    let (_, _, depth) = wearer.to_local(speaker.x, speaker.y, speaker.z);
    let f = cam.focal();
    let s = f / depth;
    let head_r = HEAD_RADIUS_M * s;
    let torso_top = v + (HEAD_RADIUS_M + NECK_M * 0.5) * s;
    let torso_bottom = v + (HEAD_RADIUS_M + TORSO_HEIGHT_M) * s;
    let torso_hw = TORSO_HALF_WIDTH_M * s;
    let neck_hw = 0.05 * s;

    let (w, h) = (img.width(), img.height());
    for row in 0..h {
        let y = row as f64 + 0.5;
        for col in 0..w {
            let x = col as f64 + 0.5;
            let dx = x - u;
            let dy = y - v;
            let head = dx * dx + dy * dy <= head_r * head_r;
            let neck = y >= v && y < torso_top && dx.abs() <= neck_hw;
            if head || neck {
                img.set(row, col, SKIN);
            } else if y >= torso_top && y <= torso_bottom {
                // shoulders round off over the first tenth of the torso
                let t = ((y - torso_top) / (0.1 * (torso_bottom - torso_top)).max(1e-9)).min(1.0);
                let half = torso_hw * (0.75 + 0.25 * t);
                if dx.abs() <= half {
                    img.set(row, col, SHIRT);
                }
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    fn silhouette_mask(img: &FrameImage, bg: &FrameImage) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for r in 0..img.height() {
            for c in 0..img.width() {
                if img.pixel(r, c) != bg.pixel(r, c) {
                    out.push((r, c));
                }
            }
        }
        out
    }

    #[test]
    fn speaker_behind_leaves_background() {
        let cam = CameraIntrinsics::default();
        let w = Pose::new(0.0, 1.6, 0.0, 0.0);
        let s = Pose::new(0.0, 1.6, -2.0, 0.0);
        let img = render_frame(&w, &s, &cam, 3);
        assert_eq!(img, render_background(&cam, 3));
    }

    #[test]
    fn speaker_ahead_is_centred() {
        let cam = CameraIntrinsics::default();
        let w = Pose::new(0.0, 1.6, 0.0, 0.0);
        let s = Pose::new(0.0, 1.6, 2.0, 0.0);
        let img = render_frame(&w, &s, &cam, 3);
        let mask = silhouette_mask(&img, &render_background(&cam, 3));
        assert!(mask.len() > 100);
        let cx = mask.iter().map(|&(_, c)| c as f64 + 0.5).sum::<f64>() / mask.len() as f64;
        assert!((cx - 112.0).abs() <= 2.0, "centroid column {cx}");
    }

    #[test]
    fn nearer_speaker_is_larger() {
        let cam = CameraIntrinsics::default();
        let w = Pose::new(0.0, 1.6, 0.0, 0.0);
        let bg = render_background(&cam, 1);
        let near = silhouette_mask(&render_frame(&w, &Pose::new(0.0, 1.6, 1.5, 0.0), &cam, 1), &bg);
        let far = silhouette_mask(&render_frame(&w, &Pose::new(0.0, 1.6, 4.0, 0.0), &cam, 1), &bg);
        assert!(near.len() > far.len());
    }

    #[test]
    fn frames_are_deterministic() {
        let cam = CameraIntrinsics::default();
        let w = Pose::new(1.0, 1.6, 1.0, 30.0);
        let s = Pose::new(2.0, 1.7, 3.0, 0.0);
        assert_eq!(render_frame(&w, &s, &cam, 8), render_frame(&w, &s, &cam, 8));
        assert_ne!(render_frame(&w, &s, &cam, 8), render_frame(&w, &s, &cam, 9));
    }
}
