//! Image patch sequences for the visual encoder.
//!
//! Patches are taken in row-major order over the patch grid; each patch is
//! flattened row by row with the three channels innermost.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::simulator::frame::FrameImage;

pub const DEFAULT_PATCH: usize = 16;

/// `L_v` patches by `3 r^2` raw intensities.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchSequence {
    pub data: Array2<u8>,
    pub patch: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
}

impl PatchSequence {
    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    /// Values scaled to `[0, 1]`.
    pub fn to_unit(&self) -> Array2<f64> {
        self.data.mapv(|v| v as f64 / 255.0)
    }
}

pub fn patchify(img: &FrameImage, r: usize) -> Result<PatchSequence> {
    let (w, h) = (img.width(), img.height());
    if r == 0 || w % r != 0 || h % r != 0 {
        return Err(Error::Shape(format!(
            "{w}x{h} image is not divisible into {r}x{r} patches"
        )));
    }
    let (gr, gc) = (h / r, w / r);
    let dim = 3 * r * r;
    let src = img.data();
    let mut data = Array2::zeros((gr * gc, dim));
    for pr in 0..gr {
        for pc in 0..gc {
            let p = pr * gc + pc;
            for y in 0..r {
                let row = pr * r + y;
                let start = (row * w + pc * r) * 3;
                for (k, v) in src[start..start + 3 * r].iter().enumerate() {
                    data[[p, y * 3 * r + k]] = *v;
                }
            }
        }
    }
    Ok(PatchSequence {
        data,
        patch: r,
        grid_rows: gr,
        grid_cols: gc,
    })
}

pub fn unpatchify(seq: &PatchSequence) -> Result<FrameImage> {
    let r = seq.patch;
    let (gr, gc) = (seq.grid_rows, seq.grid_cols);
    if seq.data.dim() != (gr * gc, 3 * r * r) {
        return Err(Error::Shape(format!(
            "patch matrix {:?} does not match its grid",
            seq.data.dim()
        )));
    }
    let w = gc * r;
    let mut out = vec![0u8; gr * r * w * 3];
    for pr in 0..gr {
        for pc in 0..gc {
            let p = pr * gc + pc;
            for y in 0..r {
                let start = ((pr * r + y) * w + pc * r) * 3;
                for k in 0..3 * r {
                    out[start + k] = seq.data[[p, y * 3 * r + k]];
                }
            }
        }
    }
    FrameImage::new(w, gr * r, out)
}
