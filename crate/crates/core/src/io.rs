//! WAV and PNG artifact I/O.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};
use crate::simulator::frame::FrameImage;

/// Writes a 2-channel 32-bit float WAV.
pub fn write_wav_stereo(path: &Path, left: &[f32], right: &[f32], sample_rate: u32) -> Result<()> {
    if left.len() != right.len() {
        return Err(Error::Shape("stereo channels differ in length".into()));
    }
    let spec = hound::WavSpec {
        channels: 2,
        sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| Error::format(path, e.to_string()))?;
    for (l, r) in left.iter().zip(right) {
        w.write_sample(*l).map_err(|e| Error::format(path, e.to_string()))?;
        w.write_sample(*r).map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.finalize().map_err(|e| Error::format(path, e.to_string()))
}

/// Reads a 2-channel float WAV written by [`write_wav_stereo`].
pub fn read_wav_stereo(path: &Path) -> Result<(Vec<f32>, Vec<f32>, u32)> {
    let mut r = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    })?;
    let spec = r.spec();
    if spec.channels != 2 || spec.sample_format != hound::SampleFormat::Float {
        return Err(Error::format(path, "expected 2-channel float WAV"));
    }
    let mut left = Vec::with_capacity(r.len() as usize / 2);
    let mut right = Vec::with_capacity(r.len() as usize / 2);
    for (i, s) in r.samples::<f32>().enumerate() {
        let s = s.map_err(|e| Error::format(path, e.to_string()))?;
        if i % 2 == 0 {
            left.push(s);
        } else {
            right.push(s);
        }
    }
    Ok((left, right, spec.sample_rate))
}

pub fn write_png(path: &Path, img: &FrameImage) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), img.width() as u32, img.height() as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().map_err(|e| Error::format(path, e.to_string()))?;
    w.write_image_data(img.data())
        .map_err(|e| Error::format(path, e.to_string()))
}

pub fn read_png(path: &Path) -> Result<FrameImage> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let dec = png::Decoder::new(BufReader::new(file));
    let mut reader = dec.read_info().map_err(|e| Error::format(path, e.to_string()))?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::format(path, e.to_string()))?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::format(path, "expected 8-bit RGB PNG"));
    }
    buf.truncate(info.buffer_size());
    FrameImage::new(info.width as usize, info.height as usize, buf)
}
