//! 8-bit PNG frames for `[3, h, w]` tensors in [-1, 1].

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use ndarray::{Array3, ArrayView3};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Linear map [-1, 1] → [0, 255] with rounding; out-of-range values saturate.
pub fn quantize(v: f64) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

pub fn dequantize(q: u8) -> f32 {
    q as f32 / 127.5 - 1.0
}

pub fn write_png<T: Real>(path: &Path, frame: ArrayView3<'_, T>) -> Result<()> {
    let (c, h, w) = frame.dim();
    if c != 3 {
        return Err(Error::shape("write_png", "3 channels", c));
    }
    let mut buf = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                buf.push(quantize(frame[[ch, y, x]].value()));
            }
        }
    }
    let file = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(file, w as u32, h as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| Error::Format(e.to_string()))?;
    writer.write_image_data(&buf).map_err(|e| Error::Format(e.to_string()))?;
    Ok(())
}

pub fn read_png(path: &Path) -> Result<Array3<f32>> {
    let file = std::io::BufReader::new(File::open(path)?);
    let decoder = png::Decoder::new(file);
    let mut reader = decoder.read_info().map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::Format(e.to_string()))?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Format(format!("{}: expected 8-bit RGB", path.display())));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    Ok(Array3::from_shape_fn((3, h, w), |(c, y, x)| dequantize(buf[(y * w + x) * 3 + c])))
}
