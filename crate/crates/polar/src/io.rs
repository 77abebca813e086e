//! PNG I/O: 16-bit grayscale for intensity/mosaic channels, 8-bit RGB for
//! visualization panels. Values map linearly between [0, 1] and the full
//! integer range.

use crate::{Map2d, PolarError, Result};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

fn png_err(path: &Path, e: png::EncodingError) -> PolarError {
    PolarError::Png {
        path: path.display().to_string(),
        source: Box::new(e),
    }
}

fn io_err(path: &Path, e: std::io::Error) -> PolarError {
    PolarError::Io {
        path: path.display().to_string(),
        source: e,
    }
}

/// Write a map as 16-bit grayscale, clamping to [0, 1].
pub fn write_gray16(path: &Path, m: &Map2d) -> Result<()> {
    let (h, w) = m.extents();
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Sixteen);
    let mut writer = enc.write_header().map_err(|e| png_err(path, e))?;
    let mut bytes = Vec::with_capacity(2 * m.len());
    for &v in m.data() {
        let q = (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
        bytes.extend_from_slice(&q.to_be_bytes());
    }
    writer
        .write_image_data(&bytes)
        .map_err(|e| png_err(path, e))
}

/// Read a 16-bit (or 8-bit) grayscale PNG into [0, 1].
pub fn read_gray16(path: &Path) -> Result<Map2d> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder.read_info().map_err(|e| PolarError::Png {
        path: path.display().to_string(),
        source: Box::new(e),
    })?;
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf).map_err(|e| PolarError::Png {
        path: path.display().to_string(),
        source: Box::new(e),
    })?;
    if info.color_type != png::ColorType::Grayscale {
        return Err(PolarError::Format {
            op: "read_gray16",
            msg: format!("{}: expected grayscale PNG", path.display()),
        });
    }
    let (h, w) = (info.height as usize, info.width as usize);
    let data: Vec<f32> = match info.bit_depth {
        png::BitDepth::Sixteen => buf[..2 * h * w]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f32 / 65535.0)
            .collect(),
        png::BitDepth::Eight => buf[..h * w].iter().map(|&b| b as f32 / 255.0).collect(),
        other => {
            return Err(PolarError::Format {
                op: "read_gray16",
                msg: format!("{}: unsupported bit depth {other:?}", path.display()),
            })
        }
    };
    Ok(Map2d::from_vec(h, w, data))
}

/// Write an interleaved 8-bit RGB buffer.
pub fn write_rgb8(path: &Path, h: usize, w: usize, rgb: &[u8]) -> Result<()> {
    if rgb.len() != 3 * h * w {
        return Err(PolarError::Format {
            op: "write_rgb8",
            msg: format!("buffer length {} != 3*{h}*{w}", rgb.len()),
        });
    }
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| png_err(path, e))?;
    writer.write_image_data(rgb).map_err(|e| png_err(path, e))
}
