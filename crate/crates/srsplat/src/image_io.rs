//! 8- and 16-bit PNG read/write for `[0, 1]` image buffers.

use std::io::Cursor;
use std::path::Path;

use png::{BitDepth, ColorType, Transformations};
use srsplat_core::ImageBuffer;

use crate::error::{Error, Result};

/// Sample width of written PNGs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bits {
    Eight,
    Sixteen,
}

/// Encodes a 1- or 3-channel image, clamping samples to `[0, 1]`.
pub fn encode_png(img: &ImageBuffer, bits: Bits) -> std::result::Result<Vec<u8>, String> {
    let color = match img.channels() {
        1 => ColorType::Grayscale,
        3 => ColorType::Rgb,
        c => return Err(format!("cannot write a {c}-channel image as PNG")),
    };
    if img.is_empty() {
        return Err("cannot write an empty image as PNG".into());
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width() as u32, img.height() as u32);
        enc.set_color(color);
        let data: Vec<u8> = match bits {
            Bits::Eight => {
                enc.set_depth(BitDepth::Eight);
                img.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
            }
            Bits::Sixteen => {
                enc.set_depth(BitDepth::Sixteen);
                img.data()
                    .iter()
                    .flat_map(|&v| ((v.clamp(0.0, 1.0) * 65535.0).round() as u16).to_be_bytes())
                    .collect()
            }
        };
        let mut w = enc.write_header().map_err(|e| e.to_string())?;
        w.write_image_data(&data).map_err(|e| e.to_string())?;
        w.finish().map_err(|e| e.to_string())?;
    }
    Ok(out)
}

fn srgb_to_linear(v: f64) -> f64 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

/// Decodes a PNG to samples in `[0, 1]`. Alpha channels are dropped; with
/// `srgb` the sRGB transfer curve is inverted.
pub fn decode_png(bytes: &[u8], srgb: bool) -> std::result::Result<ImageBuffer, String> {
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(Transformations::EXPAND);
    let mut reader = dec.read_info().map_err(|e| e.to_string())?;
    let size = reader.output_buffer_size().ok_or("PNG too large")?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
    let (w, h) = (info.width as usize, info.height as usize);
    let (stored, keep) = match info.color_type {
        ColorType::Grayscale => (1, 1),
        ColorType::GrayscaleAlpha => (2, 1),
        ColorType::Rgb => (3, 3),
        ColorType::Rgba => (4, 3),
        ColorType::Indexed => return Err("indexed PNG was not expanded".into()),
    };
    let samples: Vec<f64> = match info.bit_depth {
        BitDepth::Sixteen => buf[..w * h * stored * 2]
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / 65535.0)
            .collect(),
        BitDepth::Eight => buf[..w * h * stored].iter().map(|&b| b as f64 / 255.0).collect(),
        d => return Err(format!("unsupported PNG bit depth {d:?}")),
    };
    let data: Vec<f64> = samples
        .chunks_exact(stored)
        .flat_map(|px| px[..keep].iter().map(|&v| if srgb { srgb_to_linear(v) } else { v }))
        .collect();
    ImageBuffer::from_vec(w, h, keep, data).map_err(|e| e.to_string())
}

pub fn write_png(path: &Path, img: &ImageBuffer, bits: Bits) -> Result<()> {
    let bytes = encode_png(img, bits).map_err(|m| Error::format(path, m))?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_png(path: &Path, srgb: bool) -> Result<ImageBuffer> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_png(&bytes, srgb).map_err(|m| Error::format(path, m))
}
