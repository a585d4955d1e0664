use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Row-major, channel-interleaved floating point raster.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        ImageBuffer {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::dims(
                "ImageBuffer::from_vec",
                width * height * channels,
                data.len(),
            ));
        }
        Ok(ImageBuffer {
            width,
            height,
            channels,
            data,
        })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.index(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let i = self.index(x, y, c);
        self.data[i] = v;
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = self.index(x, y, 0);
        &self.data[i..i + self.channels]
    }

    pub fn same_shape(&self, other: &ImageBuffer) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub(crate) fn check_same_shape(&self, other: &ImageBuffer, context: &'static str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::dims(
                context,
                ShapeFmt(self.width, self.height, self.channels),
                ShapeFmt(other.width, other.height, other.channels),
            ))
        }
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn clamped01(mut self) -> Self {
        self.clamp01();
        self
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        ImageBuffer {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Copies a `w × h` window starting at `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<ImageBuffer> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::invalid("crop window exceeds image bounds"));
        }
        let mut out = ImageBuffer::new(w, h, self.channels);
        for y in 0..h {
            let src = self.index(x0, y0 + y, 0);
            let dst = out.index(0, y, 0);
            out.data[dst..dst + w * self.channels]
                .copy_from_slice(&self.data[src..src + w * self.channels]);
        }
        Ok(out)
    }

    /// Adds `patch` into the window starting at `(x0, y0)`.
    pub fn add_patch(&mut self, x0: usize, y0: usize, patch: &ImageBuffer) -> Result<()> {
        if x0 + patch.width > self.width
            || y0 + patch.height > self.height
            || patch.channels != self.channels
        {
            return Err(Error::invalid("patch exceeds image bounds"));
        }
        for y in 0..patch.height {
            for x in 0..patch.width {
                for c in 0..self.channels {
                    let i = self.index(x0 + x, y0 + y, c);
                    self.data[i] += patch.get(x, y, c);
                }
            }
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &ImageBuffer) -> Result<()> {
        self.check_same_shape(other, "ImageBuffer::add_assign")?;
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale_assign(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }
}

struct ShapeFmt(usize, usize, usize);

impl core::fmt::Display for ShapeFmt {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{}x{}x{}", self.0, self.1, self.2)
    }
}

/// Block-mean reduction by an integer factor.
pub fn area_downsample(img: &ImageBuffer, factor: usize) -> Result<ImageBuffer> {
    if factor == 0 || img.width % factor != 0 || img.height % factor != 0 {
        return Err(Error::invalid(alloc::format!(
            "area downsample: {}x{} not divisible by factor {}",
            img.width,
            img.height,
            factor
        )));
    }
    let (w, h, ch) = (img.width / factor, img.height / factor, img.channels);
    let inv = 1.0 / (factor * factor) as f64;
    let mut out = ImageBuffer::new(w, h, ch);
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for dy in 0..factor {
                    for dx in 0..factor {
                        acc += img.get(x * factor + dx, y * factor + dy, c);
                    }
                }
                out.set(x, y, c, acc * inv);
            }
        }
    }
    Ok(out)
}

/// Nearest-neighbour upsampling by an integer factor.
pub fn nearest_upsample(img: &ImageBuffer, factor: usize) -> ImageBuffer {
    let mut out = ImageBuffer::new(img.width * factor, img.height * factor, img.channels);
    for y in 0..out.height {
        for x in 0..out.width {
            for c in 0..img.channels {
                out.set(x, y, c, img.get(x / factor, y / factor, c));
            }
        }
    }
    out
}

fn cubic_weight(t: f64) -> f64 {
    // Keys kernel, a = -0.5
    let a = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a
    } else {
        0.0
    }
}

/// Bicubic upsampling (half-pixel centers, edge clamp), output clamped to `[0, 1]`.
pub fn bicubic_upsample(img: &ImageBuffer, factor: usize) -> ImageBuffer {
    let (w, h, ch) = (img.width, img.height, img.channels);
    let (ow, oh) = (w * factor, h * factor);
    let mut out = ImageBuffer::new(ow, oh, ch);
    let inv = 1.0 / factor as f64;
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    for oy in 0..oh {
        let sy = (oy as f64 + 0.5) * inv - 0.5;
        let y0 = crate::math::floor(sy) as isize;
        let fy = sy - y0 as f64;
        let wy = [
            cubic_weight(1.0 + fy),
            cubic_weight(fy),
            cubic_weight(1.0 - fy),
            cubic_weight(2.0 - fy),
        ];
        for ox in 0..ow {
            let sx = (ox as f64 + 0.5) * inv - 0.5;
            let x0 = crate::math::floor(sx) as isize;
            let fx = sx - x0 as f64;
            let wx = [
                cubic_weight(1.0 + fx),
                cubic_weight(fx),
                cubic_weight(1.0 - fx),
                cubic_weight(2.0 - fx),
            ];
            for c in 0..ch {
                let mut acc = 0.0;
                for (j, wyj) in wy.iter().enumerate() {
                    let yy = clampi(y0 - 1 + j as isize, h);
                    for (i, wxi) in wx.iter().enumerate() {
                        let xx = clampi(x0 - 1 + i as isize, w);
                        acc += wyj * wxi * img.get(xx, yy, c);
                    }
                }
                out.set(ox, oy, c, acc.clamp(0.0, 1.0));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn downsample_of_nearest_upsample_is_identity() {
        let data: Vec<f64> = (0..4 * 3 * 3).map(|i| (i as f64) / 40.0).collect();
        let img = ImageBuffer::from_vec(4, 3, 3, data).unwrap();
        let back = area_downsample(&nearest_upsample(&img, 4), 4).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn bicubic_preserves_constants() {
        let img = ImageBuffer::filled(5, 4, 3, 0.37);
        let up = bicubic_upsample(&img, 4);
        assert_eq!(up.width(), 20);
        assert!(up.data().iter().all(|v| (v - 0.37).abs() < 1e-12));
    }

    #[test]
    fn crop_and_add_patch() {
        let data: Vec<f64> = (0..6 * 5).map(|i| i as f64).collect();
        let img = ImageBuffer::from_vec(6, 5, 1, data).unwrap();
        let c = img.crop(2, 1, 3, 2).unwrap();
        assert_eq!(c.data(), &[8.0, 9.0, 10.0, 14.0, 15.0, 16.0]);
        let mut z = ImageBuffer::new(6, 5, 1);
        z.add_patch(2, 1, &c).unwrap();
        assert_eq!(z.get(3, 2, 0), 15.0);
        assert!(img.crop(4, 4, 3, 2).is_err());
    }
}
