use alloc::vec::Vec;

use super::Tensor;
use crate::error::{Error, Result};
use crate::image::ImageBuffer;

/// Per-pixel normalized `K×K` kernels stored as a `K²×H×W` tensor;
/// tap `(dy, dx)` lives in plane `(dy + r)·K + (dx + r)` with `r = K/2`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlurKernelField {
    pub size: usize,
    pub weights: Tensor,
}

impl BlurKernelField {
    pub fn new(size: usize, weights: Tensor) -> Result<Self> {
        if size % 2 == 0 || weights.channels != size * size {
            return Err(Error::invalid("blur kernels need odd K and K² planes"));
        }
        Ok(BlurKernelField { size, weights })
    }

    /// Center-delta kernels (identity blur).
    pub fn identity(size: usize, width: usize, height: usize) -> Result<Self> {
        let mut t = Tensor::zeros(size * size, height, width);
        let center = (size * size) / 2;
        t.plane_mut(center).iter_mut().for_each(|v| *v = 1.0);
        Self::new(size, t)
    }

    pub fn width(&self) -> usize {
        self.weights.width
    }

    pub fn height(&self) -> usize {
        self.weights.height
    }

    pub fn kernel(&self, x: usize, y: usize) -> Vec<f64> {
        let n = self.weights.plane_len();
        let p = y * self.width() + x;
        (0..self.size * self.size).map(|k| self.weights.data[k * n + p]).collect()
    }
}

/// Reflect-101 index (`-1 → 1`, `n → n − 2`).
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let period = 2 * (n - 1);
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

fn check(img: &ImageBuffer, field: &BlurKernelField) -> Result<()> {
    if img.width() != field.width() || img.height() != field.height() {
        return Err(Error::dims(
            "apply_blur",
            alloc::format!("{}x{}", field.width(), field.height()),
            alloc::format!("{}x{}", img.width(), img.height()),
        ));
    }
    Ok(())
}

/// `out(p) = Σ_o kernel_p(o) · img(reflect(p + o))`.
pub fn apply_blur(img: &ImageBuffer, field: &BlurKernelField) -> Result<ImageBuffer> {
    check(img, field)?;
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let k = field.size;
    let r = (k / 2) as isize;
    let n = w * h;
    let mut out = ImageBuffer::new(w, h, ch);
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let dst = out.index(x, y, 0);
            for ky in 0..k {
                let sy = reflect(y as isize + ky as isize - r, h);
                for kx in 0..k {
                    let sx = reflect(x as isize + kx as isize - r, w);
                    let wt = field.weights.data[(ky * k + kx) * n + p];
                    let src = img.index(sx, sy, 0);
                    for c in 0..ch {
                        out.data_mut()[dst + c] += wt * img.data()[src + c];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`apply_blur`] with respect to the image and the kernels.
pub fn apply_blur_backward(
    img: &ImageBuffer,
    field: &BlurKernelField,
    grad_out: &ImageBuffer,
) -> Result<(ImageBuffer, Tensor)> {
    check(img, field)?;
    img.check_same_shape(grad_out, "apply_blur_backward")?;
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let k = field.size;
    let r = (k / 2) as isize;
    let n = w * h;
    let mut d_img = ImageBuffer::new(w, h, ch);
    let mut d_kernel = Tensor::zeros(k * k, h, w);
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let g = grad_out.index(x, y, 0);
            for ky in 0..k {
                let sy = reflect(y as isize + ky as isize - r, h);
                for kx in 0..k {
                    let sx = reflect(x as isize + kx as isize - r, w);
                    let plane = (ky * k + kx) * n + p;
                    let wt = field.weights.data[plane];
                    let src = img.index(sx, sy, 0);
                    let mut acc = 0.0;
                    for c in 0..ch {
                        let go = grad_out.data()[g + c];
                        acc += go * img.data()[src + c];
                        d_img.data_mut()[src + c] += wt * go;
                    }
                    d_kernel.data[plane] = acc;
                }
            }
        }
    }
    Ok((d_img, d_kernel))
}
