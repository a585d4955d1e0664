//! Image quality metrics.

use crate::error::Result;
use crate::image::ImageBuffer;
use crate::math;

/// Reported PSNR when the images are (numerically) identical.
pub const PSNR_CAP: f64 = 99.0;

/// `10·log10(1 / MSE)` for images in `[0, 1]`, capped at [`PSNR_CAP`].
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    a.check_same_shape(b, "psnr")?;
    let n = a.len().max(1) as f64;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n;
    if mse < 1e-10 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * math::log10(1.0 / mse)).min(PSNR_CAP))
}

pub use crate::loss::ssim;
