//! Occlusion and noise applied to supervision images.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::image::ImageBuffer;

/// Pastes `rects` random solid rectangles (10–35% of each side) and adds
/// Gaussian noise of std `noise`, then clamps to `[0, 1]`.
pub fn corrupt_image<R: Rng + ?Sized>(img: &ImageBuffer, rng: &mut R, rects: usize, noise: f64) -> ImageBuffer {
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let mut out = img.clone();
    for _ in 0..rects {
        let rw = ((w as f64 * rng.random_range(0.1..0.35)) as usize).max(1);
        let rh = ((h as f64 * rng.random_range(0.1..0.35)) as usize).max(1);
        let x0 = rng.random_range(0..=w - rw);
        let y0 = rng.random_range(0..=h - rh);
        let color: alloc::vec::Vec<f64> = (0..ch).map(|_| rng.random()).collect();
        for y in y0..y0 + rh {
            for x in x0..x0 + rw {
                for (c, &v) in color.iter().enumerate() {
                    out.set(x, y, c, v);
                }
            }
        }
    }
    if noise > 0.0 {
        for v in out.data_mut() {
            *v += noise * rng.sample::<f64, _>(StandardNormal);
        }
    }
    out.clamped01()
}
