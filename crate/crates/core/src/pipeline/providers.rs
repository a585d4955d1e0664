//! Stand-ins for the pretrained depth and super-resolution networks.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{rng_for, stream, BACKGROUND};
use crate::error::{Error, Result};
use crate::gaussian::{Camera, GaussianCloud};
use crate::image::{bicubic_upsample, ImageBuffer};
use crate::raster::render;

/// Depth prior with a per-pixel validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub depth: ImageBuffer,
    pub mask: Vec<bool>,
}

/// Monocular depth estimation for one view.
pub trait DepthProvider {
    /// `view` is the index within the training rig, used for seeding and errors.
    fn estimate(&self, view: usize, image: &ImageBuffer, camera: &Camera) -> Result<DepthMap>;
}

/// Upscales a low-resolution image by `factor`.
pub trait SuperResolver {
    /// `camera` is the high-resolution camera of the image.
    fn upscale(&self, image: &ImageBuffer, factor: usize, camera: &Camera) -> Result<ImageBuffer>;
}

/// Exact depth of the ground-truth cloud, optionally affinely distorted and
/// perturbed by multiplicative noise. Pixels with coverage below 0.5 are invalid.
#[derive(Clone, Debug)]
pub struct OracleDepth<'a> {
    pub truth: &'a GaussianCloud,
    pub scale: f64,
    pub offset: f64,
    pub noise: f64,
    pub seed: u64,
}

impl DepthProvider for OracleDepth<'_> {
    fn estimate(&self, view: usize, image: &ImageBuffer, camera: &Camera) -> Result<DepthMap> {
        if image.width() != camera.width || image.height() != camera.height {
            return Err(Error::Provider {
                view,
                message: format!(
                    "image is {}x{} but camera is {}x{}",
                    image.width(),
                    image.height(),
                    camera.width,
                    camera.height
                ),
            });
        }
        let out = render(self.truth, camera, BACKGROUND);
        let mut rng = rng_for(self.seed ^ view as u64, stream::DEPTH);
        let mask: Vec<bool> = out.alpha.data().iter().map(|&a| a > 0.5).collect();
        let mut depth = out.depth;
        for (d, &valid) in depth.data_mut().iter_mut().zip(&mask) {
            let n: f64 = rng.sample(StandardNormal);
            if valid {
                *d = self.scale * *d * (1.0 + self.noise * n) + self.offset;
            }
        }
        if mask.iter().filter(|&&m| m).count() < 2 {
            return Err(Error::Provider {
                view,
                message: "fewer than two pixels with valid depth".into(),
            });
        }
        Ok(DepthMap { depth, mask })
    }
}

/// Returns the ground-truth render at the requested camera; the input image
/// only fixes the expected size.
#[derive(Clone, Debug)]
pub struct OracleResolver<'a> {
    pub truth: &'a GaussianCloud,
}

impl SuperResolver for OracleResolver<'_> {
    fn upscale(&self, image: &ImageBuffer, factor: usize, camera: &Camera) -> Result<ImageBuffer> {
        check_size(image, factor, camera)?;
        Ok(render(self.truth, camera, BACKGROUND).color.clamped01())
    }
}

/// Bicubic interpolation clamped to `[0, 1]`.
#[derive(Clone, Copy, Debug, Default)]
pub struct BicubicResolver;

impl SuperResolver for BicubicResolver {
    fn upscale(&self, image: &ImageBuffer, factor: usize, camera: &Camera) -> Result<ImageBuffer> {
        check_size(image, factor, camera)?;
        Ok(bicubic_upsample(image, factor).clamped01())
    }
}

fn check_size(image: &ImageBuffer, factor: usize, camera: &Camera) -> Result<()> {
    if image.width() * factor != camera.width || image.height() * factor != camera.height {
        return Err(Error::dims(
            "super-resolver",
            format!("{}x{}", camera.width, camera.height),
            format!("{}x{} at x{}", image.width(), image.height(), factor),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{synth_scene, TrainConfig};

    fn small() -> TrainConfig {
        TrainConfig {
            scene_gaussians: 10,
            lr_width: 8,
            lr_height: 8,
            sr_factor: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn resolvers_produce_exact_factor_dims_in_range() {
        let scene = synth_scene(&small()).unwrap();
        let hr = &scene.train_cameras[0];
        let lr = scene.lr_view(0).unwrap();
        for r in [&OracleResolver { truth: &scene.truth } as &dyn SuperResolver, &BicubicResolver] {
            let up = r.upscale(&lr.image, 2, hr).unwrap();
            assert_eq!((up.width(), up.height()), (16, 16));
            assert!(up.data().iter().all(|v| (0.0..=1.0).contains(v)));
            assert!(r.upscale(&lr.image, 3, hr).is_err());
        }
    }

    #[test]
    fn oracle_depth_is_affine_and_masked() {
        let scene = synth_scene(&small()).unwrap();
        let lr = scene.lr_view(1).unwrap();
        let exact = OracleDepth { truth: &scene.truth, scale: 1.0, offset: 0.0, noise: 0.0, seed: 0 };
        let warped = OracleDepth { scale: 2.0, offset: 0.5, ..exact.clone() };
        let a = exact.estimate(1, &lr.image, &lr.camera).unwrap();
        let b = warped.estimate(1, &lr.image, &lr.camera).unwrap();
        assert_eq!(a.mask, b.mask);
        for i in 0..a.mask.len() {
            if a.mask[i] {
                assert!(a.depth.data()[i] > 0.0);
                assert!((2.0 * a.depth.data()[i] + 0.5 - b.depth.data()[i]).abs() < 1e-12);
            }
        }
        let wrong = ImageBuffer::new(3, 3, 3);
        assert!(matches!(exact.estimate(4, &wrong, &lr.camera), Err(Error::Provider { view: 4, .. })));
    }
}
