//! Reproducible synthetic scenes with an orbit camera rig.

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{rng_for, stream, TrainConfig, View, BACKGROUND};
use crate::error::{Error, Result};
use crate::gaussian::{color_len, rgb_to_sh_dc, Camera, Gaussian, GaussianCloud};
use crate::image::area_downsample;
use crate::math::{self, Quat, Vec3};
use crate::raster::render;

/// Ground-truth cloud with high-resolution train and test cameras.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthScene {
    pub truth: GaussianCloud,
    pub train_cameras: Vec<Camera>,
    pub test_cameras: Vec<Camera>,
    pub factor: usize,
}

impl SynthScene {
    /// Low-resolution training view `i`: area-downsampled ground-truth render.
    pub fn lr_view(&self, i: usize) -> Result<View> {
        let cam = self
            .train_cameras
            .get(i)
            .ok_or_else(|| Error::invalid("training view index out of range"))?;
        let hr = render(&self.truth, cam, BACKGROUND).color.clamped01();
        Ok(View {
            camera: cam.downscaled(self.factor),
            image: area_downsample(&hr, self.factor)?,
        })
    }

    pub fn lr_views(&self) -> Result<Vec<View>> {
        (0..self.train_cameras.len()).map(|i| self.lr_view(i)).collect()
    }

    /// Ground-truth high-resolution renders at the training cameras.
    pub fn hr_train_views(&self) -> Vec<View> {
        self.views_at(&self.train_cameras)
    }

    /// Ground-truth high-resolution renders at the held-out cameras.
    pub fn test_views(&self) -> Vec<View> {
        self.views_at(&self.test_cameras)
    }

    fn views_at(&self, cams: &[Camera]) -> Vec<View> {
        cams.iter()
            .map(|c| View {
                camera: c.clone(),
                image: render(&self.truth, c, BACKGROUND).color.clamped01(),
            })
            .collect()
    }
}

fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Quat {
    loop {
        let q = Quat(core::array::from_fn(|_| rng.sample(StandardNormal)));
        if q.norm() > 1e-6 {
            return q.normalized();
        }
    }
}

/// `n` random anisotropic Gaussians with centers in `[-extent, extent]³`,
/// log-uniform scales and random view-dependent colors.
pub fn synth_cloud<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    extent: f64,
    scale_range: (f64, f64),
    sh_degree: usize,
) -> Result<GaussianCloud> {
    if n == 0 {
        return Err(Error::invalid("a synthetic scene needs at least one Gaussian"));
    }
    let (lo, hi) = (math::ln(scale_range.0), math::ln(scale_range.1));
    let mut cloud = GaussianCloud::new(sh_degree)?;
    for _ in 0..n {
        let mean = Vec3(core::array::from_fn(|_| rng.random_range(-extent..=extent)));
        let scale = core::array::from_fn(|_| math::exp(lo + (hi - lo) * rng.random::<f64>()));
        let opacity = rng.random_range(0.5..0.95);
        let mut sh = alloc::vec![0.0; color_len(sh_degree)];
        for c in sh.iter_mut().take(3) {
            *c = rgb_to_sh_dc(rng.random_range(0.1..0.9));
        }
        for c in sh.iter_mut().skip(3) {
            *c = 0.1 * rng.sample::<f64, _>(StandardNormal);
        }
        cloud.push(Gaussian::from_decoded(mean, scale, random_rotation(rng), opacity, sh)?)?;
    }
    Ok(cloud)
}

/// Cameras on a circle of the given radius and elevation looking at the
/// origin, starting at azimuth `phase · 2π / n`.
pub fn orbit_cameras(n: usize, phase: f64, cfg: &TrainConfig, width: usize, height: usize) -> Vec<Camera> {
    let el = cfg.camera_elevation_deg * PI / 180.0;
    let fov = cfg.fov_deg * PI / 180.0;
    (0..n)
        .map(|i| {
            let az = 2.0 * PI * (i as f64 + phase) / n as f64;
            let eye = Vec3([
                math::cos(el) * math::cos(az),
                math::cos(el) * math::sin(az),
                math::sin(el),
            ])
            .scale(cfg.camera_radius);
            Camera::look_at(eye, Vec3([0.0; 3]), Vec3([0.0, 0.0, 1.0]), fov, width, height)
        })
        .collect()
}

/// Ground-truth scene for `cfg`: training views on the orbit and held-out
/// views halfway between them.
pub fn synth_scene(cfg: &TrainConfig) -> Result<SynthScene> {
    cfg.validate()?;
    let mut rng = rng_for(cfg.seed, stream::SCENE);
    let truth = synth_cloud(
        &mut rng,
        cfg.scene_gaussians,
        cfg.scene_extent,
        (cfg.scene_scale_min, cfg.scene_scale_max),
        cfg.sh_degree,
    )?;
    let (w, h) = (cfg.hr_width(), cfg.hr_height());
    Ok(SynthScene {
        truth,
        train_cameras: orbit_cameras(cfg.train_views, 0.0, cfg, w, h),
        test_cameras: orbit_cameras(cfg.test_views, 0.5, cfg, w, h),
        factor: cfg.sr_factor,
    })
}
