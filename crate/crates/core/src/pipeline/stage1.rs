//! Low-resolution optimization with depth regularization.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{rng_for, stream, DensityDriver, DepthMap, DepthProvider, TrainConfig, TrainLog, View, BACKGROUND};
use crate::densify::scene_extent;
use crate::error::{Error, Result};
use crate::gaussian::{color_len, Camera, Gaussian, GaussianCloud};
use crate::loss::{pearson_depth, pearson_depth_patched, photometric};
use crate::math::{self, Quat, Vec3};
use crate::metrics::psnr;
use crate::raster::{render, render_backward, Upstream};
use crate::robust::{robust_step, strip_flags, OptimizerState};

/// Result of a stage-1 run.
#[derive(Clone, Debug)]
pub struct Stage1Output {
    pub cloud: GaussianCloud,
    pub log: TrainLog,
}

/// Gray isotropic Gaussians at random positions in the scene cube; each
/// scale is the RMS distance to the three nearest neighbours.
pub fn init_cloud(cfg: &TrainConfig) -> Result<GaussianCloud> {
    let mut rng = rng_for(cfg.seed, stream::STAGE1);
    init_cloud_with(cfg, &mut rng)
}

fn init_cloud_with(cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<GaussianCloud> {
    let e = cfg.scene_extent;
    let centers: Vec<Vec3> = (0..cfg.init_gaussians)
        .map(|_| Vec3(core::array::from_fn(|_| rng.random_range(-e..=e))))
        .collect();
    let mut cloud = GaussianCloud::new(cfg.sh_degree)?;
    for (i, c) in centers.iter().enumerate() {
        let mut d: Vec<f64> = centers
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, o)| (*o - *c).dot(&(*o - *c)))
            .collect();
        d.sort_by(f64::total_cmp);
        let k = d.len().min(3);
        let s = if k == 0 {
            0.1 * e
        } else {
            math::sqrt(d[..k].iter().sum::<f64>() / k as f64).max(1e-3 * e)
        };
        cloud.push(Gaussian::from_decoded(
            *c,
            [s; 3],
            Quat::IDENTITY,
            cfg.init_opacity,
            alloc::vec![0.0; color_len(cfg.sh_degree)],
        )?)?;
    }
    Ok(cloud)
}

/// Optimizes a fresh cloud against low-resolution views with the
/// photometric loss plus the weighted Pearson depth loss.
pub fn stage1_train(views: &[View], depth: &dyn DepthProvider, cfg: &TrainConfig) -> Result<Stage1Output> {
    run(views, depth, cfg).map_err(|e| e.in_stage("stage1"))
}

fn run(views: &[View], depth: &dyn DepthProvider, cfg: &TrainConfig) -> Result<Stage1Output> {
    cfg.validate()?;
    if views.len() < 2 {
        return Err(Error::invalid("stage 1 needs at least two views"));
    }
    let mut rng = rng_for(cfg.seed, stream::STAGE1);
    let mut cloud = init_cloud_with(cfg, &mut rng)?;
    let priors: Vec<DepthMap> = if cfg.depth_weight > 0.0 {
        views
            .iter()
            .enumerate()
            .map(|(i, v)| depth.estimate(i, &v.image, &v.camera))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let cams: Vec<Camera> = views.iter().map(|v| v.camera.clone()).collect();
    let extent = scene_extent(&cams);
    let mut state = OptimizerState::new(&cloud, cfg.learning_rates(cfg.stage1_iters), extent);
    let mut density = DensityDriver::new(&cloud, cfg.adc_params(cfg.stage1_densify_stop), extent);
    let gate = cfg.gate(cfg.gate_stage1);
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = Vec::new();
    for it in 0..cfg.stage1_iters {
        if order.is_empty() {
            order = (0..views.len()).collect();
            order.shuffle(&mut rng);
            order.reverse();
        }
        let vi = order.pop().unwrap_or(0);
        let view = &views[vi];
        let out = render(&cloud, &view.camera, BACKGROUND);
        let photo = photometric(&out.color, &view.image, cfg.ssim_beta)?;
        let mut upstream = Upstream::color(photo.grad_pred);
        let mut depth_value = 0.0;
        if let Some(prior) = priors.get(vi) {
            let p = if cfg.depth_patch == 0 {
                pearson_depth(&out.depth, &prior.depth, &prior.mask)?
            } else {
                pearson_depth_patched(&out.depth, &prior.depth, &prior.mask, cfg.depth_patch)?
            };
            depth_value = p.value;
            let mut g = p.grad;
            g.scale_assign(cfg.depth_weight);
            upstream.depth = Some(g);
        }
        let grads = render_backward(&cloud, &view.camera, BACKGROUND, &upstream)?;
        robust_step(&mut cloud, &grads, &mut state, &gate)?;
        let step = it + 1;
        if step % cfg.log_interval == 0 || step == cfg.stage1_iters {
            log.push(step, "stage1.l1", photo.l1);
            log.push(step, "stage1.dssim", photo.d_ssim);
            log.push(step, "stage1.depth", depth_value);
            log.push(step, "stage1.loss", photo.value + cfg.depth_weight * depth_value);
            log.push(step, "stage1.psnr", psnr(&out.color.clamped01(), &view.image)?);
            log.push(step, "stage1.gaussians", cloud.len() as f64);
        }
        density.after_step(step, &mut cloud, &mut state, &grads, &view.camera, &mut rng)?;
    }
    strip_flags(&mut cloud);
    Ok(Stage1Output { cloud, log })
}
