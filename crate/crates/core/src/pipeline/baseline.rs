//! Plain high-resolution training on bicubic-upsampled inputs.

use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::{init_cloud, rng_for, stream, BicubicResolver, DensityDriver, Stage1Output, SuperResolver, TrainConfig, TrainLog, View, BACKGROUND};
use crate::densify::scene_extent;
use crate::error::{Error, Result};
use crate::gaussian::Camera;
use crate::loss::photometric;
use crate::metrics::psnr;
use crate::raster::{render, render_backward, Upstream};
use crate::robust::{robust_step, strip_flags, OptimizerState};

/// Trains from the stage-1 initialization for `stage1_iters + stage2_iters`
/// iterations with the photometric loss against bicubic-upsampled views,
/// densifying until `stage1_densify_stop + stage2_densify_stop`.
pub fn baseline_train(lr_views: &[View], cfg: &TrainConfig) -> Result<Stage1Output> {
    run(lr_views, cfg).map_err(|e| e.in_stage("baseline"))
}

fn run(lr_views: &[View], cfg: &TrainConfig) -> Result<Stage1Output> {
    cfg.validate()?;
    if lr_views.is_empty() {
        return Err(Error::invalid("baseline needs at least one view"));
    }
    let f = cfg.sr_factor;
    let views: Vec<View> = lr_views
        .iter()
        .map(|v| {
            let cam = v.camera.upscaled(f);
            Ok(View {
                image: BicubicResolver.upscale(&v.image, f, &cam)?,
                camera: cam,
            })
        })
        .collect::<Result<_>>()?;
    let iters = cfg.stage1_iters + cfg.stage2_iters;
    let mut cloud = init_cloud(cfg)?;
    let mut rng = rng_for(cfg.seed, stream::BASELINE);
    let cams: Vec<Camera> = views.iter().map(|v| v.camera.clone()).collect();
    let extent = scene_extent(&cams);
    let mut state = OptimizerState::new(&cloud, cfg.learning_rates(iters), extent);
    let stop = cfg.stage1_densify_stop + cfg.stage2_densify_stop;
    let mut density = DensityDriver::new(&cloud, cfg.adc_params(stop), extent);
    let gate = cfg.gate(false);
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = Vec::new();
    for it in 0..iters {
        if order.is_empty() {
            order = (0..views.len()).collect();
            order.shuffle(&mut rng);
            order.reverse();
        }
        let vi = order.pop().unwrap_or(0);
        let view = &views[vi];
        let out = render(&cloud, &view.camera, BACKGROUND);
        let photo = photometric(&out.color, &view.image, cfg.ssim_beta)?;
        let grads = render_backward(&cloud, &view.camera, BACKGROUND, &Upstream::color(photo.grad_pred))?;
        robust_step(&mut cloud, &grads, &mut state, &gate)?;
        let step = it + 1;
        if step % cfg.log_interval == 0 || step == iters {
            log.push(step, "baseline.l1", photo.l1);
            log.push(step, "baseline.dssim", photo.d_ssim);
            log.push(step, "baseline.loss", photo.value);
            log.push(step, "baseline.psnr", psnr(&out.color.clamped01(), &view.image)?);
            log.push(step, "baseline.gaussians", cloud.len() as f64);
        }
        density.after_step(step, &mut cloud, &mut state, &grads, &view.camera, &mut rng)?;
    }
    strip_flags(&mut cloud);
    Ok(Stage1Output { cloud, log })
}
