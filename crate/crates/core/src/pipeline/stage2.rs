//! High-resolution optimization from super-resolved supervision.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use super::{
    corrupt_image, rng_for, stream, synth_pseudo_views, DensityDriver, SuperResolver, TrainConfig, TrainLog, View,
    BACKGROUND,
};
use crate::densify::scene_extent;
use crate::error::{Error, Result};
use crate::gaussian::{Camera, GaussianCloud};
use crate::image::ImageBuffer;
use crate::loss::{loss_sr, loss_total_stage2, subpixel, tv, Stage2Terms};
use crate::metrics::psnr;
use crate::nn::{apply_blur, apply_blur_backward, BlurProposal, InconsistencyModel};
use crate::raster::{render, render_backward, Upstream};
use crate::robust::{robust_step, strip_flags, Adam, GateCounts, OptimizerState};

/// One stage-2 training target.
#[derive(Clone, Debug, PartialEq)]
pub struct Supervision {
    /// High-resolution camera.
    pub camera: Camera,
    /// Super-resolved target at the camera's resolution.
    pub target: ImageBuffer,
    /// Low-resolution image for the sub-pixel term: the input image for real
    /// views, the frozen low-resolution render for pseudo views.
    pub lr: ImageBuffer,
    pub pseudo: bool,
    pub corrupted: bool,
}

/// Everything stage 2 needs besides the configuration.
pub struct Stage2Input<'a> {
    /// Shuffle-split output.
    pub hr_cloud: GaussianCloud,
    pub lr_views: &'a [View],
    /// Frozen stage-1 cloud that renders the pseudo views.
    pub lr_cloud: &'a GaussianCloud,
    pub resolver: &'a dyn SuperResolver,
}

/// Result of a stage-2 run.
#[derive(Clone, Debug)]
pub struct Stage2Output {
    /// Final cloud with flags stripped.
    pub cloud: GaussianCloud,
    /// Final cloud with flags, for resumable checkpoints.
    pub checkpoint: GaussianCloud,
    pub im: Vec<InconsistencyModel>,
    pub bp: BlurProposal,
    pub gate: GateCounts,
    pub log: TrainLog,
}

/// Targets for every real view followed by every pseudo view, with the
/// configured fraction corrupted.
pub fn build_supervision(input: &Stage2Input<'_>, cfg: &TrainConfig) -> Result<Vec<Supervision>> {
    let f = cfg.sr_factor;
    let mut out = Vec::new();
    for v in input.lr_views {
        let cam = v.camera.upscaled(f);
        out.push(Supervision {
            target: check_target(input.resolver.upscale(&v.image, f, &cam)?, &cam)?,
            camera: cam,
            lr: v.image.clone(),
            pseudo: false,
            corrupted: false,
        });
    }
    if cfg.pseudo_ratio > 0 && cfg.pseudo_per_pair > 0 {
        let lr_cams: Vec<Camera> = input.lr_views.iter().map(|v| v.camera.clone()).collect();
        for lr_cam in synth_pseudo_views(&lr_cams, cfg.pseudo_per_pair)? {
            let lr = render(input.lr_cloud, &lr_cam, BACKGROUND).color.clamped01();
            let cam = lr_cam.upscaled(f);
            out.push(Supervision {
                target: check_target(input.resolver.upscale(&lr, f, &cam)?, &cam)?,
                camera: cam,
                lr,
                pseudo: true,
                corrupted: false,
            });
        }
    }
    let n_bad = libm::round(cfg.corruption_fraction * out.len() as f64) as usize;
    if n_bad > 0 {
        let mut rng = rng_for(cfg.seed, stream::CORRUPT);
        let mut idx: Vec<usize> = (0..out.len()).collect();
        idx.shuffle(&mut rng);
        for &i in &idx[..n_bad] {
            out[i].target = corrupt_image(&out[i].target, &mut rng, cfg.corruption_rects, cfg.corruption_noise);
            out[i].corrupted = true;
        }
    }
    Ok(out)
}

fn check_target(img: ImageBuffer, cam: &Camera) -> Result<ImageBuffer> {
    if img.width() != cam.width || img.height() != cam.height || img.channels() != 3 {
        return Err(Error::dims(
            "super-resolver output",
            alloc::format!("{}x{}x3", cam.width, cam.height),
            alloc::format!("{}x{}x{}", img.width(), img.height(), img.channels()),
        ));
    }
    Ok(img)
}

/// Builds the supervision set and trains the high-resolution cloud.
pub fn stage2_train(input: Stage2Input<'_>, cfg: &TrainConfig) -> Result<Stage2Output> {
    let run = || {
        cfg.validate()?;
        if input.lr_views.is_empty() {
            return Err(Error::invalid("stage 2 needs at least one view"));
        }
        let sup = build_supervision(&input, cfg)?;
        stage2_train_on(input.hr_cloud, &sup, cfg)
    };
    run().map_err(|e| e.in_stage("stage2"))
}

/// View index for iteration `it`: each real view is followed by
/// `pseudo_ratio` pseudo views, both visited round-robin.
fn scheduled(it: usize, n_real: usize, n_pseudo: usize, ratio: usize) -> usize {
    if n_pseudo == 0 || ratio == 0 {
        return it % n_real;
    }
    let period = 1 + ratio;
    let (cycle, pos) = (it / period, it % period);
    if pos == 0 {
        cycle % n_real
    } else {
        n_real + (cycle * ratio + pos - 1) % n_pseudo
    }
}

/// Stage-2 loop over precomputed supervision.
pub fn stage2_train_on(mut cloud: GaussianCloud, sup: &[Supervision], cfg: &TrainConfig) -> Result<Stage2Output> {
    let n_real = sup.iter().filter(|s| !s.pseudo).count();
    if n_real == 0 || sup[..n_real].iter().any(|s| s.pseudo) {
        return Err(Error::invalid("supervision must list real views first"));
    }
    let n_pseudo = sup.len() - n_real;
    let f = cfg.sr_factor;
    let mut rng = rng_for(cfg.seed, stream::STAGE2);
    let mut net_rng = rng_for(cfg.seed, stream::NETS);
    let n_im = if cfg.im_per_view { sup.len() } else { 1 };
    let mut ims: Vec<InconsistencyModel> = (0..n_im).map(|_| InconsistencyModel::new(net_rng.random())).collect();
    let mut im_opt: Vec<Adam> = ims.iter().map(|m| Adam::new(m.params.len(), cfg.lr_nets)).collect();
    let mut bp = BlurProposal::new(cfg.kernel_size(), net_rng.random())?;
    let mut bp_opt = Adam::new(bp.params.len(), cfg.lr_nets);

    let cams: Vec<Camera> = sup[..n_real].iter().map(|s| s.camera.clone()).collect();
    let extent = scene_extent(&cams);
    let mut state = OptimizerState::new(&cloud, cfg.learning_rates(cfg.stage2_iters), extent);
    let mut density = DensityDriver::new(&cloud, cfg.adc_params(cfg.stage2_densify_stop), extent);
    let gate = cfg.gate(cfg.gate_stage2);
    let mut gate_total = GateCounts::default();
    let mut log = TrainLog::default();

    for it in 0..cfg.stage2_iters {
        let si = scheduled(it, n_real, n_pseudo, cfg.pseudo_ratio);
        let s = &sup[si];
        let (w, h) = (s.camera.width, s.camera.height);
        let out = render(&cloud, &s.camera, BACKGROUND);
        let (pw, ph) = if cfg.patch_size == 0 {
            (w, h)
        } else {
            (cfg.patch_size.min(w), cfg.patch_size.min(h))
        };
        let x0 = rng.random_range(0..=w - pw);
        let y0 = rng.random_range(0..=h - ph);
        let render_patch = out.color.crop(x0, y0, pw, ph)?;
        let target_patch = s.target.crop(x0, y0, pw, ph)?;

        let blur = if cfg.use_bp {
            let (field, cache) = bp.forward(&render_patch)?;
            Some((apply_blur(&render_patch, &field)?, field, cache))
        } else {
            None
        };
        let im_idx = if cfg.im_per_view { si } else { 0 };
        let im_out = if cfg.use_im {
            Some(ims[im_idx].forward(&target_patch)?)
        } else {
            None
        };
        let pred = blur.as_ref().map_or(&render_patch, |b| &b.0);
        let target = im_out.as_ref().map_or(&target_patch, |m| &m.0);
        let sr = loss_sr(pred, target, cfg.ssim_beta)?;

        let d_patch = match &blur {
            Some((_, field, cache)) => {
                let (d_img, d_k) = apply_blur_backward(&render_patch, field, &sr.grad_pred)?;
                let mut dp = alloc::vec![0.0; bp.params.len()];
                bp.backward(cache, &d_k, &mut dp)?;
                bp_opt.step(&mut bp.params, &dp)?;
                d_img
            }
            None => sr.grad_pred.clone(),
        };
        if let Some((_, cache)) = &im_out {
            let mut dp = alloc::vec![0.0; ims[im_idx].params.len()];
            ims[im_idx].backward(cache, &sr.grad_target, &mut dp)?;
            im_opt[im_idx].step(&mut ims[im_idx].params, &dp)?;
        }

        let tv_term = tv(&out.color)?;
        let sub_term = subpixel(&out.color, &s.lr, f)?;
        let mut up = tv_term.grad;
        up.scale_assign(cfg.tv_weight);
        let mut g_sub = sub_term.grad;
        g_sub.scale_assign(cfg.subpixel_weight);
        up.add_assign(&g_sub)?;
        up.add_patch(x0, y0, &d_patch)?;

        let grads = render_backward(&cloud, &s.camera, BACKGROUND, &Upstream::color(up))?;
        let counts = robust_step(&mut cloud, &grads, &mut state, &gate)?;
        gate_total.aligned += counts.aligned;
        gate_total.misaligned += counts.misaligned;

        let step = it + 1;
        if step % cfg.log_interval == 0 || step == cfg.stage2_iters {
            let terms = Stage2Terms {
                sr: sr.value,
                tv: tv_term.value,
                subpixel: sub_term.value,
                tv_weight: cfg.tv_weight,
                subpixel_weight: cfg.subpixel_weight,
            };
            log.push(step, "stage2.l1", sr.l1);
            log.push(step, "stage2.dssim", sr.d_ssim);
            log.push(step, "stage2.sr", sr.value);
            log.push(step, "stage2.tv", tv_term.value);
            log.push(step, "stage2.subpixel", sub_term.value);
            log.push(step, "stage2.aux", terms.aux());
            log.push(step, "stage2.loss", loss_total_stage2(&terms));
            log.push(step, "stage2.psnr", psnr(&out.color.clamped01(), &s.target)?);
            log.push(step, "stage2.gaussians", cloud.len() as f64);
            let total = counts.aligned + counts.misaligned;
            let frac = if total == 0 { 0.0 } else { counts.misaligned as f64 / total as f64 };
            log.push(step, "stage2.misaligned", frac);
        }
        density.after_step(step, &mut cloud, &mut state, &grads, &s.camera, &mut rng)?;
    }
    let checkpoint = cloud.clone();
    strip_flags(&mut cloud);
    Ok(Stage2Output {
        cloud,
        checkpoint,
        im: ims,
        bp,
        gate: gate_total,
        log,
    })
}
