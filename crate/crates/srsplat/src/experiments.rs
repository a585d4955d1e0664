//! Comparative experiments with plain-text reports.

use std::fmt::Write as _;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use srsplat_core::densify::{render_equivalence_score, shuffle_split, split_children, ShuffleSplitParams};
use srsplat_core::gaussian::{color_len, Gaussian};
use srsplat_core::math::{Quat, Vec3};
use srsplat_core::pipeline::{
    baseline_train, evaluate, orbit_cameras, stage1_train, stage2_train, synth_cloud, synth_scene, EvalSummary,
    OracleDepth, Stage2Input, TrainConfig,
};
use srsplat_core::raster::RenderGradients;
use srsplat_core::robust::{robust_step, GateConfig, LearningRates, OptimizerState};
use srsplat_core::GaussianCloud;

use crate::error::Result;
use crate::run::resolver_for;

/// Mean render-equivalence PSNR of split children against their parent.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitEquivalence {
    pub isotropic: f64,
    pub anisotropic: f64,
    /// Same scenes split with `lambda = 10`.
    pub isotropic_lambda10: f64,
    pub anisotropic_lambda10: f64,
    pub scenes: usize,
}

impl SplitEquivalence {
    pub fn mean(&self) -> f64 {
        0.5 * (self.isotropic + self.anisotropic)
    }

    pub fn mean_lambda10(&self) -> f64 {
        0.5 * (self.isotropic_lambda10 + self.anisotropic_lambda10)
    }

    pub fn report(&self) -> String {
        format!(
            "split render equivalence over {} isotropic + {} anisotropic Gaussians, 8 orbit cameras\n\
             lambda   isotropic_psnr   anisotropic_psnr   mean\n\
             1.9      {:.4}          {:.4}            {:.4}\n\
             10       {:.4}          {:.4}            {:.4}\n",
            self.scenes,
            self.scenes,
            self.isotropic,
            self.anisotropic,
            self.mean(),
            self.isotropic_lambda10,
            self.anisotropic_lambda10,
            self.mean_lambda10()
        )
    }
}

/// Splits random single Gaussians (children keep the parent's opacity) and
/// compares renders of parent and children from an 8-camera orbit.
pub fn split_equivalence(seed: u64, scenes: usize) -> Result<SplitEquivalence> {
    let cfg = TrainConfig::default();
    let cams = orbit_cameras(8, 0.0, &cfg, 128, 128);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = synth_cloud(&mut rng, scenes, 0.5, (0.1, 0.4), cfg.sh_degree)?;
    let isotropic: Vec<Gaussian> = base
        .iter()
        .map(|g| {
            let mut g = g.clone();
            let s = g.scale()[0];
            g.set_scale([s; 3]);
            g.set_opacity(0.9);
            g
        })
        .collect();
    let anisotropic: Vec<Gaussian> = base
        .iter()
        .map(|g| {
            let mut g = g.clone();
            g.set_opacity(0.9);
            g
        })
        .collect();
    let score = |set: &[Gaussian], lambda: f64| -> Result<f64> {
        let params = ShuffleSplitParams {
            lambda,
            ..ShuffleSplitParams::default()
        };
        let mut total = 0.0;
        for g in set {
            total += render_equivalence_score(g, &split_children(g, &params)?, &cams)?;
        }
        Ok(total / set.len() as f64)
    };
    Ok(SplitEquivalence {
        isotropic: score(&isotropic, 1.9)?,
        anisotropic: score(&anisotropic, 1.9)?,
        isotropic_lambda10: score(&isotropic, 10.0)?,
        anisotropic_lambda10: score(&anisotropic, 10.0)?,
        scenes,
    })
}

/// Held-out results of stage 2 with and without the robust gate, sharing
/// stage 1 and the corrupted supervision.
#[derive(Clone, Debug)]
pub struct AblationRow {
    pub seed: u64,
    pub gate_on: EvalSummary,
    pub gate_off: EvalSummary,
    pub misaligned_fraction: f64,
    pub seconds: f64,
}

pub fn ablation_report(rows: &[AblationRow], cfg: &TrainConfig) -> String {
    let mut out = format!(
        "robust gate ablation, corruption_fraction = {}, stage2_iters = {}\n\
         seed   gate_on_psnr   gate_off_psnr   delta     misaligned   seconds\n",
        cfg.corruption_fraction, cfg.stage2_iters
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<6} {:<14.4} {:<15.4} {:<9.4} {:<12.4} {:.1}",
            r.seed,
            r.gate_on.psnr,
            r.gate_off.psnr,
            r.gate_on.psnr - r.gate_off.psnr,
            r.misaligned_fraction,
            r.seconds
        );
    }
    let mean = rows.iter().map(|r| r.gate_on.psnr - r.gate_off.psnr).sum::<f64>() / rows.len().max(1) as f64;
    let _ = writeln!(out, "mean delta {mean:.4} dB");
    out
}

pub fn gate_ablation(cfg: &TrainConfig, seeds: &[u64]) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for &seed in seeds {
        let start = Instant::now();
        let cfg = TrainConfig { seed, ..cfg.clone() };
        let scene = synth_scene(&cfg)?;
        let views = scene.lr_views()?;
        let test = scene.test_views();
        let depth = OracleDepth {
            truth: &scene.truth,
            scale: cfg.depth_affine_scale,
            offset: cfg.depth_affine_offset,
            noise: cfg.depth_noise,
            seed,
        };
        let s1 = stage1_train(&views, &depth, &cfg)?;
        let split = shuffle_split(&s1.cloud, &cfg.split_params())?;
        let mut results = Vec::new();
        for gate in [true, false] {
            let run_cfg = TrainConfig {
                gate_stage2: gate,
                ..cfg.clone()
            };
            let mut oracle = None;
            let resolver = resolver_for(&run_cfg, Some(&scene.truth), &mut oracle)?;
            let s2 = stage2_train(
                Stage2Input {
                    hr_cloud: split.clone(),
                    lr_views: &views,
                    lr_cloud: &s1.cloud,
                    resolver,
                },
                &run_cfg,
            )?;
            let total = (s2.gate.aligned + s2.gate.misaligned).max(1) as f64;
            results.push((evaluate(&s2.cloud, &test)?, s2.gate.misaligned as f64 / total));
        }
        rows.push(AblationRow {
            seed,
            gate_on: results[0].0,
            gate_off: results[1].0,
            misaligned_fraction: results[0].1,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(rows)
}

/// Final-window variance of a scalar fitted by Adam to a target whose sign
/// alternates every step, with and without the gate.
pub fn oscillation_variance(seed: u64, gated: bool) -> Result<f64> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Gaussian::from_decoded(Vec3::ZERO, [0.1; 3], Quat::IDENTITY, 0.5, vec![0.0; color_len(0)])?;
    let mut cloud = GaussianCloud::with_gaussians(0, vec![g])?;
    let lr = LearningRates {
        mean_init: 0.05,
        mean_final: 0.05,
        ..LearningRates::default()
    };
    let mut state = OptimizerState::new(&cloud, lr, 1.0);
    let gate = GateConfig {
        enabled: gated,
        ..GateConfig::default()
    };
    let (steps, window) = (400, 200);
    let mut tail = Vec::with_capacity(window);
    for t in 0..steps {
        let target = if t % 2 == 0 { 1.0 } else { -1.0 } + rng.random_range(-0.1..0.1);
        let x = cloud.gaussians[0].mean.x();
        let mut grads = RenderGradients::zeros(&cloud);
        grads.gaussian_mut(0)[0] = x - target;
        robust_step(&mut cloud, &grads, &mut state, &gate)?;
        if t >= steps - window {
            tail.push(cloud.gaussians[0].mean.x());
        }
    }
    let mean = tail.iter().sum::<f64>() / window as f64;
    Ok(tail.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / window as f64)
}

pub fn oscillation_report(seeds: usize) -> Result<String> {
    let mut out = String::from("alternating-sign scalar quadratic, final 200 of 400 Adam steps\nseed   var_gate_on    var_gate_off\n");
    let mut lower = 0;
    for seed in 0..seeds as u64 {
        let (on, off) = (oscillation_variance(seed, true)?, oscillation_variance(seed, false)?);
        lower += usize::from(on < off);
        let _ = writeln!(out, "{seed:<6} {on:<14.6e} {off:.6e}");
    }
    let _ = writeln!(out, "gate lowers variance in {lower} of {seeds} seeds");
    Ok(out)
}

/// Held-out HR quality of the full pipeline against plain HR training on
/// bicubic-upsampled views with the same iteration budget.
#[derive(Clone, Debug)]
pub struct EndToEndRow {
    pub seed: u64,
    pub pipeline: EvalSummary,
    pub baseline: EvalSummary,
    pub pipeline_seconds: f64,
    pub baseline_seconds: f64,
}

pub fn end_to_end_report(rows: &[EndToEndRow], cfg: &TrainConfig) -> String {
    let mut out = format!(
        "end to end, x{} from {}x{} LR, {} + {} iterations vs {} baseline iterations\n\
         seed   pipeline_psnr  baseline_psnr  delta     pipeline_ssim  baseline_ssim  pipeline_s  baseline_s\n",
        cfg.sr_factor,
        cfg.lr_width,
        cfg.lr_height,
        cfg.stage1_iters,
        cfg.stage2_iters,
        cfg.stage1_iters + cfg.stage2_iters
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<6} {:<14.4} {:<14.4} {:<9.4} {:<14.4} {:<14.4} {:<11.1} {:.1}",
            r.seed,
            r.pipeline.psnr,
            r.baseline.psnr,
            r.pipeline.psnr - r.baseline.psnr,
            r.pipeline.ssim,
            r.baseline.ssim,
            r.pipeline_seconds,
            r.baseline_seconds
        );
    }
    out
}

pub fn end_to_end(cfg: &TrainConfig, seeds: &[u64]) -> Result<Vec<EndToEndRow>> {
    let mut rows = Vec::new();
    for &seed in seeds {
        let cfg = TrainConfig { seed, ..cfg.clone() };
        let scene = synth_scene(&cfg)?;
        let views = scene.lr_views()?;
        let test = scene.test_views();
        let start = Instant::now();
        let depth = OracleDepth {
            truth: &scene.truth,
            scale: cfg.depth_affine_scale,
            offset: cfg.depth_affine_offset,
            noise: cfg.depth_noise,
            seed,
        };
        let s1 = stage1_train(&views, &depth, &cfg)?;
        let split = shuffle_split(&s1.cloud, &cfg.split_params())?;
        let mut oracle = None;
        let resolver = resolver_for(&cfg, Some(&scene.truth), &mut oracle)?;
        let s2 = stage2_train(
            Stage2Input {
                hr_cloud: split,
                lr_views: &views,
                lr_cloud: &s1.cloud,
                resolver,
            },
            &cfg,
        )?;
        let pipeline = evaluate(&s2.cloud, &test)?;
        let pipeline_seconds = start.elapsed().as_secs_f64();
        let start = Instant::now();
        let base = baseline_train(&views, &cfg)?;
        let baseline = evaluate(&base.cloud, &test)?;
        rows.push(EndToEndRow {
            seed,
            pipeline,
            baseline,
            pipeline_seconds,
            baseline_seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(rows)
}
