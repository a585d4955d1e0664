//! Training configuration with a single key table shared by parsing,
//! validation, snapshots and help output.

use alloc::format;
use alloc::string::{String, ToString};
use core::fmt;
use core::str::FromStr;

use crate::densify::{AdcParams, ShuffleSplitParams};
use crate::error::{Error, Result};
use crate::robust::{GateConfig, LearningRates};

/// Source of super-resolved supervision.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResolverKind {
    /// Ground-truth high-resolution render at the requested camera.
    Oracle,
    /// Bicubic upsampling of the low-resolution input.
    Bicubic,
}

impl fmt::Display for ResolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ResolverKind::Oracle => "oracle",
            ResolverKind::Bicubic => "bicubic",
        })
    }
}

impl FromStr for ResolverKind {
    type Err = ();
    fn from_str(s: &str) -> core::result::Result<Self, ()> {
        match s {
            "oracle" => Ok(ResolverKind::Oracle),
            "bicubic" => Ok(ResolverKind::Bicubic),
            _ => Err(()),
        }
    }
}

/// Description of one configuration key.
#[derive(Clone, Copy, Debug)]
pub struct KeyInfo {
    pub name: &'static str,
    pub default: &'static str,
    pub range: &'static str,
    pub doc: &'static str,
}

macro_rules! train_config {
    ($( $name:ident : $ty:ty = $default:expr, $range:literal, |$v:ident| $check:expr, $doc:literal; )*) => {
        /// All hyperparameters of a run.
        #[derive(Clone, Debug, PartialEq)]
        pub struct TrainConfig {
            $( #[doc = $doc] pub $name: $ty, )*
        }

        impl Default for TrainConfig {
            fn default() -> Self {
                TrainConfig { $( $name: $default, )* }
            }
        }

        impl TrainConfig {
            /// Every key in declaration order.
            pub const KEYS: &'static [KeyInfo] = &[
                $( KeyInfo { name: stringify!($name), default: stringify!($default), range: $range, doc: $doc }, )*
            ];

            /// Sets one key from its textual value, checking type and range.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $( stringify!($name) => {
                        let $v: $ty = value.trim().parse().map_err(|_| {
                            Error::invalid(format!("config key `{}`: cannot parse `{}` (valid: {})", key, value, $range))
                        })?;
                        if !($check) {
                            return Err(Error::invalid(format!(
                                "config key `{}` = {} is out of range (valid: {})", key, value, $range
                            )));
                        }
                        self.$name = $v;
                        Ok(())
                    } )*
                    _ => Err(Error::invalid(format!("unknown config key `{}`", key))),
                }
            }

            pub fn get(&self, key: &str) -> Option<String> {
                match key {
                    $( stringify!($name) => Some(self.$name.to_string()), )*
                    _ => None,
                }
            }

            fn check_ranges(&self) -> Result<()> {
                $( {
                    let $v = self.$name.clone();
                    if !($check) {
                        return Err(Error::invalid(format!(
                            "config key `{}` = {} is out of range (valid: {})", stringify!($name), $v, $range
                        )));
                    }
                } )*
                Ok(())
            }
        }
    };
}

fn unit(v: f64) -> bool {
    v > 0.0 && v < 1.0
}

fn positive(v: f64) -> bool {
    v > 0.0 && v.is_finite()
}

fn nonneg(v: f64) -> bool {
    v >= 0.0 && v.is_finite()
}

train_config! {
    seed: u64 = 0, "0..=9223372036854775807", |v| v <= i64::MAX as u64, "Master seed for every random choice.";
    sh_degree: usize = 1, "0..=2", |v| v <= 2, "Spherical-harmonic degree of Gaussian colors.";
    sr_factor: usize = 4, "1..=8", |v| (1..=8).contains(&v), "Super-resolution factor between LR inputs and HR outputs.";
    scene_gaussians: usize = 50, ">= 1", |v| v >= 1, "Number of Gaussians in the synthetic ground-truth scene.";
    scene_extent: f64 = 1.0, "> 0", |v| positive(v), "Half-width of the cube holding synthetic Gaussian centers.";
    scene_scale_min: f64 = 0.05, "> 0", |v| positive(v), "Smallest synthetic Gaussian scale.";
    scene_scale_max: f64 = 0.25, "> 0", |v| positive(v), "Largest synthetic Gaussian scale.";
    train_views: usize = 8, ">= 2", |v| v >= 2, "Number of sparse training views on the orbit.";
    test_views: usize = 8, ">= 1", |v| v >= 1, "Held-out views at half-step azimuths.";
    lr_width: usize = 64, ">= 4", |v| v >= 4, "Low-resolution image width in pixels.";
    lr_height: usize = 64, ">= 4", |v| v >= 4, "Low-resolution image height in pixels.";
    camera_radius: f64 = 3.5, "> 0", |v| positive(v), "Orbit radius of the camera rig.";
    camera_elevation_deg: f64 = 20.0, "-85..=85", |v| (-85.0..=85.0).contains(&v), "Orbit elevation in degrees.";
    fov_deg: f64 = 45.0, "1..=150", |v| (1.0..=150.0).contains(&v), "Horizontal field of view in degrees.";
    init_gaussians: usize = 100, ">= 1", |v| v >= 1, "Random Gaussians initializing stage 1.";
    init_opacity: f64 = 0.1, "(0, 1)", |v| unit(v), "Opacity of initial Gaussians.";
    stage1_iters: usize = 10000, "any", |v| { let _ = v; true }, "Stage-1 (low-resolution) iterations.";
    stage2_iters: usize = 10000, "any", |v| { let _ = v; true }, "Stage-2 (high-resolution) iterations.";
    ssim_beta: f64 = 0.2, "0..=1", |v| (0.0..=1.0).contains(&v), "D-SSIM weight in the photometric loss.";
    depth_weight: f64 = 0.05, ">= 0", |v| nonneg(v), "Weight of the Pearson depth loss in stage 1.";
    depth_patch: usize = 0, "any (0 = global)", |v| { let _ = v; true }, "Window size of the patch-wise Pearson loss.";
    depth_noise: f64 = 0.0, ">= 0", |v| nonneg(v), "Std of multiplicative noise on oracle depth priors.";
    depth_affine_scale: f64 = 1.0, "> 0", |v| positive(v), "Scale applied to oracle depth priors.";
    depth_affine_offset: f64 = 0.0, "finite", |v| v.is_finite(), "Offset added to oracle depth priors.";
    densify_grad_threshold: f64 = 0.0002, "> 0", |v| positive(v), "Mean NDC positional gradient that triggers densification.";
    percent_dense: f64 = 0.01, "> 0", |v| positive(v), "Scene-extent fraction separating clone from split.";
    min_opacity: f64 = 0.005, "(0, 1)", |v| unit(v), "Gaussians below this opacity are pruned.";
    densify_interval: usize = 100, ">= 1", |v| v >= 1, "Iterations between density-control passes.";
    densify_start: usize = 500, "any", |v| { let _ = v; true }, "First iteration with density control (per stage).";
    stage1_densify_stop: usize = 5000, "any", |v| { let _ = v; true }, "Last stage-1 iteration with density control.";
    stage2_densify_stop: usize = 5000, "any", |v| { let _ = v; true }, "Last stage-2 iteration with density control.";
    opacity_reset_interval: usize = 3000, "any (0 = never)", |v| { let _ = v; true }, "Iterations between opacity resets.";
    max_gaussians: usize = 0, "any (0 = unlimited)", |v| { let _ = v; true }, "Cap on the number of Gaussians.";
    lr_position_init: f64 = 0.00016, "> 0", |v| positive(v), "Initial position learning rate (times scene extent).";
    lr_position_final: f64 = 0.0000016, "> 0", |v| positive(v), "Final position learning rate (times scene extent).";
    lr_scale: f64 = 0.005, ">= 0", |v| nonneg(v), "Log-scale learning rate.";
    lr_rotation: f64 = 0.001, ">= 0", |v| nonneg(v), "Quaternion learning rate.";
    lr_opacity: f64 = 0.05, ">= 0", |v| nonneg(v), "Opacity-logit learning rate.";
    lr_sh_dc: f64 = 0.0025, ">= 0", |v| nonneg(v), "Learning rate of the degree-0 SH coefficients.";
    lr_sh_rest: f64 = 0.000125, ">= 0", |v| nonneg(v), "Learning rate of higher SH coefficients.";
    lr_nets: f64 = 0.0005, ">= 0", |v| nonneg(v), "Adam learning rate of the IM and BP heads.";
    split_alpha: f64 = 0.5, ">= 0", |v| nonneg(v), "Child offset along each axis in units of that axis' scale.";
    split_lambda: f64 = 1.9, "> 0", |v| positive(v), "Divisor for the two non-offset axes of each child.";
    split_axis_shrink: f64 = 4.0, "> 0", |v| positive(v), "Divisor for the offset axis of each child.";
    split_opacity_threshold: f64 = 0.5, "0..=1", |v| (0.0..=1.0).contains(&v), "Opacity above which a Gaussian is split.";
    split_reset_opacity: f64 = 0.01, "(0, 1)", |v| unit(v), "Opacity of every Gaussian after the split.";
    gate_stage1: bool = false, "true | false", |v| { let _ = v; true }, "Apply the flag-gradient gate in stage 1.";
    gate_stage2: bool = true, "true | false", |v| { let _ = v; true }, "Apply the flag-gradient gate in stage 2.";
    gate_epsilon: f64 = 0.1, "(0, 1]", |v| v > 0.0 && v <= 1.0, "Attenuation of gradients that oppose the flag.";
    gate_per_component: bool = false, "true | false", |v| { let _ = v; true }, "Gate each scalar instead of each attribute group.";
    tv_weight: f64 = 1.0, ">= 0", |v| nonneg(v), "Weight of total variation in the auxiliary loss.";
    subpixel_weight: f64 = 1.0, ">= 0", |v| nonneg(v), "Weight of the sub-pixel constraint in the auxiliary loss.";
    blur_kernel: usize = 0, "0 (auto) or odd", |v| v == 0 || v % 2 == 1, "Blur kernel side; 0 derives it from sr_factor.";
    patch_size: usize = 64, "any (0 = full image)", |v| { let _ = v; true }, "Side of the random crop fed to IM and BP.";
    use_im: bool = true, "true | false", |v| { let _ = v; true }, "Enable the inconsistency-modeling head.";
    use_bp: bool = true, "true | false", |v| { let _ = v; true }, "Enable the blur-proposal head.";
    im_per_view: bool = false, "true | false", |v| { let _ = v; true }, "Train one IM head per supervision image instead of one shared head.";
    pseudo_per_pair: usize = 2, "any", |v| { let _ = v; true }, "Pseudo views interpolated between adjacent training views.";
    pseudo_ratio: usize = 1, "any (0 = no pseudo views)", |v| { let _ = v; true }, "Pseudo views scheduled after each real view.";
    resolver: ResolverKind = ResolverKind::Oracle, "oracle | bicubic", |v| { let _ = v; true }, "Super-resolution provider.";
    corruption_fraction: f64 = 0.0, "0..=1", |v| (0.0..=1.0).contains(&v), "Fraction of supervision images that are corrupted.";
    corruption_noise: f64 = 0.1, ">= 0", |v| nonneg(v), "Gaussian noise std added to corrupted images.";
    corruption_rects: usize = 3, "any", |v| { let _ = v; true }, "Occlusion rectangles per corrupted image.";
    log_interval: usize = 10, ">= 1", |v| v >= 1, "Iterations between metric log records.";
}

impl TrainConfig {
    /// Checks every key range plus cross-key constraints.
    pub fn validate(&self) -> Result<()> {
        self.check_ranges()?;
        if self.scene_scale_min > self.scene_scale_max {
            return Err(Error::invalid("config key `scene_scale_min` must not exceed `scene_scale_max`"));
        }
        if self.lr_position_final > self.lr_position_init {
            return Err(Error::invalid("config key `lr_position_final` must not exceed `lr_position_init`"));
        }
        Ok(())
    }

    pub fn hr_width(&self) -> usize {
        self.lr_width * self.sr_factor
    }

    pub fn hr_height(&self) -> usize {
        self.lr_height * self.sr_factor
    }

    pub fn kernel_size(&self) -> usize {
        if self.blur_kernel == 0 {
            crate::nn::kernel_size_for_factor(self.sr_factor)
        } else {
            self.blur_kernel
        }
    }

    pub fn split_params(&self) -> ShuffleSplitParams {
        ShuffleSplitParams {
            alpha_shift: self.split_alpha,
            lambda: self.split_lambda,
            axis_shrink: self.split_axis_shrink,
            opacity_threshold: self.split_opacity_threshold,
            reset_opacity: self.split_reset_opacity,
        }
    }

    pub fn adc_params(&self, stop_iter: usize) -> AdcParams {
        AdcParams {
            grad_threshold: self.densify_grad_threshold,
            percent_dense: self.percent_dense,
            min_opacity: self.min_opacity,
            interval: self.densify_interval,
            start_iter: self.densify_start,
            stop_iter,
            opacity_reset_interval: self.opacity_reset_interval,
            max_gaussians: self.max_gaussians,
            ..AdcParams::default()
        }
    }

    /// Learning rates for a stage of `iters` iterations; the position rate
    /// decays over the whole stage.
    pub fn learning_rates(&self, iters: usize) -> LearningRates {
        LearningRates {
            mean_init: self.lr_position_init,
            mean_final: self.lr_position_final,
            mean_max_steps: iters,
            scale: self.lr_scale,
            rotation: self.lr_rotation,
            opacity: self.lr_opacity,
            sh_dc: self.lr_sh_dc,
            sh_rest: self.lr_sh_rest,
        }
    }

    pub fn gate(&self, enabled: bool) -> GateConfig {
        GateConfig {
            enabled,
            epsilon: self.gate_epsilon,
            per_component: self.gate_per_component,
        }
    }

    /// `key = value` lines for every key, strings quoted.
    pub fn to_snapshot(&self) -> String {
        let mut out = String::new();
        for k in Self::KEYS {
            let v = self.get(k.name).unwrap_or_default();
            if k.name == "resolver" {
                out.push_str(&format!("{} = \"{}\"\n", k.name, v));
            } else {
                out.push_str(&format!("{} = {}\n", k.name, v));
            }
        }
        out
    }
}
