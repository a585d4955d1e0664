//! Two-stage sparse-view super-resolution training.

use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gaussian::{Camera, GaussianCloud};
use crate::image::ImageBuffer;
use crate::loss::ssim;
use crate::metrics::psnr;
use crate::raster::render;

mod baseline;
mod config;
mod corrupt;
mod providers;
mod pseudo;
mod stage1;
mod stage2;
mod synth;

pub use baseline::baseline_train;
pub use config::{KeyInfo, ResolverKind, TrainConfig};
pub use corrupt::corrupt_image;
pub use providers::{
    BicubicResolver, DepthMap, DepthProvider, OracleDepth, OracleResolver, SuperResolver,
};
pub use pseudo::{interpolate_camera, synth_pseudo_views};
pub use stage1::{init_cloud, stage1_train, Stage1Output};
pub use stage2::{build_supervision, stage2_train, stage2_train_on, Stage2Input, Stage2Output, Supervision};
pub use synth::{orbit_cameras, synth_cloud, synth_scene, SynthScene};

/// Every render in the pipeline composites over black.
pub const BACKGROUND: [f64; 3] = [0.0; 3];

/// Random-stream tags so each stage draws from an independent sequence.
pub(crate) mod stream {
    pub const SCENE: u64 = 1;
    pub const STAGE1: u64 = 2;
    pub const STAGE2: u64 = 3;
    pub const CORRUPT: u64 = 4;
    pub const DEPTH: u64 = 5;
    pub const BASELINE: u64 = 6;
    pub const NETS: u64 = 7;
}

pub(crate) fn rng_for(seed: u64, tag: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng
}

/// One training image with the camera that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub camera: Camera,
    pub image: ImageBuffer,
}

/// One metric sample: `term` is `stage.name`, e.g. `stage2.sr`.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRecord {
    pub iter: usize,
    pub term: String,
    pub value: f64,
}

/// Ordered metric records of a run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
}

impl TrainLog {
    pub fn push(&mut self, iter: usize, term: &str, value: f64) {
        self.records.push(LogRecord {
            iter,
            term: String::from(term),
            value,
        });
    }

    pub fn extend(&mut self, other: TrainLog) {
        self.records.extend(other.records);
    }

    /// Last logged value of `term`.
    pub fn last(&self, term: &str) -> Option<f64> {
        self.records.iter().rev().find(|r| r.term == term).map(|r| r.value)
    }
}

/// Mean PSNR and SSIM of renders against reference images.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EvalSummary {
    pub psnr: f64,
    pub ssim: f64,
}

/// Per-view PSNR/SSIM of `cloud` rendered (and clamped to `[0, 1]`) at each view.
pub fn evaluate_views(cloud: &GaussianCloud, views: &[View]) -> Result<Vec<EvalSummary>> {
    views
        .iter()
        .map(|v| {
            let r = render(cloud, &v.camera, BACKGROUND).color.clamped01();
            Ok(EvalSummary {
                psnr: psnr(&r, &v.image)?,
                ssim: ssim(&r, &v.image)?,
            })
        })
        .collect()
}

/// Mean over [`evaluate_views`].
pub fn evaluate(cloud: &GaussianCloud, views: &[View]) -> Result<EvalSummary> {
    if views.is_empty() {
        return Err(Error::invalid("evaluation needs at least one view"));
    }
    let rows = evaluate_views(cloud, views)?;
    let n = rows.len() as f64;
    Ok(EvalSummary {
        psnr: rows.iter().map(|r| r.psnr).sum::<f64>() / n,
        ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
    })
}

/// Applies density control bookkeeping shared by both stages and the
/// baseline. `step` is 1-based.
pub(crate) struct DensityDriver {
    pub params: crate::densify::AdcParams,
    pub stats: crate::densify::GradStats,
    pub extent: f64,
}

impl DensityDriver {
    pub fn new(cloud: &GaussianCloud, params: crate::densify::AdcParams, extent: f64) -> Self {
        DensityDriver {
            params,
            stats: crate::densify::GradStats::new(cloud.len()),
            extent,
        }
    }

    pub fn after_step(
        &mut self,
        step: usize,
        cloud: &mut GaussianCloud,
        state: &mut crate::robust::OptimizerState,
        grads: &crate::raster::RenderGradients,
        cam: &Camera,
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        let p = self.params;
        if step <= p.stop_iter {
            self.stats.record(grads, cam.width, cam.height)?;
            if step > p.start_iter && step % p.interval == 0 {
                let (next, origin, _) =
                    crate::densify::adaptive_density_control(cloud, &self.stats, self.extent, &p, rng)?;
                *cloud = next;
                state.remap(&origin);
                self.stats = crate::densify::GradStats::new(cloud.len());
            }
            if p.opacity_reset_interval > 0 && step % p.opacity_reset_interval == 0 {
                crate::densify::reset_opacity(cloud, p.reset_value);
            }
        }
        Ok(())
    }
}
