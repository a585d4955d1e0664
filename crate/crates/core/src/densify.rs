//! Density control: the six-way shuffle split and standard clone/split/prune.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::gaussian::{rotation_matrix, Camera, Gaussian, GaussianCloud};
use crate::math::{self, Vec3};
use crate::metrics::psnr;
use crate::raster::{render, RenderGradients};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShuffleSplitParams {
    /// Offset of each child along its axis, in units of that axis' scale.
    pub alpha_shift: f64,
    /// Divisor for the two non-offset axes.
    pub lambda: f64,
    /// Divisor for the offset axis.
    pub axis_shrink: f64,
    pub opacity_threshold: f64,
    pub reset_opacity: f64,
}

impl Default for ShuffleSplitParams {
    fn default() -> Self {
        ShuffleSplitParams {
            alpha_shift: 0.5,
            lambda: 1.9,
            axis_shrink: 4.0,
            opacity_threshold: 0.5,
            reset_opacity: 0.01,
        }
    }
}

impl ShuffleSplitParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_shift >= 0.0) || !self.alpha_shift.is_finite() {
            return Err(Error::invalid("alpha_shift must be finite and >= 0"));
        }
        if !(self.lambda > 0.0) || !(self.axis_shrink > 0.0) {
            return Err(Error::invalid("lambda and axis_shrink must be positive"));
        }
        if !(self.reset_opacity > 0.0 && self.reset_opacity < 1.0) {
            return Err(Error::invalid("reset_opacity must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// The six children of `g`, keeping `g`'s opacity. Order: `+x, −x, +y, −y, +z, −z`
/// along the Gaussian's own principal axes.
pub fn split_children(g: &Gaussian, params: &ShuffleSplitParams) -> Result<[Gaussian; 6]> {
    let r = rotation_matrix(g.quat())?;
    let s = g.scale();
    let mut out: [Gaussian; 6] = core::array::from_fn(|_| g.clone());
    for axis in 0..3 {
        let offset = r.column(axis) * (params.alpha_shift * s[axis]);
        let mut scale = [0.0; 3];
        for (j, v) in scale.iter_mut().enumerate() {
            *v = if j == axis { s[j] / params.axis_shrink } else { s[j] / params.lambda };
        }
        for (k, sign) in [1.0, -1.0].into_iter().enumerate() {
            let child = &mut out[2 * axis + k];
            child.mean = g.mean + offset * sign;
            child.set_scale(scale);
            child.reset_flags();
        }
    }
    Ok(out)
}

/// Replaces every Gaussian with opacity above the threshold by its six
/// children, then sets every opacity in the cloud to `reset_opacity` and
/// zeroes all flags.
pub fn shuffle_split(cloud: &GaussianCloud, params: &ShuffleSplitParams) -> Result<GaussianCloud> {
    params.validate()?;
    let mut out = Vec::with_capacity(cloud.len() * 2);
    for g in cloud.iter() {
        if g.opacity() > params.opacity_threshold {
            out.extend(split_children(g, params)?);
        } else {
            let mut c = g.clone();
            c.reset_flags();
            out.push(c);
        }
    }
    let logit = math::logit(params.reset_opacity);
    for g in out.iter_mut() {
        g.opacity_logit = logit;
    }
    GaussianCloud::with_gaussians(cloud.sh_degree(), out)
}

/// Mean PSNR between renders of a single Gaussian and a replacement set
/// over a camera rig, on a black background.
pub fn render_equivalence_score(original: &Gaussian, children: &[Gaussian], cameras: &[Camera]) -> Result<f64> {
    if cameras.is_empty() {
        return Err(Error::invalid("render_equivalence_score needs at least one camera"));
    }
    let degree = sh_degree_of(original)?;
    let parent = GaussianCloud::with_gaussians(degree, vec![original.clone()])?;
    let kids = GaussianCloud::with_gaussians(degree, children.to_vec())?;
    let mut total = 0.0;
    for cam in cameras {
        cam.validate()?;
        let a = render(&parent, cam, [0.0; 3]).color;
        let b = render(&kids, cam, [0.0; 3]).color;
        total += psnr(&a, &b)?;
    }
    Ok(total / cameras.len() as f64)
}

fn sh_degree_of(g: &Gaussian) -> Result<usize> {
    (0..=crate::gaussian::MAX_SH_DEGREE)
        .find(|&d| crate::gaussian::color_len(d) == g.sh.len())
        .ok_or_else(|| Error::invalid("SH coefficient count does not match any supported degree"))
}

/// Constants of the standard clone/split/prune schedule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdcParams {
    /// Mean view-space positional gradient norm (NDC units) above which a
    /// Gaussian is densified.
    pub grad_threshold: f64,
    /// Fraction of the scene extent separating "small" (clone) from "large" (split).
    pub percent_dense: f64,
    pub split_count: usize,
    pub split_scale_divisor: f64,
    pub min_opacity: f64,
    /// Opacity ceiling applied by [`reset_opacity`].
    pub reset_value: f64,
    pub interval: usize,
    pub start_iter: usize,
    pub stop_iter: usize,
    pub opacity_reset_interval: usize,
    /// Hard cap on the number of Gaussians (0 = unlimited).
    pub max_gaussians: usize,
}

impl Default for AdcParams {
    fn default() -> Self {
        AdcParams {
            grad_threshold: 2e-4,
            percent_dense: 0.01,
            split_count: 2,
            split_scale_divisor: 1.6,
            min_opacity: 0.005,
            reset_value: 0.01,
            interval: 100,
            start_iter: 500,
            stop_iter: 15_000,
            opacity_reset_interval: 3000,
            max_gaussians: 0,
        }
    }
}

/// Positional-gradient statistics accumulated between densification steps.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradStats {
    pub accum: Vec<f64>,
    pub count: Vec<u32>,
}

impl GradStats {
    pub fn new(n: usize) -> Self {
        GradStats {
            accum: vec![0.0; n],
            count: vec![0; n],
        }
    }

    /// Adds one view's screen-space gradients, converted from pixels to NDC.
    pub fn record(&mut self, grads: &RenderGradients, width: usize, height: usize) -> Result<()> {
        if grads.len() != self.accum.len() {
            return Err(Error::dims("GradStats::record", self.accum.len(), grads.len()));
        }
        let (hw, hh) = (0.5 * width as f64, 0.5 * height as f64);
        for i in 0..grads.len() {
            if grads.visible[i] {
                let [gx, gy] = grads.screen[i];
                let (nx, ny) = (gx * hw, gy * hh);
                self.accum[i] += math::sqrt(nx * nx + ny * ny);
                self.count[i] += 1;
            }
        }
        Ok(())
    }

    pub fn mean(&self, i: usize) -> f64 {
        if self.count[i] == 0 {
            0.0
        } else {
            self.accum[i] / self.count[i] as f64
        }
    }
}

/// Where each Gaussian of a densified cloud came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Origin {
    Kept(usize),
    New,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AdcReport {
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

fn sampled_offset<R: Rng + ?Sized>(g: &Gaussian, rng: &mut R) -> Result<Vec3> {
    let r = rotation_matrix(g.quat())?;
    let s = g.scale();
    let z: [f64; 3] = core::array::from_fn(|k| rng.sample::<f64, _>(StandardNormal) * s[k]);
    Ok(r.mul_vec(&Vec3(z)))
}

/// One clone/split/prune pass. Returns the new cloud and, for each output
/// Gaussian, its source index (for remapping optimizer state).
pub fn adaptive_density_control<R: Rng + ?Sized>(
    cloud: &GaussianCloud,
    stats: &GradStats,
    extent: f64,
    params: &AdcParams,
    rng: &mut R,
) -> Result<(GaussianCloud, Vec<Origin>, AdcReport)> {
    if stats.accum.len() != cloud.len() {
        return Err(Error::dims("adaptive_density_control", cloud.len(), stats.accum.len()));
    }
    let size_limit = params.percent_dense * extent;
    let mut budget = if params.max_gaussians == 0 {
        usize::MAX
    } else {
        params.max_gaussians.saturating_sub(cloud.len())
    };
    let mut out = Vec::with_capacity(cloud.len());
    let mut origin = Vec::with_capacity(cloud.len());
    let mut report = AdcReport::default();
    let mut fresh = Vec::new();
    for (i, g) in cloud.iter().enumerate() {
        let keep = g.opacity() >= params.min_opacity;
        if !keep {
            report.pruned += 1;
            continue;
        }
        let dense = stats.mean(i) >= params.grad_threshold;
        let max_scale = g.scale().into_iter().fold(0.0, f64::max);
        if dense && max_scale <= size_limit && budget >= 1 {
            let mut c = g.clone();
            c.mean = g.mean + sampled_offset(g, rng)?;
            c.reset_flags();
            fresh.push(c);
            budget -= 1;
            report.cloned += 1;
            out.push(g.clone());
            origin.push(Origin::Kept(i));
        } else if dense && max_scale > size_limit && params.split_count >= 1 && budget >= params.split_count - 1 {
            let s = g.scale().map(|v| v / params.split_scale_divisor);
            for _ in 0..params.split_count {
                let mut c = g.clone();
                c.mean = g.mean + sampled_offset(g, rng)?;
                c.set_scale(s);
                c.reset_flags();
                fresh.push(c);
            }
            budget -= params.split_count - 1;
            report.split += 1;
        } else {
            out.push(g.clone());
            origin.push(Origin::Kept(i));
        }
    }
    origin.extend(core::iter::repeat_n(Origin::New, fresh.len()));
    out.extend(fresh);
    Ok((GaussianCloud::with_gaussians(cloud.sh_degree(), out)?, origin, report))
}

/// Clamps every opacity to at most `value`.
pub fn reset_opacity(cloud: &mut GaussianCloud, value: f64) {
    let cap = math::logit(value);
    for g in cloud.gaussians.iter_mut() {
        if g.opacity_logit > cap {
            g.opacity_logit = cap;
        }
    }
}

/// Radius of the smallest camera-centered sphere around the rig centroid,
/// scaled by 1.1.
pub fn scene_extent(cameras: &[Camera]) -> f64 {
    if cameras.is_empty() {
        return 1.0;
    }
    let n = cameras.len() as f64;
    let centroid = cameras.iter().fold(Vec3::ZERO, |acc, c| acc + c.center()) * (1.0 / n);
    let r = cameras
        .iter()
        .map(|c| (c.center() - centroid).norm())
        .fold(0.0, f64::max);
    1.1 * if r > 0.0 { r } else { 1.0 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::color_len;
    use crate::math::Quat;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gaussian(mean: Vec3, scale: [f64; 3], q: Quat, opacity: f64) -> Gaussian {
        Gaussian::from_decoded(mean, scale, q, opacity, vec![0.1; color_len(1)]).unwrap()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-9
    }

    #[test]
    fn unit_gaussian_children() {
        let g = gaussian(Vec3::ZERO, [1.0; 3], Quat::IDENTITY, 0.9);
        let kids = split_children(&g, &ShuffleSplitParams::default()).unwrap();
        let expect = [
            ([0.5, 0.0, 0.0], [0.25, 1.0 / 1.9, 1.0 / 1.9]),
            ([-0.5, 0.0, 0.0], [0.25, 1.0 / 1.9, 1.0 / 1.9]),
            ([0.0, 0.5, 0.0], [1.0 / 1.9, 0.25, 1.0 / 1.9]),
            ([0.0, -0.5, 0.0], [1.0 / 1.9, 0.25, 1.0 / 1.9]),
            ([0.0, 0.0, 0.5], [1.0 / 1.9, 1.0 / 1.9, 0.25]),
            ([0.0, 0.0, -0.5], [1.0 / 1.9, 1.0 / 1.9, 0.25]),
        ];
        for (k, (m, s)) in kids.iter().zip(expect) {
            for j in 0..3 {
                assert!(close(k.mean[j], m[j]));
                assert!(close(k.scale()[j], s[j]));
            }
        }
    }

    #[test]
    fn rotated_major_axis_offset() {
        let q = Quat::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), core::f64::consts::FRAC_PI_2);
        let g = gaussian(Vec3::new(1.0, 2.0, 3.0), [2.0, 1.0, 1.0], q, 0.9);
        let kids = split_children(&g, &ShuffleSplitParams::default()).unwrap();
        let d = kids[0].mean - g.mean;
        assert!(close(d.x(), 0.0) && close(d.y(), 1.0) && close(d.z(), 0.0));
        let d = kids[1].mean - g.mean;
        assert!(close(d.y(), -1.0));
    }

    #[test]
    fn ineligible_is_carried_over_with_reset_opacity() {
        let mut cloud = GaussianCloud::new(1).unwrap();
        let g = gaussian(Vec3::new(0.3, 0.0, 0.0), [0.5, 0.2, 0.1], Quat::IDENTITY, 0.4);
        cloud.push(g.clone()).unwrap();
        let out = shuffle_split(&cloud, &ShuffleSplitParams::default()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out.gaussians[0].mean, g.mean);
        assert_eq!(out.gaussians[0].log_scale, g.log_scale);
        assert!((out.gaussians[0].opacity() - 0.01).abs() < 1e-12);
    }

    #[test]
    fn equivalence_requires_cameras_and_caps_copies() {
        let g = gaussian(Vec3::ZERO, [0.3; 3], Quat::IDENTITY, 0.8);
        assert!(render_equivalence_score(&g, &[g.clone()], &[]).is_err());
        let cam = Camera::look_at(Vec3::new(0.0, -3.0, 0.0), Vec3::ZERO, Vec3::new(0.0, 0.0, 1.0), 0.8, 24, 24);
        assert_eq!(render_equivalence_score(&g, &[g.clone()], &[cam]).unwrap(), 99.0);
    }

    fn stats_with(n: usize, means: &[(usize, f64)]) -> GradStats {
        let mut s = GradStats::new(n);
        for &(i, v) in means {
            s.accum[i] = v;
            s.count[i] = 1;
        }
        s
    }

    #[test]
    fn adc_counting_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = AdcParams::default();
        let mut cloud = GaussianCloud::new(1).unwrap();
        cloud.push(gaussian(Vec3::ZERO, [0.5; 3], Quat::IDENTITY, 0.5)).unwrap();
        cloud.push(gaussian(Vec3::new(1.0, 0.0, 0.0), [0.001; 3], Quat::IDENTITY, 0.5)).unwrap();
        cloud.push(gaussian(Vec3::new(2.0, 0.0, 0.0), [0.1; 3], Quat::IDENTITY, 0.001)).unwrap();

        let (out, origin, report) =
            adaptive_density_control(&cloud, &GradStats::new(3), 1.0, &params, &mut rng).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(report.pruned, 1);
        assert_eq!(origin, vec![Origin::Kept(0), Origin::Kept(1)]);
        assert_eq!(out.gaussians[0], cloud.gaussians[0]);

        let (out, _, report) =
            adaptive_density_control(&cloud, &stats_with(3, &[(0, 1e-3)]), 1.0, &params, &mut rng).unwrap();
        assert_eq!((out.len(), report.split), (3, 1));
        for g in &out.gaussians[1..] {
            assert!((g.scale()[0] - 0.5 / 1.6).abs() < 1e-12);
        }

        let (out, origin, report) =
            adaptive_density_control(&cloud, &stats_with(3, &[(1, 1e-3)]), 1.0, &params, &mut rng).unwrap();
        assert_eq!((out.len(), report.cloned), (3, 1));
        assert_eq!(origin[2], Origin::New);
    }

    #[test]
    fn opacity_reset_only_lowers() {
        let mut cloud = GaussianCloud::new(1).unwrap();
        cloud.push(gaussian(Vec3::ZERO, [0.5; 3], Quat::IDENTITY, 0.9)).unwrap();
        cloud.push(gaussian(Vec3::ZERO, [0.5; 3], Quat::IDENTITY, 0.005)).unwrap();
        reset_opacity(&mut cloud, 0.01);
        assert!((cloud.gaussians[0].opacity() - 0.01).abs() < 1e-12);
        assert!((cloud.gaussians[1].opacity() - 0.005).abs() < 1e-12);
    }
}
