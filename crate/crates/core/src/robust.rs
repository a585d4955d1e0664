//! Flag-gradient cosine gating layered over Adam.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::densify::Origin;
use crate::error::{Error, Result};
use crate::gaussian::{GaussianCloud, COLOR_START, MEAN, OPACITY, ROTATION, SCALE};
use crate::math;
use crate::raster::RenderGradients;

/// Norms below this are treated as zero when computing the gate cosine.
pub const ZERO_NORM: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AttributeGroup {
    Mean,
    Scale,
    Rotation,
    Opacity,
    Color,
}

impl AttributeGroup {
    pub const ALL: [AttributeGroup; 5] = [
        AttributeGroup::Mean,
        AttributeGroup::Scale,
        AttributeGroup::Rotation,
        AttributeGroup::Opacity,
        AttributeGroup::Color,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttributeGroup::Mean => "mu",
            AttributeGroup::Scale => "s",
            AttributeGroup::Rotation => "q",
            AttributeGroup::Opacity => "sigma",
            AttributeGroup::Color => "color",
        }
    }

    /// Slice of the flat per-Gaussian vector of length `stride`.
    pub fn range(self, stride: usize) -> Range<usize> {
        match self {
            AttributeGroup::Mean => MEAN,
            AttributeGroup::Scale => SCALE,
            AttributeGroup::Rotation => ROTATION,
            AttributeGroup::Opacity => OPACITY,
            AttributeGroup::Color => COLOR_START..stride,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GateBranch {
    Aligned,
    Misaligned,
}

fn norm(v: &[f64]) -> f64 {
    math::sqrt(v.iter().map(|x| x * x).sum())
}

/// Branch chosen by the cosine between `g` and `flag`. A (numerically) zero
/// vector on either side counts as aligned.
pub fn gate_branch(g: &[f64], flag: &[f64]) -> GateBranch {
    let (ng, nf) = (norm(g), norm(flag));
    if ng < ZERO_NORM || nf < ZERO_NORM {
        return GateBranch::Aligned;
    }
    let dot: f64 = g.iter().zip(flag).map(|(a, b)| a * b).sum();
    if dot / (ng * nf) > 0.0 {
        GateBranch::Aligned
    } else {
        GateBranch::Misaligned
    }
}

/// In-place gate: `g` becomes the gradient to apply and `flag` its update.
/// The flag is left alone when `g` is numerically zero.
pub fn gate_in_place(g: &mut [f64], flag: &mut [f64], epsilon: f64) -> GateBranch {
    let branch = gate_branch(g, flag);
    if norm(g) < ZERO_NORM {
        return branch;
    }
    match branch {
        GateBranch::Aligned => {
            for (f, x) in flag.iter_mut().zip(g.iter()) {
                *f = 0.5 * (*f + x);
            }
        }
        GateBranch::Misaligned => {
            for (f, x) in flag.iter_mut().zip(g.iter_mut()) {
                *f = (1.0 - epsilon) * *f + epsilon * *x;
                *x *= epsilon;
            }
        }
    }
    branch
}

/// Returns `(g_out, flag_out)`.
pub fn gate_gradient(g: &[f64], flag: &[f64], epsilon: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if g.len() != flag.len() {
        return Err(Error::dims("gate_gradient", g.len(), flag.len()));
    }
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::invalid("gate epsilon must lie in (0, 1]"));
    }
    let mut out = g.to_vec();
    let mut f = flag.to_vec();
    gate_in_place(&mut out, &mut f, epsilon);
    Ok((out, f))
}

/// Removes all flag vectors.
pub fn strip_flags(cloud: &mut GaussianCloud) {
    for g in cloud.gaussians.iter_mut() {
        g.flags = None;
    }
}

/// Per-attribute Adam learning rates. The position rate decays
/// log-linearly from `mean_init` to `mean_final` over `mean_max_steps` and is
/// multiplied by the scene extent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LearningRates {
    pub mean_init: f64,
    pub mean_final: f64,
    pub mean_max_steps: usize,
    pub scale: f64,
    pub rotation: f64,
    pub opacity: f64,
    pub sh_dc: f64,
    pub sh_rest: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            mean_init: 1.6e-4,
            mean_final: 1.6e-6,
            mean_max_steps: 30_000,
            scale: 0.005,
            rotation: 0.001,
            opacity: 0.05,
            sh_dc: 0.0025,
            sh_rest: 0.0025 / 20.0,
        }
    }
}

impl LearningRates {
    pub fn mean_at(&self, step: usize, extent: f64) -> f64 {
        let t = if self.mean_max_steps == 0 {
            1.0
        } else {
            (step as f64 / self.mean_max_steps as f64).min(1.0)
        };
        let lr = math::exp((1.0 - t) * math::ln(self.mean_init) + t * math::ln(self.mean_final));
        lr * extent
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GateConfig {
    pub enabled: bool,
    pub epsilon: f64,
    /// Gate each scalar separately instead of one cosine per attribute group.
    pub per_component: bool,
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig {
            enabled: true,
            epsilon: 0.1,
            per_component: false,
        }
    }
}

/// Adam moments for every Gaussian parameter plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    stride: usize,
    m: Vec<f64>,
    v: Vec<f64>,
    pub step: usize,
    pub lr: LearningRates,
    pub extent: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// Gate decisions made during one step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GateCounts {
    pub aligned: usize,
    pub misaligned: usize,
}

impl OptimizerState {
    pub fn new(cloud: &GaussianCloud, lr: LearningRates, extent: f64) -> Self {
        let stride = cloud.param_len();
        OptimizerState {
            stride,
            m: vec![0.0; stride * cloud.len()],
            v: vec![0.0; stride * cloud.len()],
            step: 0,
            lr,
            extent,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len() / self.stride.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Carries moments of kept Gaussians over; new ones start at zero.
    pub fn remap(&mut self, origin: &[Origin]) {
        let s = self.stride;
        let mut m = vec![0.0; s * origin.len()];
        let mut v = vec![0.0; s * origin.len()];
        for (dst, o) in origin.iter().enumerate() {
            if let Origin::Kept(src) = *o {
                m[dst * s..(dst + 1) * s].copy_from_slice(&self.m[src * s..(src + 1) * s]);
                v[dst * s..(dst + 1) * s].copy_from_slice(&self.v[src * s..(src + 1) * s]);
            }
        }
        self.m = m;
        self.v = v;
    }

    fn rate(&self, k: usize) -> f64 {
        match k {
            0..=2 => self.lr.mean_at(self.step, self.extent),
            3..=5 => self.lr.scale,
            6..=9 => self.lr.rotation,
            10 => self.lr.opacity,
            k if k < COLOR_START + 3 => self.lr.sh_dc,
            _ => self.lr.sh_rest,
        }
    }
}

/// One Adam step over all Gaussians. When the gate is enabled each
/// attribute group is gated against the Gaussian's flag vector first.
pub fn robust_step(
    cloud: &mut GaussianCloud,
    grads: &RenderGradients,
    state: &mut OptimizerState,
    gate: &GateConfig,
) -> Result<GateCounts> {
    if grads.len() != cloud.len() || grads.stride() != cloud.param_len() {
        return Err(Error::dims("robust_step (gradients)", cloud.len(), grads.len()));
    }
    if state.len() != cloud.len() || state.stride != cloud.param_len() {
        return Err(Error::dims("robust_step (optimizer state)", cloud.len(), state.len()));
    }
    if gate.enabled && !(gate.epsilon > 0.0 && gate.epsilon <= 1.0) {
        return Err(Error::invalid("gate epsilon must lie in (0, 1]"));
    }
    state.step += 1;
    let bc1 = 1.0 - math::powf(state.beta1, state.step as f64);
    let bc2 = 1.0 - math::powf(state.beta2, state.step as f64);
    let stride = state.stride;
    let rates: Vec<f64> = (0..stride).map(|k| state.rate(k)).collect();
    let mut counts = GateCounts::default();
    let mut g = vec![0.0; stride];
    let mut p = vec![0.0; stride];
    for (i, gauss) in cloud.gaussians.iter_mut().enumerate() {
        g.copy_from_slice(grads.gaussian(i));
        if gate.enabled {
            let flags = gauss.flags_mut();
            for group in AttributeGroup::ALL {
                let r = group.range(stride);
                if gate.per_component {
                    for k in r {
                        match gate_in_place(&mut g[k..k + 1], &mut flags[k..k + 1], gate.epsilon) {
                            GateBranch::Aligned => counts.aligned += 1,
                            GateBranch::Misaligned => counts.misaligned += 1,
                        }
                    }
                } else {
                    match gate_in_place(&mut g[r.clone()], &mut flags[r], gate.epsilon) {
                        GateBranch::Aligned => counts.aligned += 1,
                        GateBranch::Misaligned => counts.misaligned += 1,
                    }
                }
            }
        }
        gauss.write_params(&mut p);
        let m = &mut state.m[i * stride..(i + 1) * stride];
        let v = &mut state.v[i * stride..(i + 1) * stride];
        for k in 0..stride {
            m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
            v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
            let mh = m[k] / bc1;
            let vh = v[k] / bc2;
            p[k] -= rates[k] * mh / (math::sqrt(vh) + state.eps);
        }
        gauss.read_params(&p);
    }
    Ok(counts)
}

/// Plain Adam over a flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: usize,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::dims("Adam::step", self.m.len(), params.len().max(grads.len())));
        }
        self.t += 1;
        let bc1 = 1.0 - math::powf(self.beta1, self.t as f64);
        let bc2 = 1.0 - math::powf(self.beta2, self.t as f64);
        for k in 0..params.len() {
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * grads[k];
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * grads[k] * grads[k];
            params[k] -= self.lr * (self.m[k] / bc1) / (math::sqrt(self.v[k] / bc2) + self.eps);
        }
        Ok(())
    }
}
