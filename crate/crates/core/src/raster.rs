//! Tile-based EWA splatting with front-to-back alpha compositing and its
//! analytic adjoint.
//!
//! Constants follow the original 3DGS rasterizer: 16×16 tiles, 3σ splat
//! radius, +0.3 px² low-pass on the projected covariance, per-splat alpha
//! clipped at 0.99, splat-pixel pairs with alpha below 1/255 skipped and
//! early termination once transmittance would drop below 1e-4. Pixel `(x, y)` is sampled at `(x + 0.5, y + 0.5)`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::gaussian::{self, Camera, GaussianCloud, COLOR_START, MEAN, OPACITY, ROTATION, SCALE};
use crate::image::ImageBuffer;
use crate::math::{self, Mat3, Quat, Vec3};
use crate::par;

pub const TILE_SIZE: usize = 16;
pub const ZNEAR: f64 = 0.2;
pub const LOW_PASS: f64 = 0.3;
pub const ALPHA_MAX: f64 = 0.99;
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
pub const TRANSMITTANCE_MIN: f64 = 1e-4;
/// Projected centers further than this multiple of the half field of view are culled.
pub const GUARD_BAND: f64 = 1.3;
/// Below this accumulated alpha the depth output is reported as zero.
pub const DEPTH_ALPHA_EPS: f64 = 1e-6;

/// Screen-space footprint of one Gaussian.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    /// Center in pixel coordinates.
    pub mean: [f64; 2],
    /// 2×2 covariance `[[a, b], [b, c]]` stored as `(a, b, c)`, low-pass included.
    pub cov: [f64; 3],
    /// Camera-space depth of the center.
    pub depth: f64,
}

/// Intermediate values of the projection kept for the backward pass.
#[derive(Clone, Debug)]
struct ProjCache {
    p_cam: Vec3,
    cam_rot: Mat3,
    /// `J·W`, 2×3.
    t: [[f64; 3]; 2],
    cov3: Mat3,
    rot: Mat3,
    qn: [f64; 4],
    q_norm: f64,
    scale: [f64; 3],
    mean2d: [f64; 2],
    cov2: [f64; 3],
    conic: [f64; 3],
    det: f64,
    radius: f64,
}

fn project_cached(g: &gaussian::Gaussian, cam: &Camera, cam_rot: &Mat3) -> Option<ProjCache> {
    let p_cam = cam_rot.mul_vec(&g.mean) + cam.translation;
    let z = p_cam.z();
    if z <= ZNEAR {
        return None;
    }
    let (x, y) = (p_cam.x(), p_cam.y());
    let lim_x = GUARD_BAND * cam.cx.max(cam.width as f64 - cam.cx) / cam.fx;
    let lim_y = GUARD_BAND * cam.cy.max(cam.height as f64 - cam.cy) / cam.fy;
    if (x / z).abs() > lim_x || (y / z).abs() > lim_y {
        return None;
    }
    let q_norm = math::sqrt(g.rotation.iter().map(|v| v * v).sum());
    if q_norm < 1e-12 {
        return None;
    }
    let qn = g.rotation.map(|v| v / q_norm);
    let rot = Quat(qn).to_matrix_unchecked();
    let scale = g.scale();
    let m = rot * Mat3::diag(scale);
    let cov3 = m * m.transpose();

    let (fx, fy) = (cam.fx, cam.fy);
    let jac = [
        [fx / z, 0.0, -fx * x / (z * z)],
        [0.0, fy / z, -fy * y / (z * z)],
    ];
    let w = &cam_rot.0;
    let mut t = [[0.0; 3]; 2];
    for (i, row) in t.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = jac[i][0] * w[0][j] + jac[i][1] * w[1][j] + jac[i][2] * w[2][j];
        }
    }
    // cov2 = T Σ Tᵀ
    let mut ts = [[0.0; 3]; 2];
    for i in 0..2 {
        for j in 0..3 {
            ts[i][j] = (0..3).map(|k| t[i][k] * cov3.0[k][j]).sum();
        }
    }
    let dot = |a: &[f64; 3], b: &[f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let cov2 = [
        dot(&ts[0], &t[0]) + LOW_PASS,
        dot(&ts[0], &t[1]),
        dot(&ts[1], &t[1]) + LOW_PASS,
    ];
    let det = cov2[0] * cov2[2] - cov2[1] * cov2[1];
    if !(det > 0.0) {
        return None;
    }
    let conic = [cov2[2] / det, -cov2[1] / det, cov2[0] / det];
    let mid = 0.5 * (cov2[0] + cov2[2]);
    let lambda = mid + math::sqrt((mid * mid - det).max(0.1));
    let radius = math::ceil(3.0 * math::sqrt(lambda));
    let mean2d = [fx * x / z + cam.cx, fy * y / z + cam.cy];
    Some(ProjCache {
        p_cam,
        cam_rot: *cam_rot,
        t,
        cov3,
        rot,
        qn,
        q_norm,
        scale,
        mean2d,
        cov2,
        conic,
        det,
        radius,
    })
}

/// EWA projection of a single Gaussian; `None` when culled.
pub fn project(g: &gaussian::Gaussian, cam: &Camera) -> Option<Projection> {
    let p = project_cached(g, cam, &cam.rotation_matrix())?;
    Some(Projection {
        mean: p.mean2d,
        cov: p.cov2,
        depth: p.p_cam.z(),
    })
}

#[derive(Clone, Debug)]
struct Splat {
    index: usize,
    proj: ProjCache,
    opacity: f64,
    /// Clamped color and the per-channel mask of unclamped channels.
    color: [f64; 3],
    color_live: [bool; 3],
    dir: Vec3,
    dir_len: f64,
    /// Falloff exponent below which alpha drops under `ALPHA_MIN`.
    power_min: f64,
}

struct Prepared {
    splats: Vec<Splat>,
    /// Per tile, indices into `splats` in front-to-back order.
    tiles: Vec<Vec<u32>>,
    tiles_x: usize,
    tiles_y: usize,
}

fn prepare(cloud: &GaussianCloud, cam: &Camera) -> Prepared {
    let cam_rot = cam.rotation_matrix();
    let center = cam.center();
    let degree = cloud.sh_degree();
    let tiles_x = cam.width.div_ceil(TILE_SIZE);
    let tiles_y = cam.height.div_ceil(TILE_SIZE);
    let mut splats = Vec::new();
    let mut rects = Vec::new();
    for (index, g) in cloud.gaussians.iter().enumerate() {
        let opacity = g.opacity();
        if !(opacity >= ALPHA_MIN) {
            continue;
        }
        let Some(proj) = project_cached(g, cam, &cam_rot) else {
            continue;
        };
        let power_min = math::ln(ALPHA_MIN / opacity);
        let ts = TILE_SIZE as f64;
        let [u, v] = proj.mean2d;
        // radius >= 3 sqrt(lambda_max), so this bounds the ALPHA_MIN contour
        let r = proj.radius.min(math::ceil(math::sqrt(-2.0 * power_min) * proj.radius / 3.0));
        let x0 = math::floor((u - r) / ts).clamp(0.0, tiles_x as f64) as usize;
        let x1 = math::ceil((u + r) / ts).clamp(0.0, tiles_x as f64) as usize;
        let y0 = math::floor((v - r) / ts).clamp(0.0, tiles_y as f64) as usize;
        let y1 = math::ceil((v + r) / ts).clamp(0.0, tiles_y as f64) as usize;
        if x0 >= x1 || y0 >= y1 {
            continue;
        }
        let offset = g.mean - center;
        let dir_len = offset.norm();
        let dir = if dir_len > 0.0 { offset * (1.0 / dir_len) } else { Vec3::new(0.0, 0.0, 1.0) };
        let raw = gaussian::eval_sh_unchecked(&g.sh, dir, degree);
        splats.push(Splat {
            index,
            proj,
            opacity,
            color: raw.map(|c| c.max(0.0)),
            color_live: raw.map(|c| c > 0.0),
            dir,
            dir_len,
            power_min,
        });
        rects.push((x0, x1, y0, y1));
    }
    let mut order: Vec<usize> = (0..splats.len()).collect();
    order.sort_by(|&a, &b| {
        splats[a]
            .proj
            .p_cam
            .z()
            .total_cmp(&splats[b].proj.p_cam.z())
            .then(splats[a].index.cmp(&splats[b].index))
    });
    let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
    for &s in &order {
        let (x0, x1, y0, y1) = rects[s];
        for ty in y0..y1 {
            for tx in x0..x1 {
                tiles[ty * tiles_x + tx].push(s as u32);
            }
        }
    }
    Prepared {
        splats,
        tiles,
        tiles_x,
        tiles_y,
    }
}

#[inline]
fn falloff(s: &Splat, px: f64, py: f64) -> Option<(f64, f64, f64)> {
    let dx = px - s.proj.mean2d[0];
    let dy = py - s.proj.mean2d[1];
    let [a, b, c] = s.proj.conic;
    let power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy;
    if power > 0.0 || power < s.power_min {
        return None;
    }
    Some((math::exp(power), dx, dy))
}

fn tile_bounds(p: &Prepared, tile: usize, cam: &Camera) -> (usize, usize, usize, usize) {
    let tx = tile % p.tiles_x;
    let ty = tile / p.tiles_x;
    let x0 = tx * TILE_SIZE;
    let y0 = ty * TILE_SIZE;
    (x0, (x0 + TILE_SIZE).min(cam.width), y0, (y0 + TILE_SIZE).min(cam.height))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub color: ImageBuffer,
    /// Alpha-normalized expected depth (zero where nothing is accumulated).
    pub depth: ImageBuffer,
    pub alpha: ImageBuffer,
    /// Number of splats composited per pixel.
    pub contributors: Vec<u32>,
}

#[derive(Clone, Copy, Default)]
struct PixelOut {
    color: [f64; 3],
    depth: f64,
    alpha: f64,
    count: u32,
}

/// Renders color, depth and alpha of `cloud` seen from `cam`.
pub fn render(cloud: &GaussianCloud, cam: &Camera, background: [f64; 3]) -> RenderOutput {
    let prep = prepare(cloud, cam);
    let n_tiles = prep.tiles_x * prep.tiles_y;
    let tiles: Vec<Vec<PixelOut>> = par::map_indexed(n_tiles, |tile| {
        let (x0, x1, y0, y1) = tile_bounds(&prep, tile, cam);
        let list = &prep.tiles[tile];
        let mut out = Vec::with_capacity((x1 - x0) * (y1 - y0));
        for y in y0..y1 {
            for x in x0..x1 {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let mut t = 1.0;
                let mut color = [0.0; 3];
                let mut depth = 0.0;
                let mut count = 0;
                for &si in list {
                    let s = &prep.splats[si as usize];
                    let Some((g, _, _)) = falloff(s, px, py) else { continue };
                    let alpha = (s.opacity * g).min(ALPHA_MAX);
                    let next_t = t * (1.0 - alpha);
                    if next_t < TRANSMITTANCE_MIN {
                        break;
                    }
                    let w = alpha * t;
                    for ch in 0..3 {
                        color[ch] += w * s.color[ch];
                    }
                    depth += w * s.proj.p_cam.z();
                    t = next_t;
                    count += 1;
                }
                let acc = 1.0 - t;
                for ch in 0..3 {
                    color[ch] += t * background[ch];
                }
                out.push(PixelOut {
                    color,
                    depth: if acc > DEPTH_ALPHA_EPS { depth / acc } else { 0.0 },
                    alpha: acc,
                    count,
                });
            }
        }
        out
    });
    let (w, h) = (cam.width, cam.height);
    let mut color = ImageBuffer::new(w, h, 3);
    let mut depth = ImageBuffer::new(w, h, 1);
    let mut alpha = ImageBuffer::new(w, h, 1);
    let mut contributors = vec![0; w * h];
    for (tile, pixels) in tiles.iter().enumerate() {
        let (x0, x1, y0, _) = tile_bounds(&prep, tile, cam);
        let tw = x1 - x0;
        for (k, p) in pixels.iter().enumerate() {
            let (x, y) = (x0 + k % tw, y0 + k / tw);
            for ch in 0..3 {
                color.set(x, y, ch, p.color[ch]);
            }
            depth.set(x, y, 0, p.depth);
            alpha.set(x, y, 0, p.alpha);
            contributors[y * w + x] = p.count;
        }
    }
    RenderOutput {
        color,
        depth,
        alpha,
        contributors,
    }
}

/// Per-pixel loss gradients flowing into a render.
#[derive(Clone, Debug)]
pub struct Upstream {
    pub color: ImageBuffer,
    pub depth: Option<ImageBuffer>,
    pub alpha: Option<ImageBuffer>,
}

impl Upstream {
    pub fn color(color: ImageBuffer) -> Self {
        Upstream {
            color,
            depth: None,
            alpha: None,
        }
    }

    fn validate(&self, cam: &Camera) -> Result<()> {
        let check = |img: &ImageBuffer, ch: usize, what: &'static str| {
            if img.width() != cam.width || img.height() != cam.height || img.channels() != ch {
                Err(Error::dims(
                    what,
                    alloc::format!("{}x{}x{}", cam.width, cam.height, ch),
                    alloc::format!("{}x{}x{}", img.width(), img.height(), img.channels()),
                ))
            } else {
                Ok(())
            }
        };
        check(&self.color, 3, "render_backward (color upstream)")?;
        if let Some(d) = &self.depth {
            check(d, 1, "render_backward (depth upstream)")?;
        }
        if let Some(a) = &self.alpha {
            check(a, 1, "render_backward (alpha upstream)")?;
        }
        Ok(())
    }
}

/// Gradients with respect to the stored (unconstrained) parameters, in the
/// flat per-Gaussian layout of [`gaussian`].
#[derive(Clone, Debug, PartialEq)]
pub struct RenderGradients {
    stride: usize,
    params: Vec<f64>,
    /// `∂L/∂(u, v)` of each projected center in pixels (zero when culled).
    pub screen: Vec<[f64; 2]>,
    pub visible: Vec<bool>,
}

impl RenderGradients {
    pub fn zeros(cloud: &GaussianCloud) -> Self {
        let stride = cloud.param_len();
        RenderGradients {
            stride,
            params: vec![0.0; stride * cloud.len()],
            screen: vec![[0.0; 2]; cloud.len()],
            visible: vec![false; cloud.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.screen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.screen.is_empty()
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn gaussian(&self, i: usize) -> &[f64] {
        &self.params[i * self.stride..(i + 1) * self.stride]
    }

    pub fn gaussian_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.params[i * self.stride..(i + 1) * self.stride]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.params
    }

    /// Accumulates another gradient set of the same shape.
    pub fn accumulate(&mut self, other: &RenderGradients) -> Result<()> {
        if other.params.len() != self.params.len() {
            return Err(Error::dims("RenderGradients::accumulate", self.params.len(), other.params.len()));
        }
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            *a += b;
        }
        for i in 0..self.screen.len() {
            self.screen[i][0] += other.screen[i][0];
            self.screen[i][1] += other.screen[i][1];
            self.visible[i] |= other.visible[i];
        }
        Ok(())
    }
}

/// Screen-space gradient of one splat accumulated over pixels.
#[derive(Clone, Copy, Default)]
struct SplatGrad {
    mean: [f64; 2],
    conic: [f64; 3],
    opacity: f64,
    color: [f64; 3],
    depth: f64,
}

impl SplatGrad {
    fn add(&mut self, o: &SplatGrad) {
        for k in 0..2 {
            self.mean[k] += o.mean[k];
        }
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
        }
        self.opacity += o.opacity;
        self.depth += o.depth;
    }
}

struct Contribution {
    local: usize,
    alpha: f64,
    trans: f64,
    g: f64,
    clipped: bool,
    dx: f64,
    dy: f64,
}

/// Analytic adjoint of [`render`].
pub fn render_backward(
    cloud: &GaussianCloud,
    cam: &Camera,
    background: [f64; 3],
    upstream: &Upstream,
) -> Result<RenderGradients> {
    upstream.validate(cam)?;
    let prep = prepare(cloud, cam);
    let n_tiles = prep.tiles_x * prep.tiles_y;
    let partials: Vec<Vec<SplatGrad>> = par::map_indexed(n_tiles, |tile| {
        let (x0, x1, y0, y1) = tile_bounds(&prep, tile, cam);
        let list = &prep.tiles[tile];
        let mut acc = vec![SplatGrad::default(); list.len()];
        let mut contribs: Vec<Contribution> = Vec::new();
        for y in y0..y1 {
            for x in x0..x1 {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                contribs.clear();
                let mut t = 1.0;
                for (local, &si) in list.iter().enumerate() {
                    let s = &prep.splats[si as usize];
                    let Some((g, dx, dy)) = falloff(s, px, py) else { continue };
                    let raw = s.opacity * g;
                    let alpha = raw.min(ALPHA_MAX);
                    let next_t = t * (1.0 - alpha);
                    if next_t < TRANSMITTANCE_MIN {
                        break;
                    }
                    contribs.push(Contribution {
                        local,
                        alpha,
                        trans: t,
                        g,
                        clipped: raw > ALPHA_MAX,
                        dx,
                        dy,
                    });
                    t = next_t;
                }
                if contribs.is_empty() {
                    continue;
                }
                let t_final = t;
                let acc_alpha = 1.0 - t_final;
                let gc = [
                    upstream.color.get(x, y, 0),
                    upstream.color.get(x, y, 1),
                    upstream.color.get(x, y, 2),
                ];
                let gd = upstream.depth.as_ref().map_or(0.0, |d| d.get(x, y, 0));
                let ga = upstream.alpha.as_ref().map_or(0.0, |a| a.get(x, y, 0));

                // depth = N / A with N = Σ z·α·T
                let (g_n, g_a) = if gd != 0.0 && acc_alpha > DEPTH_ALPHA_EPS {
                    let n: f64 = contribs
                        .iter()
                        .map(|c| c.alpha * c.trans * prep.splats[list[c.local] as usize].proj.p_cam.z())
                        .sum();
                    (gd / acc_alpha, ga - gd * n / (acc_alpha * acc_alpha))
                } else {
                    (0.0, ga)
                };

                let mut suffix_c = [
                    t_final * background[0],
                    t_final * background[1],
                    t_final * background[2],
                ];
                let mut suffix_n = 0.0;
                for c in contribs.iter().rev() {
                    let s = &prep.splats[list[c.local] as usize];
                    let z = s.proj.p_cam.z();
                    let inv = 1.0 / (1.0 - c.alpha);
                    let w = c.alpha * c.trans;
                    let mut d_alpha = 0.0;
                    for ch in 0..3 {
                        d_alpha += gc[ch] * (s.color[ch] * c.trans - suffix_c[ch] * inv);
                    }
                    d_alpha += g_n * (z * c.trans - suffix_n * inv);
                    d_alpha += g_a * t_final * inv;

                    let slot = &mut acc[c.local];
                    for ch in 0..3 {
                        slot.color[ch] += gc[ch] * w;
                        suffix_c[ch] += s.color[ch] * w;
                    }
                    slot.depth += g_n * w;
                    suffix_n += z * w;

                    if !c.clipped {
                        slot.opacity += d_alpha * c.g;
                        let d_power = d_alpha * s.opacity * c.g;
                        let [a, b, cc] = s.proj.conic;
                        slot.mean[0] += d_power * (a * c.dx + b * c.dy);
                        slot.mean[1] += d_power * (b * c.dx + cc * c.dy);
                        slot.conic[0] += d_power * (-0.5 * c.dx * c.dx);
                        slot.conic[1] += d_power * (-c.dx * c.dy);
                        slot.conic[2] += d_power * (-0.5 * c.dy * c.dy);
                    }
                }
            }
        }
        acc
    });

    let mut per_splat = vec![SplatGrad::default(); prep.splats.len()];
    for (tile, partial) in partials.iter().enumerate() {
        for (k, &si) in prep.tiles[tile].iter().enumerate() {
            per_splat[si as usize].add(&partial[k]);
        }
    }

    let mut out = RenderGradients::zeros(cloud);
    let degree = cloud.sh_degree();
    for (s, sg) in prep.splats.iter().zip(&per_splat) {
        let g = &cloud.gaussians[s.index];
        out.visible[s.index] = true;
        out.screen[s.index] = sg.mean;
        let grad = out.gaussian_mut(s.index);
        chain_splat(g, s, sg, cam, degree, grad);
    }
    Ok(out)
}

/// Pulls screen-space gradients back to the stored parameters of one Gaussian.
fn chain_splat(
    g: &gaussian::Gaussian,
    s: &Splat,
    sg: &SplatGrad,
    cam: &Camera,
    degree: usize,
    grad: &mut [f64],
) {
    let p = &s.proj;
    // conic -> 2D covariance
    let [ca, cb, cc] = p.cov2;
    let det2 = p.det * p.det;
    let [ga, gb, gcn] = sg.conic;
    let d_a = (-cc * cc * ga + cb * cc * gb - cb * cb * gcn) / det2;
    let d_b = (2.0 * cb * cc * ga - (ca * cc + cb * cb) * gb + 2.0 * ca * cb * gcn) / det2;
    let d_c = (-cb * cb * ga + ca * cb * gb - ca * ca * gcn) / det2;
    let g2 = [[d_a, 0.5 * d_b], [0.5 * d_b, d_c]];

    // cov2 = T Σ Tᵀ  =>  dΣ = Tᵀ G T,  dT = 2 G T Σ
    let t = &p.t;
    let mut d_cov3 = Mat3::ZERO;
    for i in 0..3 {
        for j in 0..3 {
            let mut v = 0.0;
            for k in 0..2 {
                for l in 0..2 {
                    v += t[k][i] * g2[k][l] * t[l][j];
                }
            }
            d_cov3.0[i][j] = v;
        }
    }
    let mut gt = [[0.0; 3]; 2];
    for k in 0..2 {
        for j in 0..3 {
            gt[k][j] = g2[k][0] * t[0][j] + g2[k][1] * t[1][j];
        }
    }
    let mut d_t = [[0.0; 3]; 2];
    for k in 0..2 {
        for j in 0..3 {
            d_t[k][j] = 2.0 * (0..3).map(|m| gt[k][m] * p.cov3.0[m][j]).sum::<f64>();
        }
    }
    // T = J W  =>  dJ = dT Wᵀ
    let w = &p.cam_rot.0;
    let mut d_j = [[0.0; 3]; 2];
    for k in 0..2 {
        for m in 0..3 {
            d_j[k][m] = (0..3).map(|j| d_t[k][j] * w[m][j]).sum();
        }
    }
    let (x, y, z) = (p.p_cam.x(), p.p_cam.y(), p.p_cam.z());
    let (fx, fy) = (cam.fx, cam.fy);
    let z2 = z * z;
    let z3 = z2 * z;
    let mut d_pcam = Vec3::ZERO;
    d_pcam[0] += d_j[0][2] * (-fx / z2);
    d_pcam[1] += d_j[1][2] * (-fy / z2);
    d_pcam[2] += d_j[0][0] * (-fx / z2)
        + d_j[0][2] * (2.0 * fx * x / z3)
        + d_j[1][1] * (-fy / z2)
        + d_j[1][2] * (2.0 * fy * y / z3);
    let [du, dv] = sg.mean;
    d_pcam[0] += du * fx / z;
    d_pcam[1] += dv * fy / z;
    d_pcam[2] += -du * fx * x / z2 - dv * fy * y / z2;
    d_pcam[2] += sg.depth;

    let mut d_mean = p.cam_rot.transpose().mul_vec(&d_pcam);

    // color: SH coefficients and view direction
    let basis = gaussian::sh_basis(degree, s.dir);
    let n_basis = gaussian::sh_basis_count(degree);
    let mut d_raw = [0.0; 3];
    for ch in 0..3 {
        if s.color_live[ch] {
            d_raw[ch] = sg.color[ch];
        }
    }
    for k in 0..n_basis {
        for ch in 0..3 {
            grad[COLOR_START + 3 * k + ch] = d_raw[ch] * basis[k];
        }
    }
    if degree > 0 && s.dir_len > 0.0 {
        let bg = gaussian::sh_basis_grad(degree, s.dir);
        let mut d_dir = Vec3::ZERO;
        for k in 1..n_basis {
            let mut coef = 0.0;
            for ch in 0..3 {
                coef += d_raw[ch] * g.sh[3 * k + ch];
            }
            for axis in 0..3 {
                d_dir[axis] += coef * bg[k][axis];
            }
        }
        // dir = v / |v|
        let proj = d_dir - s.dir * s.dir.dot(&d_dir);
        d_mean = d_mean + proj * (1.0 / s.dir_len);
    }
    grad[MEAN].copy_from_slice(&d_mean.0);

    // Σ = M Mᵀ, M = R diag(s)
    let m = p.rot * Mat3::diag(p.scale);
    let d_m = (d_cov3 * m).scale(2.0);
    let mut d_rot = Mat3::ZERO;
    let mut d_scale = [0.0; 3];
    for i in 0..3 {
        for j in 0..3 {
            d_scale[j] += d_m.0[i][j] * p.rot.0[i][j];
            d_rot.0[i][j] = d_m.0[i][j] * p.scale[j];
        }
    }
    for j in 0..3 {
        grad[SCALE.start + j] = d_scale[j] * p.scale[j];
    }
    let partials = math::rotation_matrix_partials(p.qn);
    let mut d_qn = [0.0; 4];
    for (k, part) in partials.iter().enumerate() {
        let mut v = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                v += d_rot.0[i][j] * part.0[i][j];
            }
        }
        d_qn[k] = v;
    }
    let qdot: f64 = (0..4).map(|k| p.qn[k] * d_qn[k]).sum();
    for k in 0..4 {
        grad[ROTATION.start + k] = (d_qn[k] - p.qn[k] * qdot) / p.q_norm;
    }
    grad[OPACITY.start] = sg.opacity * s.opacity * (1.0 - s.opacity);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{color_len, rgb_to_sh_dc, Gaussian};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn front_camera(w: usize, h: usize) -> Camera {
        Camera {
            fx: 40.0,
            fy: 40.0,
            cx: 0.5 * w as f64,
            cy: 0.5 * h as f64,
            width: w,
            height: h,
            rotation: Quat::IDENTITY,
            translation: Vec3::new(0.0, 0.0, 4.0),
        }
    }

    fn iso(mean: Vec3, r: f64, opacity: f64, rgb: [f64; 3], degree: usize) -> Gaussian {
        let mut sh = vec![0.0; color_len(degree)];
        for ch in 0..3 {
            sh[ch] = rgb_to_sh_dc(rgb[ch]);
        }
        Gaussian::from_decoded(mean, [r; 3], Quat::IDENTITY, opacity, sh).unwrap()
    }

    #[test]
    fn projected_covariance_of_axis_gaussian() {
        let cam = front_camera(64, 64);
        let r = 0.1;
        let g = iso(Vec3::ZERO, r, 0.5, [0.5; 3], 0);
        let p = project(&g, &cam).unwrap();
        let d = 4.0;
        let expected = (40.0 * r / d) * (40.0 * r / d) + LOW_PASS;
        assert!((p.cov[0] - expected).abs() < 1e-12);
        assert!((p.cov[2] - expected).abs() < 1e-12);
        assert!(p.cov[1].abs() < 1e-12);
        assert_eq!(p.mean, [32.0, 32.0]);
        assert!((p.depth - d).abs() < 1e-12);
    }

    #[test]
    fn projected_covariance_matches_numerical_jacobian() {
        let cam = front_camera(64, 64);
        let g = Gaussian::from_decoded(
            Vec3::new(0.3, -0.2, 0.5),
            [0.2, 0.1, 0.05],
            Quat([0.9, 0.2, -0.3, 0.1]).normalized(),
            0.5,
            vec![0.0; 3],
        )
        .unwrap();
        let p = project(&g, &cam).unwrap();
        // finite-difference Jacobian of the pixel projection map at the center
        let proj = |v: Vec3| {
            let c = cam.world_to_camera(&v);
            [cam.fx * c.x() / c.z() + cam.cx, cam.fy * c.y() / c.z() + cam.cy]
        };
        let h = 1e-6;
        let mut jac = [[0.0; 3]; 2];
        for k in 0..3 {
            let mut a = g.mean;
            let mut b = g.mean;
            a[k] += h;
            b[k] -= h;
            let (pa, pb) = (proj(a), proj(b));
            for i in 0..2 {
                jac[i][k] = (pa[i] - pb[i]) / (2.0 * h);
            }
        }
        let cov3 = g.covariance().unwrap();
        let mut expected = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..3 {
                    for l in 0..3 {
                        expected[i][j] += jac[i][k] * cov3.0[k][l] * jac[j][l];
                    }
                }
            }
        }
        assert!((p.cov[0] - expected[0][0] - LOW_PASS).abs() < 1e-6);
        assert!((p.cov[1] - expected[0][1]).abs() < 1e-6);
        assert!((p.cov[2] - expected[1][1] - LOW_PASS).abs() < 1e-6);
    }

    #[test]
    fn doubling_depth_halves_footprint() {
        let mut cam = front_camera(64, 64);
        let g = iso(Vec3::ZERO, 0.1, 0.5, [0.5; 3], 0);
        let near = project(&g, &cam).unwrap();
        cam.translation = Vec3::new(0.0, 0.0, 8.0);
        let far = project(&g, &cam).unwrap();
        let sd = |c: f64| (c - LOW_PASS).sqrt();
        assert!((sd(near.cov[0]) - 2.0 * sd(far.cov[0])).abs() < 1e-12);
    }

    #[test]
    fn behind_camera_is_culled() {
        let cam = front_camera(64, 64);
        let g = iso(Vec3::new(0.0, 0.0, -5.0), 0.1, 0.5, [0.5; 3], 0);
        assert!(project(&g, &cam).is_none());
        let far_side = iso(Vec3::new(50.0, 0.0, 0.0), 0.1, 0.5, [0.5; 3], 0);
        assert!(project(&far_side, &cam).is_none());
    }

    #[test]
    fn empty_cloud_renders_background() {
        let cam = front_camera(20, 18);
        let cloud = GaussianCloud::new(1).unwrap();
        let out = render(&cloud, &cam, [0.0; 3]);
        assert!(out.color.data().iter().all(|&v| v == 0.0));
        assert!(out.alpha.data().iter().all(|&v| v == 0.0));
        let out = render(&cloud, &cam, [0.2, 0.4, 0.6]);
        assert_eq!(out.color.pixel(3, 7), &[0.2, 0.4, 0.6]);
    }

    #[test]
    fn opaque_gaussian_center_pixel_takes_its_color() {
        // Center the splat on pixel (16, 16), whose sample point is (16.5, 16.5).
        let mut cam = front_camera(33, 33);
        cam.cx = 16.5;
        cam.cy = 16.5;
        let rgb = [0.8, 0.3, 0.6];
        let g = iso(Vec3::ZERO, 0.5, 0.999, rgb, 1);
        let cloud = GaussianCloud::with_gaussians(1, vec![g]).unwrap();
        let out = render(&cloud, &cam, [0.0; 3]);
        // closed form at the footprint center: α = min(0.99, σ) and C = α·c
        for ch in 0..3 {
            assert!((out.color.get(16, 16, ch) - 0.99 * rgb[ch]).abs() < 1e-12);
            assert!((out.color.get(16, 16, ch) - rgb[ch]).abs() < 1e-2);
        }
        assert!((out.depth.get(16, 16, 0) - 4.0).abs() < 1e-12);
    }

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize, degree: usize) -> GaussianCloud {
        let mut cloud = GaussianCloud::new(degree).unwrap();
        for _ in 0..n {
            let q = Quat([
                rng.random_range(0.5..1.0),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
            ]);
            let sh: Vec<f64> = (0..color_len(degree)).map(|_| rng.random_range(-0.6..0.6)).collect();
            let mut g = Gaussian::from_decoded(
                Vec3::new(
                    rng.random_range(-0.6..0.6),
                    rng.random_range(-0.6..0.6),
                    rng.random_range(-0.6..0.6),
                ),
                [
                    rng.random_range(0.08..0.3),
                    rng.random_range(0.08..0.3),
                    rng.random_range(0.08..0.3),
                ],
                Quat(q.0),
                rng.random_range(0.2..0.9),
                sh,
            )
            .unwrap();
            // keep the quaternion unnormalized to exercise that path
            g.rotation = q.0.map(|v| v * 1.3);
            cloud.push(g).unwrap();
        }
        cloud
    }

    #[test]
    fn permutation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cloud = random_cloud(&mut rng, 12, 1);
        let cam = front_camera(40, 36);
        let a = render(&cloud, &cam, [0.1, 0.2, 0.3]);
        let mut shuffled = cloud.clone();
        shuffled.gaussians.reverse();
        shuffled.gaussians.swap(0, 5);
        let b = render(&shuffled, &cam, [0.1, 0.2, 0.3]);
        assert_eq!(a.color, b.color);
        assert_eq!(a.depth, b.depth);
        assert_eq!(a.alpha, b.alpha);
    }

    #[test]
    fn render_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let cloud = random_cloud(&mut rng, 10, 1);
        let cam = front_camera(48, 40);
        assert_eq!(render(&cloud, &cam, [0.0; 3]), render(&cloud, &cam, [0.0; 3]));
    }

    #[test]
    fn single_gaussian_depth_equals_center_depth() {
        let cam = front_camera(32, 32);
        let g = iso(Vec3::new(0.1, 0.0, 0.7), 0.2, 0.7, [0.5; 3], 0);
        let z = cam.world_to_camera(&g.mean).z();
        let cloud = GaussianCloud::with_gaussians(0, vec![g]).unwrap();
        let out = render(&cloud, &cam, [0.0; 3]);
        for i in 0..out.alpha.len() {
            if out.alpha.data()[i] > 1e-3 {
                assert!((out.depth.data()[i] - z).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let cloud = random_cloud(&mut rng, 5, 1);
        let cam = front_camera(24, 24);
        let up = Upstream::color(ImageBuffer::new(24, 24, 3));
        let g = render_backward(&cloud, &cam, [0.0; 3], &up).unwrap();
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_rejects_bad_upstream() {
        let cloud = GaussianCloud::new(0).unwrap();
        let cam = front_camera(24, 24);
        let up = Upstream::color(ImageBuffer::new(23, 24, 3));
        assert!(render_backward(&cloud, &cam, [0.0; 3], &up).is_err());
    }

    proptest::proptest! {
        #[test]
        fn alpha_monotone_in_opacity(o1 in 0.01f64..0.95, delta in 0.0f64..0.5, dx in -0.3f64..0.3) {
            let cam = front_camera(8, 8);
            let back = iso(Vec3::new(dx, 0.0, 0.5), 0.3, 0.6, [0.5; 3], 0);
            let o2 = (o1 + delta).min(0.999);
            let mk = |o: f64| {
                let front = iso(Vec3::new(0.0, 0.05, 0.0), 0.25, o, [0.5; 3], 0);
                GaussianCloud::with_gaussians(0, vec![front, back.clone()]).unwrap()
            };
            let a = render(&mk(o1), &cam, [0.0; 3]);
            let b = render(&mk(o2), &cam, [0.0; 3]);
            for i in 0..a.alpha.len() {
                proptest::prop_assert!(b.alpha.data()[i] >= a.alpha.data()[i] - 1e-12);
            }
        }
    }
}
