//! Gaussian primitives, cameras, and the shared geometric math.
//!
//! Parameters are stored unconstrained: log-scale, opacity logit and an
//! unnormalized quaternion. Every per-Gaussian vector that the optimizer sees
//! (gradients, Adam moments, flag gradients) uses the flat layout
//! `[mean(3), log_scale(3), rotation(4), opacity_logit(1), sh(k_c)]`.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{Error, Result};
use crate::math::{self, Mat3, Quat, Vec3};

pub const MEAN: Range<usize> = 0..3;
pub const SCALE: Range<usize> = 3..6;
pub const ROTATION: Range<usize> = 6..10;
pub const OPACITY: Range<usize> = 10..11;
pub const COLOR_START: usize = 11;

/// Zeroth-order real SH constant.
pub const SH_C0: f64 = 0.282_094_791_773_878_14;
const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];

pub const MAX_SH_DEGREE: usize = 2;

/// Number of SH basis functions for a degree.
pub const fn sh_basis_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// `k_c`: number of color coefficients (three channels per basis function).
pub const fn color_len(degree: usize) -> usize {
    3 * sh_basis_count(degree)
}

/// Length of a flat parameter, gradient or flag vector.
pub const fn param_len(degree: usize) -> usize {
    COLOR_START + color_len(degree)
}

/// Converts an RGB color to the matching degree-0 coefficient.
pub fn rgb_to_sh_dc(rgb: f64) -> f64 {
    (rgb - 0.5) / SH_C0
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian {
    pub mean: Vec3,
    pub log_scale: [f64; 3],
    /// Unnormalized `(w, x, y, z)` quaternion.
    pub rotation: [f64; 4],
    pub opacity_logit: f64,
    /// SH coefficients ordered `[basis][channel]`.
    pub sh: Vec<f64>,
    /// Flag gradient; `None` once stripped.
    pub flags: Option<Vec<f64>>,
}

impl Gaussian {
    /// Builds a Gaussian from decoded attributes.
    pub fn from_decoded(
        mean: Vec3,
        scale: [f64; 3],
        rotation: Quat,
        opacity: f64,
        sh: Vec<f64>,
    ) -> Result<Self> {
        if scale.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::invalid("scale components must be positive"));
        }
        if !(opacity > 0.0 && opacity < 1.0) {
            return Err(Error::invalid("opacity must lie in (0, 1)"));
        }
        if rotation.norm() < 1e-12 {
            return Err(Error::invalid("zero-norm quaternion"));
        }
        Ok(Gaussian {
            mean,
            log_scale: scale.map(math::ln),
            rotation: rotation.0,
            opacity_logit: math::logit(opacity),
            sh,
            flags: None,
        })
    }

    pub fn scale(&self) -> [f64; 3] {
        self.log_scale.map(math::exp)
    }

    pub fn set_scale(&mut self, s: [f64; 3]) {
        self.log_scale = s.map(math::ln);
    }

    pub fn opacity(&self) -> f64 {
        math::sigmoid(self.opacity_logit)
    }

    pub fn set_opacity(&mut self, o: f64) {
        self.opacity_logit = math::logit(o);
    }

    pub fn quat(&self) -> Quat {
        Quat(self.rotation)
    }

    pub fn param_len(&self) -> usize {
        COLOR_START + self.sh.len()
    }

    pub fn write_params(&self, out: &mut [f64]) {
        out[MEAN].copy_from_slice(&self.mean.0);
        out[SCALE].copy_from_slice(&self.log_scale);
        out[ROTATION].copy_from_slice(&self.rotation);
        out[OPACITY.start] = self.opacity_logit;
        out[COLOR_START..].copy_from_slice(&self.sh);
    }

    pub fn read_params(&mut self, p: &[f64]) {
        self.mean.0.copy_from_slice(&p[MEAN]);
        self.log_scale.copy_from_slice(&p[SCALE]);
        self.rotation.copy_from_slice(&p[ROTATION]);
        self.opacity_logit = p[OPACITY.start];
        self.sh.copy_from_slice(&p[COLOR_START..]);
    }

    pub fn params(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.param_len()];
        self.write_params(&mut v);
        v
    }

    /// Flag vector, allocating zeros on first use.
    pub fn flags_mut(&mut self) -> &mut Vec<f64> {
        let n = self.param_len();
        self.flags.get_or_insert_with(|| vec![0.0; n])
    }

    pub fn reset_flags(&mut self) {
        if let Some(f) = self.flags.as_mut() {
            f.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn covariance(&self) -> Result<Mat3> {
        covariance(self.scale(), self.quat())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianCloud {
    pub gaussians: Vec<Gaussian>,
    sh_degree: usize,
}

impl GaussianCloud {
    pub fn new(sh_degree: usize) -> Result<Self> {
        if sh_degree > MAX_SH_DEGREE {
            return Err(Error::invalid(alloc::format!(
                "sh degree {sh_degree} exceeds supported maximum {MAX_SH_DEGREE}"
            )));
        }
        Ok(GaussianCloud {
            gaussians: Vec::new(),
            sh_degree,
        })
    }

    pub fn with_gaussians(sh_degree: usize, gaussians: Vec<Gaussian>) -> Result<Self> {
        let mut cloud = Self::new(sh_degree)?;
        for g in gaussians {
            cloud.push(g)?;
        }
        Ok(cloud)
    }

    pub fn push(&mut self, g: Gaussian) -> Result<()> {
        if g.sh.len() != color_len(self.sh_degree) {
            return Err(Error::dims(
                "GaussianCloud::push (sh length)",
                color_len(self.sh_degree),
                g.sh.len(),
            ));
        }
        if let Some(f) = &g.flags {
            if f.len() != g.param_len() {
                return Err(Error::dims(
                    "GaussianCloud::push (flag length)",
                    g.param_len(),
                    f.len(),
                ));
            }
        }
        self.gaussians.push(g);
        Ok(())
    }

    pub fn sh_degree(&self) -> usize {
        self.sh_degree
    }

    pub fn param_len(&self) -> usize {
        param_len(self.sh_degree)
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn iter(&self) -> core::slice::Iter<'_, Gaussian> {
        self.gaussians.iter()
    }

    pub fn has_flags(&self) -> bool {
        self.gaussians.iter().any(|g| g.flags.is_some())
    }
}

/// Pinhole camera with a world-to-camera pose (`p_cam = R·p_world + t`),
/// looking down `+z` with `y` pointing down the image.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub rotation: Quat,
    pub translation: Vec3,
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("camera resolution must be at least 1x1"));
        }
        if (self.rotation.norm() - 1.0).abs() > 1e-6 {
            return Err(Error::invalid("camera rotation must be unit norm"));
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`, with `up` roughly opposite the image `y` axis.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, fov_x: f64, width: usize, height: usize) -> Camera {
        let forward = (target - eye).normalized();
        let right = forward.cross(&up).normalized();
        let down = forward.cross(&right);
        let r = Mat3::from_rows(right, down, forward);
        let translation = -r.mul_vec(&eye);
        let fx = 0.5 * width as f64 / math::tan(0.5 * fov_x);
        Camera {
            fx,
            fy: fx,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
            width,
            height,
            rotation: Quat::from_matrix(&r),
            translation,
        }
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        self.rotation.to_matrix_unchecked()
    }

    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation_matrix().mul_vec(p) + self.translation
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3 {
        -self.rotation_matrix().transpose().mul_vec(&self.translation)
    }

    /// Same pose with the image resized by `1/factor` (intrinsics scaled accordingly).
    pub fn downscaled(&self, factor: usize) -> Camera {
        let f = factor as f64;
        Camera {
            fx: self.fx / f,
            fy: self.fy / f,
            cx: self.cx / f,
            cy: self.cy / f,
            width: self.width / factor,
            height: self.height / factor,
            ..self.clone()
        }
    }

    pub fn upscaled(&self, factor: usize) -> Camera {
        let f = factor as f64;
        Camera {
            fx: self.fx * f,
            fy: self.fy * f,
            cx: self.cx * f,
            cy: self.cy * f,
            width: self.width * factor,
            height: self.height * factor,
            ..self.clone()
        }
    }
}

/// Rotation matrix of `q` after normalization.
pub fn rotation_matrix(q: Quat) -> Result<Mat3> {
    if q.norm() < 1e-12 {
        return Err(Error::invalid("zero-norm quaternion"));
    }
    Ok(q.to_matrix_unchecked())
}

/// `Σ = R·diag(s)²·Rᵀ`.
pub fn covariance(s: [f64; 3], q: Quat) -> Result<Mat3> {
    if s.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::invalid("scale components must be positive"));
    }
    let r = rotation_matrix(q)?;
    let m = r * Mat3::diag(s);
    Ok(m * m.transpose())
}

/// Real SH basis values up to degree 2 (unused entries are zero).
pub fn sh_basis(degree: usize, dir: Vec3) -> [f64; 9] {
    let mut b = [0.0; 9];
    b[0] = SH_C0;
    if degree >= 1 {
        let [x, y, z] = dir.0;
        b[1] = -SH_C1 * y;
        b[2] = SH_C1 * z;
        b[3] = -SH_C1 * x;
        if degree >= 2 {
            b[4] = SH_C2[0] * x * y;
            b[5] = SH_C2[1] * y * z;
            b[6] = SH_C2[2] * (2.0 * z * z - x * x - y * y);
            b[7] = SH_C2[3] * x * z;
            b[8] = SH_C2[4] * (x * x - y * y);
        }
    }
    b
}

/// Derivatives of each basis function with respect to `(x, y, z)`.
pub fn sh_basis_grad(degree: usize, dir: Vec3) -> [[f64; 3]; 9] {
    let mut g = [[0.0; 3]; 9];
    if degree >= 1 {
        let [x, y, z] = dir.0;
        g[1] = [0.0, -SH_C1, 0.0];
        g[2] = [0.0, 0.0, SH_C1];
        g[3] = [-SH_C1, 0.0, 0.0];
        if degree >= 2 {
            g[4] = [SH_C2[0] * y, SH_C2[0] * x, 0.0];
            g[5] = [0.0, SH_C2[1] * z, SH_C2[1] * y];
            g[6] = [-2.0 * SH_C2[2] * x, -2.0 * SH_C2[2] * y, 4.0 * SH_C2[2] * z];
            g[7] = [SH_C2[3] * z, 0.0, SH_C2[3] * x];
            g[8] = [2.0 * SH_C2[4] * x, -2.0 * SH_C2[4] * y, 0.0];
        }
    }
    g
}

/// View-dependent RGB before clamping: `Σ c_k·Y_k(dir) + 0.5`.
pub fn eval_sh(c: &[f64], dir: Vec3, degree: usize) -> Result<[f64; 3]> {
    if degree > MAX_SH_DEGREE {
        return Err(Error::invalid("sh degree above 2 is not supported"));
    }
    if c.len() != color_len(degree) {
        return Err(Error::dims("eval_sh", color_len(degree), c.len()));
    }
    Ok(eval_sh_unchecked(c, dir, degree))
}

pub(crate) fn eval_sh_unchecked(c: &[f64], dir: Vec3, degree: usize) -> [f64; 3] {
    let basis = sh_basis(degree, dir);
    let mut rgb = [0.5; 3];
    for (k, b) in basis.iter().take(sh_basis_count(degree)).enumerate() {
        for (ch, v) in rgb.iter_mut().enumerate() {
            *v += c[3 * k + ch] * b;
        }
    }
    rgb
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::{FRAC_1_SQRT_2, PI};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_quat(rng: &mut ChaCha8Rng) -> Quat {
        loop {
            let q = Quat([
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ]);
            if q.norm() > 0.1 {
                return q.normalized();
            }
        }
    }

    /// `q·(0,v)·q*` computed with Hamilton products, independent of the matrix formula.
    fn sandwich(q: Quat, v: Vec3) -> Vec3 {
        let p = Quat([0.0, v.0[0], v.0[1], v.0[2]]);
        let r = q.mul(&p).mul(&q.conjugate());
        Vec3([r.0[1], r.0[2], r.0[3]])
    }

    #[test]
    fn identity_quaternion_gives_identity() {
        assert_eq!(rotation_matrix(Quat::IDENTITY).unwrap(), Mat3::IDENTITY);
    }

    #[test]
    fn quarter_turn_about_z() {
        let r = rotation_matrix(Quat([FRAC_1_SQRT_2, 0.0, 0.0, FRAC_1_SQRT_2])).unwrap();
        let v = r.mul_vec(&Vec3::new(1.0, 0.0, 0.0));
        assert!((v - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn zero_quaternion_rejected() {
        assert!(rotation_matrix(Quat([0.0; 4])).is_err());
    }

    #[test]
    fn random_rotations_match_sandwich_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let q = random_quat(&mut rng);
            let r = rotation_matrix(q).unwrap();
            assert!((r.det() - 1.0).abs() < 1e-6);
            let rrt = r * r.transpose();
            for i in 0..3 {
                for j in 0..3 {
                    let e = if i == j { 1.0 } else { 0.0 };
                    assert!((rrt.0[i][j] - e).abs() < 1e-6);
                }
            }
            for _ in 0..100 {
                let v = Vec3::new(
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                );
                assert!((r.mul_vec(&v) - sandwich(q, v)).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn covariance_examples() {
        let c = covariance([1.0; 3], Quat::IDENTITY).unwrap();
        assert_eq!(c, Mat3::IDENTITY);
        let c = covariance([2.0, 1.0, 1.0], Quat::IDENTITY).unwrap();
        assert_eq!(c, Mat3::diag([4.0, 1.0, 1.0]));

        let q = Quat([FRAC_1_SQRT_2, 0.0, 0.0, FRAC_1_SQRT_2]);
        let c = covariance([2.0, 1.0, 1.0], q).unwrap();
        // conjugate diag(4,1,1) by the quarter turn
        let r = Mat3([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]);
        let expected = r * Mat3::diag([4.0, 1.0, 1.0]) * r.transpose();
        for i in 0..3 {
            for j in 0..3 {
                assert!((c.0[i][j] - expected.0[i][j]).abs() < 1e-12);
            }
        }
        assert!((c.0[0][0] - 1.0).abs() < 1e-12 && (c.0[1][1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn covariance_rejects_nonpositive_scale() {
        assert!(covariance([1.0, 0.0, 1.0], Quat::IDENTITY).is_err());
        assert!(covariance([1.0, -1.0, 1.0], Quat::IDENTITY).is_err());
    }

    #[test]
    fn degree_zero_is_view_independent() {
        let dc = rgb_to_sh_dc(0.5);
        let c = [dc, dc, dc];
        for dir in [Vec3::new(0.0, 0.0, 1.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, -1.0, 0.0)] {
            let rgb = eval_sh(&c, dir, 0).unwrap();
            assert!(rgb.iter().all(|v| (v - 0.5).abs() < 1e-15));
        }
    }

    #[test]
    fn band_one_is_directional() {
        let mut c = vec![0.0; color_len(1)];
        c[3 * 2] = 0.4; // z-aligned basis, red channel
        let a = eval_sh(&c, Vec3::new(0.0, 0.0, 1.0), 1).unwrap();
        let b = eval_sh(&c, Vec3::new(0.0, 0.0, -1.0), 1).unwrap();
        assert!((a[0] - b[0]).abs() > 0.1);
    }

    #[test]
    fn eval_sh_rejects_wrong_length() {
        assert!(eval_sh(&[0.0; 5], Vec3::new(0.0, 0.0, 1.0), 0).is_err());
    }

    #[test]
    fn sh_matches_closed_form_real_basis() {
        // Real SH with the Condon-Shortley phase, written from the textbook formulas.
        let closed_form = |dir: Vec3| -> [f64; 9] {
            let [x, y, z] = dir.0;
            let y00 = 0.5 * (1.0 / PI).sqrt();
            let k1 = (3.0 / (4.0 * PI)).sqrt();
            let k2 = 0.5 * (15.0 / PI).sqrt();
            let k20 = 0.25 * (5.0 / PI).sqrt();
            let k22 = 0.25 * (15.0 / PI).sqrt();
            [
                y00,
                -k1 * y,
                k1 * z,
                -k1 * x,
                k2 * x * y,
                -k2 * y * z,
                k20 * (3.0 * z * z - 1.0),
                -k2 * x * z,
                k22 * (x * x - y * y),
            ]
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for degree in 0..=2 {
            for _ in 0..50 {
                let dir = Vec3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
                .normalized();
                let c: Vec<f64> = (0..color_len(degree)).map(|_| rng.random_range(-1.0..1.0)).collect();
                let got = eval_sh(&c, dir, degree).unwrap();
                let basis = closed_form(dir);
                for ch in 0..3 {
                    let mut expected = 0.5;
                    for k in 0..sh_basis_count(degree) {
                        expected += c[3 * k + ch] * basis[k];
                    }
                    assert!((got[ch] - expected).abs() < 1e-12, "deg {degree}");
                }
            }
        }
    }

    #[test]
    fn sh_basis_gradient_matches_finite_differences() {
        let dir = Vec3::new(0.3, -0.5, 0.8);
        let g = sh_basis_grad(2, dir);
        let h = 1e-6;
        for axis in 0..3 {
            let mut p = dir;
            let mut m = dir;
            p.0[axis] += h;
            m.0[axis] -= h;
            let (bp, bm) = (sh_basis(2, p), sh_basis(2, m));
            for k in 0..9 {
                let fd = (bp[k] - bm[k]) / (2.0 * h);
                assert!((fd - g[k][axis]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn look_at_points_forward() {
        let eye = Vec3::new(0.0, -4.0, 1.0);
        let cam = Camera::look_at(eye, Vec3::ZERO, Vec3::new(0.0, 0.0, 1.0), 0.8, 32, 24);
        cam.validate().unwrap();
        let p = cam.world_to_camera(&Vec3::ZERO);
        assert!(p.x().abs() < 1e-12 && p.y().abs() < 1e-12);
        assert!((p.z() - eye.norm()).abs() < 1e-12);
        assert!((cam.center() - eye).norm() < 1e-12);
        // world up projects to the top of the image
        let up = cam.world_to_camera(&Vec3::new(0.0, 0.0, 0.5));
        assert!(up.y() < 0.0);
    }

    #[test]
    fn cloud_rejects_mismatched_color_length() {
        let mut cloud = GaussianCloud::new(1).unwrap();
        let g = Gaussian::from_decoded(Vec3::ZERO, [1.0; 3], Quat::IDENTITY, 0.5, vec![0.0; 3]).unwrap();
        assert!(cloud.push(g).is_err());
        assert!(GaussianCloud::new(3).is_err());
    }

    #[test]
    fn flag_layout_partitions_parameters() {
        for deg in 0..=2 {
            assert_eq!(param_len(deg), 3 + 3 + 4 + 1 + color_len(deg));
        }
        assert_eq!(color_len(1), 12);
    }

    proptest::proptest! {
        #[test]
        fn covariance_is_symmetric_psd(
            s in proptest::array::uniform3(0.01f64..3.0),
            q in proptest::array::uniform4(-1.0f64..1.0),
            v in proptest::array::uniform3(-1.0f64..1.0),
        ) {
            proptest::prop_assume!(Quat(q).norm() > 1e-3);
            let c = covariance(s, Quat(q)).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    proptest::prop_assert!((c.0[i][j] - c.0[j][i]).abs() < 1e-9);
                }
            }
            let v = Vec3(v);
            proptest::prop_assert!(v.dot(&c.mul_vec(&v)) >= -1e-12);
            // trace equals the sum of eigenvalues s²
            let tr = c.0[0][0] + c.0[1][1] + c.0[2][2];
            proptest::prop_assert!((tr - s.iter().map(|x| x * x).sum::<f64>()).abs() < 1e-9);
        }

        #[test]
        fn rotation_double_cover(q in proptest::array::uniform4(-1.0f64..1.0)) {
            proptest::prop_assume!(Quat(q).norm() > 1e-3);
            let a = rotation_matrix(Quat(q)).unwrap();
            let b = rotation_matrix(Quat(q.map(|v| -v))).unwrap();
            proptest::prop_assert_eq!(a, b);
        }

        #[test]
        fn storage_round_trips(
            s in proptest::array::uniform3(1e-3f64..10.0),
            o in 1e-4f64..0.9999,
        ) {
            let mut g = Gaussian::from_decoded(Vec3::ZERO, s, Quat::IDENTITY, o, vec![0.0; 3]).unwrap();
            for k in 0..3 {
                proptest::prop_assert!((g.scale()[k] - s[k]).abs() <= 1e-7 * s[k].max(1.0));
            }
            proptest::prop_assert!((g.opacity() - o).abs() < 1e-7);
            g.set_opacity(o);
            proptest::prop_assert!((g.opacity() - o).abs() < 1e-7);
        }
    }
}
