//! Training objectives and their gradients with respect to the rendered image.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image::{area_downsample, ImageBuffer};
use crate::math;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// A scalar loss and its gradient with respect to the first argument.
#[derive(Clone, Debug)]
pub struct LossGrad {
    pub value: f64,
    pub grad: ImageBuffer,
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean absolute error.
pub fn l1(a: &ImageBuffer, b: &ImageBuffer) -> Result<LossGrad> {
    a.check_same_shape(b, "l1")?;
    let n = a.len().max(1) as f64;
    let mut grad = ImageBuffer::new(a.width(), a.height(), a.channels());
    let mut sum = 0.0;
    for ((g, x), y) in grad.data_mut().iter_mut().zip(a.data()).zip(b.data()) {
        let d = x - y;
        sum += d.abs();
        *g = sign(d) / n;
    }
    Ok(LossGrad { value: sum / n, grad })
}

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - half;
        *t = math::exp(-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA));
    }
    let s: f64 = taps.iter().sum();
    taps.map(|t| t / s)
}

/// Separable "same" Gaussian filter with zero padding. The window is
/// symmetric, so this is also its own adjoint.
fn blur_plane(src: &[f64], w: usize, h: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let xx = x as isize + k as isize - half;
                if xx >= 0 && (xx as usize) < w {
                    acc += t * row[xx as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for (k, t) in taps.iter().enumerate() {
            let yy = y as isize + k as isize - half;
            if yy < 0 || yy as usize >= h {
                continue;
            }
            let src_row = &tmp[yy as usize * w..(yy as usize + 1) * w];
            let dst = &mut out[y * w..(y + 1) * w];
            for (d, s) in dst.iter_mut().zip(src_row) {
                *d += t * s;
            }
        }
    }
    out
}

fn plane(img: &ImageBuffer, c: usize) -> Vec<f64> {
    let ch = img.channels();
    img.data().iter().skip(c).step_by(ch).copied().collect()
}

/// Mean windowed SSIM and, optionally, its gradient with respect to `a`
/// scaled by `grad_scale`.
fn ssim_impl(a: &ImageBuffer, b: &ImageBuffer, grad_scale: Option<f64>) -> (f64, Option<ImageBuffer>) {
    let (w, h, ch) = (a.width(), a.height(), a.channels());
    let n = (w * h * ch).max(1) as f64;
    let taps = gaussian_taps();
    let mut total = 0.0;
    let mut grad = grad_scale.map(|_| ImageBuffer::new(w, h, ch));
    for c in 0..ch {
        let pa = plane(a, c);
        let pb = plane(b, c);
        let sq = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(x, y)| x * y).collect() };
        let mu_a = blur_plane(&pa, w, h, &taps);
        let mu_b = blur_plane(&pb, w, h, &taps);
        let e_aa = blur_plane(&sq(&pa, &pa), w, h, &taps);
        let e_bb = blur_plane(&sq(&pb, &pb), w, h, &taps);
        let e_ab = blur_plane(&sq(&pa, &pb), w, h, &taps);
        let mut d_mu = vec![0.0; w * h];
        let mut d_eaa = vec![0.0; w * h];
        let mut d_eab = vec![0.0; w * h];
        for i in 0..w * h {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let a1 = 2.0 * ma * mb + SSIM_C1;
            let a2 = 2.0 * (e_ab[i] - ma * mb) + SSIM_C2;
            let b1 = ma * ma + mb * mb + SSIM_C1;
            let b2 = (e_aa[i] - ma * ma) + (e_bb[i] - mb * mb) + SSIM_C2;
            let den = b1 * b2;
            let s = a1 * a2 / den;
            total += s;
            if let Some(scale) = grad_scale {
                d_mu[i] = scale
                    * ((2.0 * mb * a2 - 2.0 * mb * a1) / den - s * (2.0 * ma / b1 - 2.0 * ma / b2));
                d_eaa[i] = scale * (-s / b2);
                d_eab[i] = scale * (2.0 * a1 / den);
            }
        }
        if let Some(g) = grad.as_mut() {
            let g_mu = blur_plane(&d_mu, w, h, &taps);
            let g_eaa = blur_plane(&d_eaa, w, h, &taps);
            let g_eab = blur_plane(&d_eab, w, h, &taps);
            for i in 0..w * h {
                let idx = i * ch + c;
                g.data_mut()[idx] = g_mu[i] + 2.0 * pa[i] * g_eaa[i] + pb[i] * g_eab[i];
            }
        }
    }
    (total / n, grad)
}

/// Mean SSIM over pixels and channels (11×11 Gaussian window, σ = 1.5).
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    a.check_same_shape(b, "ssim")?;
    Ok(ssim_impl(a, b, None).0)
}

/// Structural dissimilarity `(1 − SSIM) / 2`.
pub fn d_ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<LossGrad> {
    a.check_same_shape(b, "d_ssim")?;
    let n = a.len().max(1) as f64;
    let (s, grad) = ssim_impl(a, b, Some(-0.5 / n));
    Ok(LossGrad {
        value: 0.5 * (1.0 - s),
        grad: grad.unwrap_or_else(|| ImageBuffer::new(a.width(), a.height(), a.channels())),
    })
}

/// Photometric loss `(1 − β)·L1 + β·D-SSIM`, differentiable in both inputs.
#[derive(Clone, Debug)]
pub struct PhotometricLoss {
    pub value: f64,
    pub l1: f64,
    pub d_ssim: f64,
    pub grad_pred: ImageBuffer,
    pub grad_target: ImageBuffer,
}

pub fn loss_sr(pred: &ImageBuffer, target: &ImageBuffer, beta: f64) -> Result<PhotometricLoss> {
    let mut out = photometric(pred, target, beta)?;
    let d_t = d_ssim(target, pred)?;
    let n = pred.len().max(1) as f64;
    // L1 is antisymmetric in its arguments; SSIM is symmetric.
    for (i, g) in out.grad_target.data_mut().iter_mut().enumerate() {
        let d = pred.data()[i] - target.data()[i];
        *g = -(1.0 - beta) * sign(d) / n + beta * d_t.grad.data()[i];
    }
    Ok(out)
}

/// Same as [`loss_sr`] but without the target gradient.
pub fn photometric(pred: &ImageBuffer, target: &ImageBuffer, beta: f64) -> Result<PhotometricLoss> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::invalid("beta must lie in [0, 1]"));
    }
    let a = l1(pred, target)?;
    let b = d_ssim(pred, target)?;
    let mut grad = a.grad;
    for (g, s) in grad.data_mut().iter_mut().zip(b.grad.data()) {
        *g = (1.0 - beta) * *g + beta * s;
    }
    Ok(PhotometricLoss {
        value: (1.0 - beta) * a.value + beta * b.value,
        l1: a.value,
        d_ssim: b.value,
        grad_target: ImageBuffer::new(pred.width(), pred.height(), pred.channels()),
        grad_pred: grad,
    })
}

/// Total variation: mean absolute forward difference over all horizontal
/// and vertical neighbour pairs.
pub fn tv(img: &ImageBuffer) -> Result<LossGrad> {
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let count = ch * (h * w.saturating_sub(1) + h.saturating_sub(1) * w);
    let mut grad = ImageBuffer::new(w, h, ch);
    if count == 0 {
        return Ok(LossGrad { value: 0.0, grad });
    }
    let inv = 1.0 / count as f64;
    let mut sum = 0.0;
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let v = img.get(x, y, c);
                if x + 1 < w {
                    let d = img.get(x + 1, y, c) - v;
                    sum += d.abs();
                    let s = sign(d) * inv;
                    grad.data_mut()[img.index(x + 1, y, c)] += s;
                    grad.data_mut()[img.index(x, y, c)] -= s;
                }
                if y + 1 < h {
                    let d = img.get(x, y + 1, c) - v;
                    sum += d.abs();
                    let s = sign(d) * inv;
                    grad.data_mut()[img.index(x, y + 1, c)] += s;
                    grad.data_mut()[img.index(x, y, c)] -= s;
                }
            }
        }
    }
    Ok(LossGrad { value: sum * inv, grad })
}

/// Sub-pixel constraint: L1 between the area-downsampled render and the
/// low-resolution observation.
pub fn subpixel(hr: &ImageBuffer, lr: &ImageBuffer, factor: usize) -> Result<LossGrad> {
    if factor == 0
        || hr.width() != lr.width() * factor
        || hr.height() != lr.height() * factor
        || hr.channels() != lr.channels()
    {
        return Err(Error::dims(
            "subpixel",
            alloc::format!("{}x{} (factor {factor})", lr.width() * factor, lr.height() * factor),
            alloc::format!("{}x{}", hr.width(), hr.height()),
        ));
    }
    let down = area_downsample(hr, factor)?;
    let low = l1(&down, lr)?;
    let spread = 1.0 / (factor * factor) as f64;
    let mut grad = ImageBuffer::new(hr.width(), hr.height(), hr.channels());
    for y in 0..hr.height() {
        for x in 0..hr.width() {
            for c in 0..hr.channels() {
                grad.set(x, y, c, low.grad.get(x / factor, y / factor, c) * spread);
            }
        }
    }
    Ok(LossGrad { value: low.value, grad })
}

/// Result of the Pearson depth term. `degenerate` is set when either side
/// has no variance (or too few valid pixels); the loss is then skipped.
#[derive(Clone, Debug)]
pub struct PearsonLoss {
    pub value: f64,
    pub grad: ImageBuffer,
    pub degenerate: bool,
}

const VARIANCE_EPS: f64 = 1e-18;

/// Adds `1 − ρ` over the masked pixel set `idx` into `grad` with weight `weight`.
fn pearson_on(r: &[f64], p: &[f64], idx: &[usize], weight: f64, grad: &mut [f64]) -> Option<f64> {
    if idx.len() < 2 {
        return None;
    }
    let n = idx.len() as f64;
    let mr = idx.iter().map(|&i| r[i]).sum::<f64>() / n;
    let mp = idx.iter().map(|&i| p[i]).sum::<f64>() / n;
    let (mut srr, mut spp, mut srp) = (0.0, 0.0, 0.0);
    for &i in idx {
        let (a, b) = (r[i] - mr, p[i] - mp);
        srr += a * a;
        spp += b * b;
        srp += a * b;
    }
    if srr <= VARIANCE_EPS || spp <= VARIANCE_EPS {
        return None;
    }
    let denom = math::sqrt(srr * spp);
    let rho = srp / denom;
    for &i in idx {
        let d_rho = (p[i] - mp) / denom - rho * (r[i] - mr) / srr;
        grad[i] -= weight * d_rho;
    }
    Some(1.0 - rho)
}

/// `1 − ρ(rendered, prior)` over pixels where `mask` is set.
pub fn pearson_depth(rendered: &ImageBuffer, prior: &ImageBuffer, mask: &[bool]) -> Result<PearsonLoss> {
    pearson_depth_patched(rendered, prior, mask, 0)
}

/// Patch-wise variant: mean of `1 − ρ` over non-overlapping `patch × patch`
/// windows (`patch == 0` means one global window).
pub fn pearson_depth_patched(
    rendered: &ImageBuffer,
    prior: &ImageBuffer,
    mask: &[bool],
    patch: usize,
) -> Result<PearsonLoss> {
    rendered.check_same_shape(prior, "pearson_depth")?;
    if rendered.channels() != 1 {
        return Err(Error::invalid("pearson_depth expects single-channel depth maps"));
    }
    if mask.len() != rendered.len() {
        return Err(Error::dims("pearson_depth (mask)", rendered.len(), mask.len()));
    }
    let (w, h) = (rendered.width(), rendered.height());
    let windows: Vec<Vec<usize>> = if patch == 0 {
        vec![(0..w * h).filter(|&i| mask[i]).collect()]
    } else {
        let mut out = Vec::new();
        for y0 in (0..h).step_by(patch) {
            for x0 in (0..w).step_by(patch) {
                let mut idx = Vec::new();
                for y in y0..(y0 + patch).min(h) {
                    for x in x0..(x0 + patch).min(w) {
                        if mask[y * w + x] {
                            idx.push(y * w + x);
                        }
                    }
                }
                out.push(idx);
            }
        }
        out
    };
    // Two passes: count usable windows first so weights average correctly.
    let mut scratch = vec![0.0; w * h];
    let usable: Vec<&Vec<usize>> = windows
        .iter()
        .filter(|idx| pearson_on(rendered.data(), prior.data(), idx, 0.0, &mut scratch).is_some())
        .collect();
    let mut grad = ImageBuffer::new(w, h, 1);
    if usable.is_empty() {
        return Ok(PearsonLoss {
            value: 0.0,
            grad,
            degenerate: true,
        });
    }
    let weight = 1.0 / usable.len() as f64;
    let mut total = 0.0;
    for idx in usable {
        if let Some(l) = pearson_on(rendered.data(), prior.data(), idx, weight, grad.data_mut()) {
            total += weight * l;
        }
    }
    Ok(PearsonLoss {
        value: total,
        grad,
        degenerate: false,
    })
}

/// Individually logged components of the high-resolution objective.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Stage2Terms {
    pub sr: f64,
    pub tv: f64,
    pub subpixel: f64,
    pub tv_weight: f64,
    pub subpixel_weight: f64,
}

impl Stage2Terms {
    pub fn aux(&self) -> f64 {
        self.tv_weight * self.tv + self.subpixel_weight * self.subpixel
    }
}

/// `L_AUX + L_SR`.
pub fn loss_total_stage2(terms: &Stage2Terms) -> f64 {
    terms.aux() + terms.sr
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, w: usize, h: usize, c: usize) -> ImageBuffer {
        ImageBuffer::from_vec(w, h, c, (0..w * h * c).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn l1_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random(&mut rng, 5, 4, 3);
        assert_eq!(l1(&a, &a).unwrap().value, 0.0);
        assert!(l1(&a, &a).unwrap().grad.data().iter().all(|&g| g == 0.0));
        let b = a.map(|v| v - 0.1);
        assert!((l1(&a, &b).unwrap().value - 0.1).abs() < 1e-12);
        let c = random(&mut rng, 5, 4, 3);
        let direct: f64 = a.data().iter().zip(c.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / 60.0;
        assert!((l1(&a, &c).unwrap().value - direct).abs() < 1e-15);
        assert!(l1(&a, &random(&mut rng, 4, 4, 3)).is_err());
    }

    #[test]
    fn d_ssim_of_identical_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random(&mut rng, 16, 12, 3);
        let r = d_ssim(&a, &a).unwrap();
        assert!(r.value.abs() < 1e-12);
        assert!(r.grad.data().iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn loss_sr_endpoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&mut rng, 12, 12, 3);
        let b = random(&mut rng, 12, 12, 3);
        assert!(loss_sr(&a, &a, 0.2).unwrap().value.abs() < 1e-12);
        let l = l1(&a, &b).unwrap().value;
        let d = d_ssim(&a, &b).unwrap().value;
        assert_eq!(loss_sr(&a, &b, 0.0).unwrap().value, l);
        assert_eq!(loss_sr(&a, &b, 1.0).unwrap().value, d);
        let mixed = loss_sr(&a, &b, 0.2).unwrap();
        assert_eq!(mixed.value, 0.8 * l + 0.2 * d);
        assert!(loss_sr(&a, &b, 1.5).is_err());
    }

    #[test]
    fn tv_hand_computed_step_edge() {
        // Columns 0-1 hold 0, columns 2-3 hold h: four unit horizontal jumps
        // of size h among 4·3 + 3·4 = 24 differences.
        let h = 0.7;
        let mut img = ImageBuffer::new(4, 4, 1);
        for y in 0..4 {
            for x in 2..4 {
                img.set(x, y, 0, h);
            }
        }
        assert!((tv(&img).unwrap().value - h / 6.0).abs() < 1e-15);
        assert_eq!(tv(&ImageBuffer::filled(4, 4, 3, 0.3)).unwrap().value, 0.0);
    }

    #[test]
    fn subpixel_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let lr = random(&mut rng, 3, 2, 3);
        let hr = crate::image::nearest_upsample(&lr, 4);
        assert!(subpixel(&hr, &lr, 4).unwrap().value.abs() < 1e-15);

        let block = ImageBuffer::from_vec(2, 2, 1, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let lr = ImageBuffer::filled(1, 1, 1, 0.5);
        assert_eq!(subpixel(&block, &lr, 2).unwrap().value, 0.0);

        // block-mean oracle
        let hr = random(&mut rng, 6, 4, 3);
        let lr = random(&mut rng, 3, 2, 3);
        let mut expected = 0.0;
        for y in 0..2 {
            for x in 0..3 {
                for c in 0..3 {
                    let m = (hr.get(2 * x, 2 * y, c)
                        + hr.get(2 * x + 1, 2 * y, c)
                        + hr.get(2 * x, 2 * y + 1, c)
                        + hr.get(2 * x + 1, 2 * y + 1, c))
                        / 4.0;
                    expected += (m - lr.get(x, y, c)).abs();
                }
            }
        }
        assert!((subpixel(&hr, &lr, 2).unwrap().value - expected / 18.0).abs() < 1e-15);
        assert!(subpixel(&hr, &lr, 3).is_err());
    }

    #[test]
    fn pearson_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = random(&mut rng, 8, 8, 1);
        let mask = vec![true; 64];
        let affine = r.map(|v| 3.0 * v + 2.0);
        assert!(pearson_depth(&r, &affine, &mask).unwrap().value.abs() < 1e-12);
        let neg = r.map(|v| -v);
        assert!((pearson_depth(&r, &neg, &mask).unwrap().value - 2.0).abs() < 1e-12);

        let p = random(&mut rng, 8, 8, 1);
        let n = 64.0;
        let mr = r.data().iter().sum::<f64>() / n;
        let mp = p.data().iter().sum::<f64>() / n;
        let cov: f64 = r.data().iter().zip(p.data()).map(|(a, b)| (a - mr) * (b - mp)).sum::<f64>() / n;
        let sr = (r.data().iter().map(|a| (a - mr).powi(2)).sum::<f64>() / n).sqrt();
        let sp = (p.data().iter().map(|b| (b - mp).powi(2)).sum::<f64>() / n).sqrt();
        let rho = cov / (sr * sp);
        assert!((pearson_depth(&r, &p, &mask).unwrap().value - (1.0 - rho)).abs() < 1e-12);
    }

    #[test]
    fn pearson_degenerate_is_skipped() {
        let flat = ImageBuffer::filled(4, 4, 1, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = random(&mut rng, 4, 4, 1);
        let out = pearson_depth(&flat, &p, &[true; 16]).unwrap();
        assert!(out.degenerate);
        assert_eq!(out.value, 0.0);
        assert!(out.grad.data().iter().all(|&g| g == 0.0));
        let mut mask = [false; 16];
        mask[3] = true;
        assert!(pearson_depth(&p, &p, &mask).unwrap().degenerate);
    }

    #[test]
    fn pearson_respects_mask_and_patches() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let r = random(&mut rng, 8, 8, 1);
        let mut p = r.map(|v| 0.5 * v + 1.0);
        let mask: Vec<bool> = (0..64).map(|i| i % 3 != 0).collect();
        for i in (0..64).step_by(3) {
            p.data_mut()[i] = rng.random_range(-5.0..5.0);
        }
        assert!(pearson_depth(&r, &p, &mask).unwrap().value.abs() < 1e-12);
        let patched = pearson_depth_patched(&r, &p, &mask, 4).unwrap();
        assert!(patched.value.abs() < 1e-12);
    }

    #[test]
    fn total_stage2_is_the_sum_of_terms() {
        assert_eq!(loss_total_stage2(&Stage2Terms::default()), 0.0);
        let t = Stage2Terms {
            sr: 0.12,
            tv: 0.03,
            subpixel: 0.05,
            tv_weight: 1.0,
            subpixel_weight: 1.0,
        };
        assert_eq!(loss_total_stage2(&t), 0.03 + 0.05 + 0.12);
    }

    proptest::proptest! {
        #[test]
        fn pearson_invariant_to_positive_rescaling(scale in 1e-3f64..1e3, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = random(&mut rng, 6, 6, 1);
            let p = random(&mut rng, 6, 6, 1);
            let mask = vec![true; 36];
            let a = pearson_depth(&r, &p, &mask).unwrap().value;
            let b = pearson_depth(&r, &p.map(|v| v * scale), &mask).unwrap().value;
            proptest::prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn losses_are_nonnegative(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random(&mut rng, 8, 8, 3);
            let b = random(&mut rng, 8, 8, 3);
            proptest::prop_assert!(l1(&a, &b).unwrap().value >= 0.0);
            proptest::prop_assert!(d_ssim(&a, &b).unwrap().value >= 0.0);
            proptest::prop_assert!(tv(&a).unwrap().value >= 0.0);
        }
    }
}
