//! Finite-difference checks of the loss gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use srsplat_core::loss::{d_ssim, loss_sr, pearson_depth, pearson_depth_patched, subpixel, tv};
use srsplat_core::ImageBuffer;

const STEP: f64 = 1e-6;

fn random(rng: &mut ChaCha8Rng, w: usize, h: usize, c: usize) -> ImageBuffer {
    ImageBuffer::from_vec(w, h, c, (0..w * h * c).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
}

fn fd_check(x: &ImageBuffer, grad: &ImageBuffer, f: impl Fn(&ImageBuffer) -> f64, tol: f64) {
    for i in 0..x.len() {
        let mut p = x.clone();
        p.data_mut()[i] += STEP;
        let mut m = x.clone();
        m.data_mut()[i] -= STEP;
        let fd = (f(&p) - f(&m)) / (2.0 * STEP);
        let an = grad.data()[i];
        let scale = an.abs().max(fd.abs()).max(1e-6);
        assert!((an - fd).abs() / scale < tol, "index {i}: analytic {an:e} fd {fd:e}");
    }
}

#[test]
fn d_ssim_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = random(&mut rng, 13, 9, 3);
    let b = random(&mut rng, 13, 9, 3);
    let g = d_ssim(&a, &b).unwrap().grad;
    fd_check(&a, &g, |x| d_ssim(x, &b).unwrap().value, 1e-4);
}

#[test]
fn loss_sr_gradient_in_both_arguments() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let a = random(&mut rng, 10, 10, 3);
    let b = random(&mut rng, 10, 10, 3);
    let out = loss_sr(&a, &b, 0.2).unwrap();
    fd_check(&a, &out.grad_pred, |x| loss_sr(x, &b, 0.2).unwrap().value, 1e-4);
    fd_check(&b, &out.grad_target, |y| loss_sr(&a, y, 0.2).unwrap().value, 1e-4);
}

#[test]
fn tv_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let a = random(&mut rng, 7, 6, 3);
    fd_check(&a, &tv(&a).unwrap().grad, |x| tv(x).unwrap().value, 1e-4);
}

#[test]
fn subpixel_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let hr = random(&mut rng, 8, 12, 3);
    let lr = random(&mut rng, 2, 3, 3);
    let g = subpixel(&hr, &lr, 4).unwrap().grad;
    fd_check(&hr, &g, |x| subpixel(x, &lr, 4).unwrap().value, 1e-4);
}

#[test]
fn pearson_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let r = random(&mut rng, 9, 7, 1);
    let p = random(&mut rng, 9, 7, 1);
    let mask: Vec<bool> = (0..63).map(|i| i % 5 != 2).collect();
    let g = pearson_depth(&r, &p, &mask).unwrap().grad;
    fd_check(&r, &g, |x| pearson_depth(x, &p, &mask).unwrap().value, 1e-5);
    let g = pearson_depth_patched(&r, &p, &mask, 4).unwrap().grad;
    fd_check(&r, &g, |x| pearson_depth_patched(x, &p, &mask, 4).unwrap().value, 1e-5);
}
