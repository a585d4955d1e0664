use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{relu, relu_backward, BlurKernelField, Conv3x3, Tensor};
use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::math;

/// Hidden channel width of both heads.
pub const WIDTH: usize = 16;

/// Blur kernel side for a super-resolution factor: `factor + 1`, rounded up to odd.
pub fn kernel_size_for_factor(factor: usize) -> usize {
    let k = factor + 1;
    if k % 2 == 0 {
        k + 1
    } else {
        k
    }
}

/// Intermediate activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct NetCache {
    acts: Vec<Tensor>,
}

struct Layout {
    layers: Vec<(Conv3x3, usize)>,
    len: usize,
}

impl Layout {
    fn new(convs: &[Conv3x3]) -> Self {
        let mut off = 0;
        let layers = convs
            .iter()
            .map(|c| {
                let o = off;
                off += c.param_len();
                (*c, o)
            })
            .collect();
        Layout { layers, len: off }
    }

    fn slice<'a>(&self, p: &'a [f64], i: usize) -> &'a [f64] {
        let (c, o) = self.layers[i];
        &p[o..o + c.param_len()]
    }

    fn slice_mut<'a>(&self, p: &'a mut [f64], i: usize) -> &'a mut [f64] {
        let (c, o) = self.layers[i];
        &mut p[o..o + c.param_len()]
    }
}

fn he_init(layout: &Layout, rng: &mut ChaCha8Rng, params: &mut [f64]) {
    for i in 0..layout.layers.len() {
        let (c, _) = layout.layers[i];
        let std = math::sqrt(2.0 / (9 * c.cin) as f64);
        let p = layout.slice_mut(params, i);
        for w in p[..c.weight_len()].iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *w = std * z;
        }
    }
}

fn check_rgb(img: &ImageBuffer, context: &'static str) -> Result<()> {
    if img.channels() != 3 {
        return Err(Error::dims(context, 3, img.channels()));
    }
    Ok(())
}

fn add(a: &Tensor, b: &Tensor) -> Tensor {
    let mut out = a.clone();
    for (x, y) in out.data.iter_mut().zip(&b.data) {
        *x += y;
    }
    out
}

/// Residual head `I + IM(I)`: an input conv, two residual blocks
/// (conv, ReLU, conv, skip) and an output conv that starts at zero.
#[derive(Clone, Debug, PartialEq)]
pub struct InconsistencyModel {
    pub params: Vec<f64>,
}

fn im_layout() -> Layout {
    Layout::new(&[
        Conv3x3::new(3, WIDTH),
        Conv3x3::new(WIDTH, WIDTH),
        Conv3x3::new(WIDTH, WIDTH),
        Conv3x3::new(WIDTH, WIDTH),
        Conv3x3::new(WIDTH, WIDTH),
        Conv3x3::new(WIDTH, 3),
    ])
}

impl InconsistencyModel {
    pub fn param_len() -> usize {
        im_layout().len
    }

    /// He-initialized hidden layers and a zero output layer, so the head
    /// starts as the identity map.
    pub fn new(seed: u64) -> Self {
        let layout = im_layout();
        let mut params = vec![0.0; layout.len];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        he_init(&layout, &mut rng, &mut params);
        let out = layout.slice_mut(&mut params, 5);
        out.iter_mut().for_each(|v| *v = 0.0);
        InconsistencyModel { params }
    }

    pub fn from_params(params: Vec<f64>) -> Result<Self> {
        if params.len() != Self::param_len() {
            return Err(Error::dims("InconsistencyModel params", Self::param_len(), params.len()));
        }
        Ok(InconsistencyModel { params })
    }

    pub fn forward(&self, img: &ImageBuffer) -> Result<(ImageBuffer, NetCache)> {
        check_rgb(img, "InconsistencyModel::forward")?;
        let l = im_layout();
        let p = &self.params;
        let x = Tensor::from_image(img);
        let h0 = l.layers[0].0.forward(l.slice(p, 0), &x);
        let a1 = l.layers[1].0.forward(l.slice(p, 1), &h0);
        let r1 = relu(&a1);
        let h1 = add(&h0, &l.layers[2].0.forward(l.slice(p, 2), &r1));
        let a2 = l.layers[3].0.forward(l.slice(p, 3), &h1);
        let r2 = relu(&a2);
        let h2 = add(&h1, &l.layers[4].0.forward(l.slice(p, 4), &r2));
        let res = l.layers[5].0.forward(l.slice(p, 5), &h2);
        let y = add(&x, &res);
        Ok((y.to_image(), NetCache {
            acts: vec![x, h0, a1, r1, h1, a2, r2, h2],
        }))
    }

    /// Accumulates `∂L/∂params` into `dp`; returns `∂L/∂input`.
    pub fn backward(&self, cache: &NetCache, grad_out: &ImageBuffer, dp: &mut [f64]) -> Result<ImageBuffer> {
        if dp.len() != self.params.len() {
            return Err(Error::dims("InconsistencyModel::backward", self.params.len(), dp.len()));
        }
        let [x, h0, a1, r1, h1, a2, r2, h2] = match cache.acts.as_slice() {
            [a, b, c, d, e, f, g, h] => [a, b, c, d, e, f, g, h],
            _ => return Err(Error::invalid("cache does not belong to an InconsistencyModel")),
        };
        let l = im_layout();
        let p = &self.params;
        let gy = Tensor::from_image(grad_out);
        gy.check_shape(3, "InconsistencyModel::backward")?;
        let mut g_h2 = l.layers[5].0.backward(l.slice(p, 5), h2, &gy, l.slice_mut(dp, 5));
        let mut g_r2 = l.layers[4].0.backward(l.slice(p, 4), r2, &g_h2, l.slice_mut(dp, 4));
        relu_backward(a2, &mut g_r2);
        let g = l.layers[3].0.backward(l.slice(p, 3), h1, &g_r2, l.slice_mut(dp, 3));
        g_h2 = add(&g_h2, &g);
        let g_h1 = g_h2;
        let mut g_r1 = l.layers[2].0.backward(l.slice(p, 2), r1, &g_h1, l.slice_mut(dp, 2));
        relu_backward(a1, &mut g_r1);
        let g = l.layers[1].0.backward(l.slice(p, 1), h0, &g_r1, l.slice_mut(dp, 1));
        let g_h0 = add(&g_h1, &g);
        let gx = l.layers[0].0.backward(l.slice(p, 0), x, &g_h0, l.slice_mut(dp, 0));
        Ok(add(&gy, &gx).to_image())
    }
}

/// Four-layer head predicting softmax-normalized per-pixel blur kernels.
#[derive(Clone, Debug, PartialEq)]
pub struct BlurProposal {
    pub kernel_size: usize,
    pub params: Vec<f64>,
}

fn bp_layout(k: usize) -> Layout {
    Layout::new(&[
        Conv3x3::new(3, WIDTH),
        Conv3x3::new(WIDTH, WIDTH),
        Conv3x3::new(WIDTH, WIDTH),
        Conv3x3::new(WIDTH, k * k),
    ])
}

/// Center logit that gives the center tap a softmax mass of 0.99 when all
/// other logits are zero.
fn center_bias(k: usize) -> f64 {
    let n = (k * k) as f64;
    math::ln(0.99 * (n - 1.0) / 0.01)
}

impl BlurProposal {
    pub fn param_len(kernel_size: usize) -> usize {
        bp_layout(kernel_size).len
    }

    /// He-initialized hidden layers; the output layer has zero weights and a
    /// bias concentrating each kernel on its center tap.
    pub fn new(kernel_size: usize, seed: u64) -> Result<Self> {
        if kernel_size % 2 == 0 || kernel_size == 0 {
            return Err(Error::invalid("blur kernel size must be odd"));
        }
        let layout = bp_layout(kernel_size);
        let mut params = vec![0.0; layout.len];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        he_init(&layout, &mut rng, &mut params);
        let (c, _) = layout.layers[3];
        let last = layout.slice_mut(&mut params, 3);
        last.iter_mut().for_each(|v| *v = 0.0);
        last[c.weight_len() + (kernel_size * kernel_size) / 2] = center_bias(kernel_size);
        Ok(BlurProposal { kernel_size, params })
    }

    pub fn from_params(kernel_size: usize, params: Vec<f64>) -> Result<Self> {
        if kernel_size % 2 == 0 || params.len() != Self::param_len(kernel_size) {
            return Err(Error::dims("BlurProposal params", Self::param_len(kernel_size), params.len()));
        }
        Ok(BlurProposal { kernel_size, params })
    }

    pub fn forward(&self, img: &ImageBuffer) -> Result<(BlurKernelField, NetCache)> {
        check_rgb(img, "BlurProposal::forward")?;
        let l = bp_layout(self.kernel_size);
        let p = &self.params;
        let x = Tensor::from_image(img);
        let a1 = l.layers[0].0.forward(l.slice(p, 0), &x);
        let r1 = relu(&a1);
        let a2 = l.layers[1].0.forward(l.slice(p, 1), &r1);
        let r2 = relu(&a2);
        let a3 = l.layers[2].0.forward(l.slice(p, 2), &r2);
        let r3 = relu(&a3);
        let mut s = l.layers[3].0.forward(l.slice(p, 3), &r3);
        let n = s.plane_len();
        let kk = s.channels;
        for px in 0..n {
            let max = (0..kk).map(|j| s.data[j * n + px]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for j in 0..kk {
                let e = math::exp(s.data[j * n + px] - max);
                s.data[j * n + px] = e;
                total += e;
            }
            for j in 0..kk {
                s.data[j * n + px] /= total;
            }
        }
        let field = BlurKernelField::new(self.kernel_size, s.clone())?;
        Ok((field, NetCache {
            acts: vec![x, a1, r1, a2, r2, a3, r3, s],
        }))
    }

    /// Accumulates `∂L/∂params` into `dp` from the gradient of the kernels.
    /// The input is treated as a constant.
    pub fn backward(&self, cache: &NetCache, grad_kernels: &Tensor, dp: &mut [f64]) -> Result<()> {
        if dp.len() != self.params.len() {
            return Err(Error::dims("BlurProposal::backward", self.params.len(), dp.len()));
        }
        let [x, a1, r1, a2, r2, a3, r3, s] = match cache.acts.as_slice() {
            [a, b, c, d, e, f, g, h] => [a, b, c, d, e, f, g, h],
            _ => return Err(Error::invalid("cache does not belong to a BlurProposal")),
        };
        grad_kernels.check_shape(s.channels, "BlurProposal::backward")?;
        let n = s.plane_len();
        let kk = s.channels;
        let mut g = Tensor::zeros(kk, s.height, s.width);
        for px in 0..n {
            let dot: f64 = (0..kk).map(|j| s.data[j * n + px] * grad_kernels.data[j * n + px]).sum();
            for j in 0..kk {
                g.data[j * n + px] = s.data[j * n + px] * (grad_kernels.data[j * n + px] - dot);
            }
        }
        let l = bp_layout(self.kernel_size);
        let p = &self.params;
        let mut g3 = l.layers[3].0.backward(l.slice(p, 3), r3, &g, l.slice_mut(dp, 3));
        relu_backward(a3, &mut g3);
        let mut g2 = l.layers[2].0.backward(l.slice(p, 2), r2, &g3, l.slice_mut(dp, 2));
        relu_backward(a2, &mut g2);
        let mut g1 = l.layers[1].0.backward(l.slice(p, 1), r1, &g2, l.slice_mut(dp, 1));
        relu_backward(a1, &mut g1);
        l.layers[0].0.backward(l.slice(p, 0), x, &g1, l.slice_mut(dp, 0));
        Ok(())
    }
}
