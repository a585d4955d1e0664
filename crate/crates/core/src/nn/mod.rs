//! Small convolutional heads with hand-written adjoints.

mod blur;
mod conv;
mod heads;

pub use blur::{apply_blur, apply_blur_backward, BlurKernelField};
pub use conv::Conv3x3;
pub use heads::{kernel_size_for_factor, BlurProposal, InconsistencyModel, NetCache};

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image::ImageBuffer;

/// Planar `C×H×W` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Tensor {
            channels,
            height,
            width,
            data: alloc::vec![0.0; channels * height * width],
        }
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn from_image(img: &ImageBuffer) -> Self {
        let (w, h, ch) = (img.width(), img.height(), img.channels());
        let mut t = Tensor::zeros(ch, h, w);
        for (i, px) in img.data().chunks_exact(ch.max(1)).enumerate() {
            for (c, v) in px.iter().enumerate() {
                t.data[c * w * h + i] = *v;
            }
        }
        t
    }

    pub fn to_image(&self) -> ImageBuffer {
        let n = self.plane_len();
        let mut data = alloc::vec![0.0; self.data.len()];
        for c in 0..self.channels {
            for i in 0..n {
                data[i * self.channels + c] = self.data[c * n + i];
            }
        }
        ImageBuffer::from_vec(self.width, self.height, self.channels, data).expect("shape is consistent")
    }

    fn check_shape(&self, channels: usize, context: &'static str) -> Result<()> {
        if self.channels != channels {
            return Err(Error::dims(context, channels, self.channels));
        }
        Ok(())
    }
}

fn relu(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    out.data.iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

/// Zeroes `grad` wherever the pre-activation was not positive.
fn relu_backward(pre: &Tensor, grad: &mut Tensor) {
    for (g, p) in grad.data.iter_mut().zip(&pre.data) {
        if *p <= 0.0 {
            *g = 0.0;
        }
    }
}
