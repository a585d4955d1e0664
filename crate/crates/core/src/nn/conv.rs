use alloc::vec::Vec;

use super::Tensor;
use crate::par;

/// 3×3 convolution, stride 1, zero padding of one pixel. Parameters live in
/// an external flat slice: `cout·cin·9` weights (`[o][i][ky][kx]`) then `cout` biases.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv3x3 {
    pub cin: usize,
    pub cout: usize,
}

/// Row window `[lo, hi)` of outputs whose shifted input `y + d` is in range.
#[inline]
fn valid(d: isize, n: usize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d).clamp(0, n as isize) as usize;
    (lo.min(hi), hi)
}

impl Conv3x3 {
    pub const fn new(cin: usize, cout: usize) -> Self {
        Conv3x3 { cin, cout }
    }

    pub const fn weight_len(&self) -> usize {
        self.cout * self.cin * 9
    }

    pub const fn param_len(&self) -> usize {
        self.weight_len() + self.cout
    }

    pub fn forward(&self, p: &[f64], x: &Tensor) -> Tensor {
        let (h, w) = (x.height, x.width);
        let (weights, bias) = p.split_at(self.weight_len());
        let planes: Vec<Vec<f64>> = par::map_indexed(self.cout, |o| {
            let mut out = alloc::vec![bias[o]; h * w];
            for i in 0..self.cin {
                let xi = x.plane(i);
                for ky in 0..3 {
                    let dy = ky as isize - 1;
                    let (ylo, yhi) = valid(dy, h);
                    for kx in 0..3 {
                        let dx = kx as isize - 1;
                        let wv = weights[((o * self.cin + i) * 3 + ky) * 3 + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let (xlo, xhi) = valid(dx, w);
                        for y in ylo..yhi {
                            let sy = (y as isize + dy) as usize;
                            let src = &xi[sy * w + (xlo as isize + dx) as usize..sy * w + (xhi as isize + dx) as usize];
                            let dst = &mut out[y * w + xlo..y * w + xhi];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += wv * s;
                            }
                        }
                    }
                }
            }
            out
        });
        let mut t = Tensor::zeros(self.cout, h, w);
        for (o, plane) in planes.into_iter().enumerate() {
            t.plane_mut(o).copy_from_slice(&plane);
        }
        t
    }

    /// Accumulates parameter gradients into `dp` and returns the input gradient.
    pub fn backward(&self, p: &[f64], x: &Tensor, dy: &Tensor, dp: &mut [f64]) -> Tensor {
        let (h, w) = (x.height, x.width);
        let weights = &p[..self.weight_len()];
        let per_out: Vec<Vec<f64>> = par::map_indexed(self.cout, |o| {
            let g = dy.plane(o);
            let mut dw = alloc::vec![0.0; self.cin * 9 + 1];
            dw[self.cin * 9] = g.iter().sum();
            for i in 0..self.cin {
                let xi = x.plane(i);
                for ky in 0..3 {
                    let dyo = ky as isize - 1;
                    let (ylo, yhi) = valid(dyo, h);
                    for kx in 0..3 {
                        let dxo = kx as isize - 1;
                        let (xlo, xhi) = valid(dxo, w);
                        let mut acc = 0.0;
                        for y in ylo..yhi {
                            let sy = (y as isize + dyo) as usize;
                            let src = &xi[sy * w + (xlo as isize + dxo) as usize..sy * w + (xhi as isize + dxo) as usize];
                            let gr = &g[y * w + xlo..y * w + xhi];
                            acc += gr.iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                        }
                        dw[(i * 3 + ky) * 3 + kx] = acc;
                    }
                }
            }
            dw
        });
        for (o, dw) in per_out.iter().enumerate() {
            let base = o * self.cin * 9;
            for k in 0..self.cin * 9 {
                dp[base + k] += dw[k];
            }
            dp[self.weight_len() + o] += dw[self.cin * 9];
        }
        let planes: Vec<Vec<f64>> = par::map_indexed(self.cin, |i| {
            let mut dx = alloc::vec![0.0; h * w];
            for o in 0..self.cout {
                let g = dy.plane(o);
                for ky in 0..3 {
                    let dyo = ky as isize - 1;
                    let (ylo, yhi) = valid(dyo, h);
                    for kx in 0..3 {
                        let dxo = kx as isize - 1;
                        let wv = weights[((o * self.cin + i) * 3 + ky) * 3 + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let (xlo, xhi) = valid(dxo, w);
                        for y in ylo..yhi {
                            let sy = (y as isize + dyo) as usize;
                            let dst = &mut dx[sy * w + (xlo as isize + dxo) as usize..sy * w + (xhi as isize + dxo) as usize];
                            let gr = &g[y * w + xlo..y * w + xhi];
                            for (d, s) in dst.iter_mut().zip(gr) {
                                *d += wv * s;
                            }
                        }
                    }
                }
            }
            dx
        });
        let mut t = Tensor::zeros(self.cin, h, w);
        for (i, plane) in planes.into_iter().enumerate() {
            t.plane_mut(i).copy_from_slice(&plane);
        }
        t
    }
}
