//! Raw compute kernels shared by graph forward and backward passes.
//!
//! Convolutions use the machine-learning convention (cross-correlation,
//! no kernel flip) with zero padding. Layout is channel-major (C, H, W);
//! weights are (Co, Ci, K, K) for `conv2d` and (Ci, Co, K, K) for
//! `conv_transpose2d`. All loops are sequential with a fixed traversal
//! order, so results are bitwise reproducible.

use crate::tensor::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    /// Extra rows/cols appended to transposed-convolution output.
    pub out_pad: usize,
}

impl ConvGeom {
    pub fn conv_out_hw(&self) -> (usize, usize) {
        let oh = (self.in_h + 2 * self.pad - self.k) / self.stride + 1;
        let ow = (self.in_w + 2 * self.pad - self.k) / self.stride + 1;
        (oh, ow)
    }

    pub fn conv_t_out_hw(&self) -> (usize, usize) {
        let oh = (self.in_h - 1) * self.stride + self.k + self.out_pad - 2 * self.pad;
        let ow = (self.in_w - 1) * self.stride + self.k + self.out_pad - 2 * self.pad;
        (oh, ow)
    }
}

#[inline]
fn at(c: usize, y: usize, x: usize, h: usize, w: usize) -> usize {
    (c * h + y) * w + x
}

pub fn conv2d<S: Scalar>(x: &[S], w: &[S], b: &[S], g: &ConvGeom) -> Vec<S> {
    let (oh, ow) = g.conv_out_hw();
    let mut out = vec![S::zero(); g.out_c * oh * ow];
    for co in 0..g.out_c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = b[co];
                for ci in 0..g.in_c {
                    for ky in 0..g.k {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.in_h as isize {
                            continue;
                        }
                        for kx in 0..g.k {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix < 0 || ix >= g.in_w as isize {
                                continue;
                            }
                            let wv = w[((co * g.in_c + ci) * g.k + ky) * g.k + kx];
                            acc = acc + wv * x[at(ci, iy as usize, ix as usize, g.in_h, g.in_w)];
                        }
                    }
                }
                out[at(co, oy, ox, oh, ow)] = acc;
            }
        }
    }
    out
}

/// Gradient of `conv2d` with respect to its input.
pub fn conv2d_grad_x<S: Scalar>(dy: &[S], w: &[S], g: &ConvGeom) -> Vec<S> {
    let (oh, ow) = g.conv_out_hw();
    let mut dx = vec![S::zero(); g.in_c * g.in_h * g.in_w];
    for co in 0..g.out_c {
        for oy in 0..oh {
            for ox in 0..ow {
                let grad = dy[at(co, oy, ox, oh, ow)];
                for ci in 0..g.in_c {
                    for ky in 0..g.k {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.in_h as isize {
                            continue;
                        }
                        for kx in 0..g.k {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix < 0 || ix >= g.in_w as isize {
                                continue;
                            }
                            let wv = w[((co * g.in_c + ci) * g.k + ky) * g.k + kx];
                            dx[at(ci, iy as usize, ix as usize, g.in_h, g.in_w)] =
                                dx[at(ci, iy as usize, ix as usize, g.in_h, g.in_w)] + wv * grad;
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Gradient of `conv2d` with respect to its weights.
pub fn conv2d_grad_w<S: Scalar>(x: &[S], dy: &[S], g: &ConvGeom) -> Vec<S> {
    let (oh, ow) = g.conv_out_hw();
    let mut dw = vec![S::zero(); g.out_c * g.in_c * g.k * g.k];
    for co in 0..g.out_c {
        for oy in 0..oh {
            for ox in 0..ow {
                let grad = dy[at(co, oy, ox, oh, ow)];
                for ci in 0..g.in_c {
                    for ky in 0..g.k {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.in_h as isize {
                            continue;
                        }
                        for kx in 0..g.k {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix < 0 || ix >= g.in_w as isize {
                                continue;
                            }
                            let wi = ((co * g.in_c + ci) * g.k + ky) * g.k + kx;
                            dw[wi] = dw[wi]
                                + grad * x[at(ci, iy as usize, ix as usize, g.in_h, g.in_w)];
                        }
                    }
                }
            }
        }
    }
    dw
}

/// Per-output-channel sum of the upstream gradient (bias gradient).
pub fn grad_bias<S: Scalar>(dy: &[S], out_c: usize) -> Vec<S> {
    let per = dy.len() / out_c;
    (0..out_c)
        .map(|co| dy[co * per..(co + 1) * per].iter().fold(S::zero(), |a, &v| a + v))
        .collect()
}

/// Transposed convolution (adjoint of `conv2d` as a linear map in x).
pub fn conv_transpose2d<S: Scalar>(x: &[S], w: &[S], b: &[S], g: &ConvGeom) -> Vec<S> {
    let (oh, ow) = g.conv_t_out_hw();
    let mut out = vec![S::zero(); g.out_c * oh * ow];
    for co in 0..g.out_c {
        let base = co * oh * ow;
        for v in &mut out[base..base + oh * ow] {
            *v = b[co];
        }
    }
    for ci in 0..g.in_c {
        for iy in 0..g.in_h {
            for ix in 0..g.in_w {
                let xv = x[at(ci, iy, ix, g.in_h, g.in_w)];
                for co in 0..g.out_c {
                    for ky in 0..g.k {
                        let oy = (iy * g.stride + ky) as isize - g.pad as isize;
                        if oy < 0 || oy >= oh as isize {
                            continue;
                        }
                        for kx in 0..g.k {
                            let ox = (ix * g.stride + kx) as isize - g.pad as isize;
                            if ox < 0 || ox >= ow as isize {
                                continue;
                            }
                            let wv = w[((ci * g.out_c + co) * g.k + ky) * g.k + kx];
                            out[at(co, oy as usize, ox as usize, oh, ow)] =
                                out[at(co, oy as usize, ox as usize, oh, ow)] + wv * xv;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradient of `conv_transpose2d` with respect to its input.
pub fn conv_transpose2d_grad_x<S: Scalar>(dy: &[S], w: &[S], g: &ConvGeom) -> Vec<S> {
    let (oh, ow) = g.conv_t_out_hw();
    let mut dx = vec![S::zero(); g.in_c * g.in_h * g.in_w];
    for ci in 0..g.in_c {
        for iy in 0..g.in_h {
            for ix in 0..g.in_w {
                let mut acc = S::zero();
                for co in 0..g.out_c {
                    for ky in 0..g.k {
                        let oy = (iy * g.stride + ky) as isize - g.pad as isize;
                        if oy < 0 || oy >= oh as isize {
                            continue;
                        }
                        for kx in 0..g.k {
                            let ox = (ix * g.stride + kx) as isize - g.pad as isize;
                            if ox < 0 || ox >= ow as isize {
                                continue;
                            }
                            let wv = w[((ci * g.out_c + co) * g.k + ky) * g.k + kx];
                            acc = acc + wv * dy[at(co, oy as usize, ox as usize, oh, ow)];
                        }
                    }
                }
                dx[at(ci, iy, ix, g.in_h, g.in_w)] = acc;
            }
        }
    }
    dx
}

/// Gradient of `conv_transpose2d` with respect to its weights.
pub fn conv_transpose2d_grad_w<S: Scalar>(x: &[S], dy: &[S], g: &ConvGeom) -> Vec<S> {
    let (oh, ow) = g.conv_t_out_hw();
    let mut dw = vec![S::zero(); g.in_c * g.out_c * g.k * g.k];
    for ci in 0..g.in_c {
        for iy in 0..g.in_h {
            for ix in 0..g.in_w {
                let xv = x[at(ci, iy, ix, g.in_h, g.in_w)];
                for co in 0..g.out_c {
                    for ky in 0..g.k {
                        let oy = (iy * g.stride + ky) as isize - g.pad as isize;
                        if oy < 0 || oy >= oh as isize {
                            continue;
                        }
                        for kx in 0..g.k {
                            let ox = (ix * g.stride + kx) as isize - g.pad as isize;
                            if ox < 0 || ox >= ow as isize {
                                continue;
                            }
                            let wi = ((ci * g.out_c + co) * g.k + ky) * g.k + kx;
                            dw[wi] = dw[wi] + xv * dy[at(co, oy as usize, ox as usize, oh, ow)];
                        }
                    }
                }
            }
        }
    }
    dw
}

/// (M,K) x (K,N) matrix product.
pub fn matmul<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut out = vec![S::zero(); m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == S::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] = orow[j] + av * brow[j];
            }
        }
    }
    out
}

/// Transpose of a (rows, cols) row-major matrix.
pub fn transpose<S: Scalar>(a: &[S], rows: usize, cols: usize) -> Vec<S> {
    let mut out = vec![S::zero(); a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(in_c: usize, hw: usize, out_c: usize, k: usize, stride: usize, pad: usize) -> ConvGeom {
        ConvGeom { in_c, in_h: hw, in_w: hw, out_c, k, stride, pad, out_pad: 0 }
    }

    #[test]
    fn identity_kernel_passes_input_through() {
        let g = geom(1, 4, 1, 1, 1, 0);
        let x: Vec<f64> = (0..16).map(|v| v as f64).collect();
        let y = conv2d(&x, &[1.0], &[0.0], &g);
        assert_eq!(x, y);
    }

    #[test]
    fn stride_two_halves_spatial_dims() {
        let g = geom(2, 8, 3, 5, 2, 2);
        assert_eq!(g.conv_out_hw(), (4, 4));
        let gt = ConvGeom { out_pad: 1, ..geom(3, 4, 2, 5, 2, 2) };
        assert_eq!(gt.conv_t_out_hw(), (8, 8));
    }

    #[test]
    fn conv_transpose_of_delta_reproduces_kernel() {
        // A unit impulse through the adjoint should stamp the kernel itself.
        let g = ConvGeom { in_c: 1, in_h: 3, in_w: 3, out_c: 1, k: 3, stride: 1, pad: 1, out_pad: 0 };
        let mut x = vec![0.0f64; 9];
        x[4] = 1.0; // center
        let w: Vec<f64> = (1..=9).map(|v| v as f64).collect();
        let y = conv_transpose2d(&x, &w, &[0.0], &g);
        assert_eq!(y, w, "delta through transposed conv must reproduce kernel");
    }

    #[test]
    fn conv_and_transpose_are_adjoint() {
        // <conv(x), y> == <x, conv_t(y)> for matching geometry and shared weights.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let g = geom(2, 6, 3, 5, 2, 2);
        let (oh, ow) = g.conv_out_hw();
        let x: Vec<f64> = (0..g.in_c * 36).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..g.out_c * g.in_c * 25).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..g.out_c * oh * ow).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cx = conv2d(&x, &w, &vec![0.0; g.out_c], &g);
        let lhs: f64 = cx.iter().zip(&y).map(|(a, b)| a * b).sum();
        // conv2d_grad_x computes the adjoint applied to y.
        let cty = conv2d_grad_x(&y, &w, &g);
        let rhs: f64 = cty.iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10, "adjoint identity violated: {lhs} vs {rhs}");
    }

    #[test]
    fn matmul_small_oracle() {
        // [[1,2,3],[4,5,6]] x [[7,8],[9,10],[11,12]] = [[58,64],[139,154]]
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0];
        let c = matmul::<f64>(&a, &b, 2, 3, 2);
        assert_eq!(c, vec![58.0, 64.0, 139.0, 154.0]);
    }
}
