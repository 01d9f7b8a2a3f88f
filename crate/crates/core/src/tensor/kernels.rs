//! Raw slice kernels behind the graph ops. Layout is always NCHW, row-major.

use super::Scalar;

/// Geometry of a 2D convolution over one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel) / self.stride + 1
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }
}

/// Gathers every receptive-field patch of `x` (`[C, H, W]`) into the columns
/// of a `[C*k*k, Ho*Wo]` matrix.
pub fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let (ho, wo) = (g.out_height(), g.out_width());
    let hw_out = ho * wo;
    let (h, w, k, s, p) = (g.height, g.width, g.kernel, g.stride, g.padding as isize);
    debug_assert_eq!(cols.len(), g.patch_len() * hw_out);
    for c in 0..g.in_channels {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * hw_out..(row + 1) * hw_out];
                for oy in 0..ho {
                    let iy = (oy * s) as isize + ki as isize - p;
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * s) as isize + kj as isize - p;
                        *v = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds patch columns back into `dx`.
pub fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let (ho, wo) = (g.out_height(), g.out_width());
    let hw_out = ho * wo;
    let (h, w, k, s, p) = (g.height, g.width, g.kernel, g.stride, g.padding as isize);
    for c in 0..g.in_channels {
        let plane = &mut dx[c * h * w..(c + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * hw_out..(row + 1) * hw_out];
                for oy in 0..ho {
                    let iy = (oy * s) as isize + ki as isize - p;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * s) as isize + kj as isize - p;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] = dst[ix as usize] + src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Batched convolution forward. `x` is `[N, Cin, H, W]`, `kernel` is
/// `[Cout, Cin, k, k]`; returns `[N, Cout, Ho, Wo]`.
pub fn conv2d_forward<T: Scalar>(x: &[T], batch: usize, kernel: &[T], g: &ConvGeom) -> Vec<T> {
    let hw_in = g.in_channels * g.height * g.width;
    let hw_out = g.out_height() * g.out_width();
    let plen = g.patch_len();
    let mut out = vec![T::zero(); batch * g.out_channels * hw_out];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); plen * hw_out]
    };
    for n in 0..batch {
        let xn = &x[n * hw_in..(n + 1) * hw_in];
        let b: &[T] = if g.is_pointwise() {
            xn
        } else {
            im2col(xn, g, &mut cols);
            &cols
        };
        let on = &mut out[n * g.out_channels * hw_out..(n + 1) * g.out_channels * hw_out];
        T::gemm(
            g.out_channels,
            plen,
            hw_out,
            kernel,
            (plen as isize, 1),
            b,
            (hw_out as isize, 1),
            T::zero(),
            on,
            (hw_out as isize, 1),
        );
    }
    out
}

/// Batched convolution backward. Accumulates into `dx` and `dkernel` when
/// they are provided.
pub fn conv2d_backward<T: Scalar>(
    x: &[T],
    batch: usize,
    kernel: &[T],
    g: &ConvGeom,
    dout: &[T],
    mut dx: Option<&mut [T]>,
    mut dkernel: Option<&mut [T]>,
) {
    let hw_in = g.in_channels * g.height * g.width;
    let hw_out = g.out_height() * g.out_width();
    let plen = g.patch_len();
    let mut cols = vec![T::zero(); if g.is_pointwise() { 0 } else { plen * hw_out }];
    let mut dcols = vec![T::zero(); plen * hw_out];
    for n in 0..batch {
        let xn = &x[n * hw_in..(n + 1) * hw_in];
        let dn = &dout[n * g.out_channels * hw_out..(n + 1) * g.out_channels * hw_out];
        if let Some(dk) = dkernel.as_deref_mut() {
            let b: &[T] = if g.is_pointwise() {
                xn
            } else {
                im2col(xn, g, &mut cols);
                &cols
            };
            // dK[Cout, plen] += dout[Cout, hw] * cols^T[hw, plen]
            T::gemm(
                g.out_channels,
                hw_out,
                plen,
                dn,
                (hw_out as isize, 1),
                b,
                (1, hw_out as isize),
                T::one(),
                dk,
                (plen as isize, 1),
            );
        }
        if let Some(dxa) = dx.as_deref_mut() {
            let dxn = &mut dxa[n * hw_in..(n + 1) * hw_in];
            if g.is_pointwise() {
                // dx[Cin, hw] += K^T[Cin, Cout] * dout[Cout, hw]
                T::gemm(
                    plen,
                    g.out_channels,
                    hw_out,
                    kernel,
                    (1, plen as isize),
                    dn,
                    (hw_out as isize, 1),
                    T::one(),
                    dxn,
                    (hw_out as isize, 1),
                );
            } else {
                T::gemm(
                    plen,
                    g.out_channels,
                    hw_out,
                    kernel,
                    (1, plen as isize),
                    dn,
                    (hw_out as isize, 1),
                    T::zero(),
                    &mut dcols,
                    (hw_out as isize, 1),
                );
                col2im(&dcols, g, dxn);
            }
        }
    }
}

/// 2x2 max pooling with stride 2 over `planes` planes of `h x w`.
/// Returns pooled values and, per output, the flat input index of the max.
/// Ties go to the first element in row-major window order.
pub fn maxpool2_forward<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize) -> (Vec<T>, Vec<u32>) {
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(planes * ho * wo);
    let mut idx = Vec::with_capacity(planes * ho * wo);
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                out.push(x[best]);
                idx.push(best as u32);
            }
        }
    }
    (out, idx)
}

/// Nearest-neighbour 2x upsampling over `planes` planes of `h x w`.
pub fn upsample2_forward<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (ho, wo) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); planes * ho * wo];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
        for y in 0..ho {
            let srow = &src[(y / 2) * w..(y / 2 + 1) * w];
            let drow = &mut dst[y * wo..(y + 1) * wo];
            for (x2, v) in drow.iter_mut().enumerate() {
                *v = srow[x2 / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward<T: Scalar>(dout: &[T], planes: usize, h: usize, w: usize, dx: &mut [T]) {
    let (ho, wo) = (2 * h, 2 * w);
    for p in 0..planes {
        let src = &dout[p * ho * wo..(p + 1) * ho * wo];
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        for y in 0..ho {
            for x2 in 0..wo {
                let d = &mut dst[(y / 2) * w + x2 / 2];
                *d = *d + src[y * wo + x2];
            }
        }
    }
}

pub const INSTANCE_NORM_EPS: f64 = 1e-5;

/// Per-plane normalization followed by per-channel affine transform.
/// Returns `(y, x_hat, inv_std)`.
pub fn instance_norm_forward<T: Scalar>(
    x: &[T],
    batch: usize,
    channels: usize,
    plane: usize,
    gamma: &[T],
    beta: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let eps = T::lit(INSTANCE_NORM_EPS);
    let count = T::from_usize(plane).unwrap();
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut inv_std = Vec::with_capacity(batch * channels);
    for n in 0..batch {
        for c in 0..channels {
            let off = (n * channels + c) * plane;
            let xs = &x[off..off + plane];
            let mean = xs.iter().copied().sum::<T>() / count;
            let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / count;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            for i in 0..plane {
                let h = (xs[i] - mean) * is;
                xhat[off + i] = h;
                y[off + i] = gamma[c] * h + beta[c];
            }
        }
    }
    (y, xhat, inv_std)
}

#[allow(clippy::too_many_arguments)]
pub fn instance_norm_backward<T: Scalar>(
    dy: &[T],
    xhat: &[T],
    inv_std: &[T],
    batch: usize,
    channels: usize,
    plane: usize,
    gamma: &[T],
    dx: Option<&mut [T]>,
    dgamma: Option<&mut [T]>,
    dbeta: Option<&mut [T]>,
) {
    if let Some(dg) = dgamma {
        for n in 0..batch {
            for (c, g) in dg.iter_mut().enumerate() {
                let off = (n * channels + c) * plane;
                *g = *g
                    + (0..plane)
                        .map(|i| dy[off + i] * xhat[off + i])
                        .sum::<T>();
            }
        }
    }
    if let Some(db) = dbeta {
        for n in 0..batch {
            for (c, b) in db.iter_mut().enumerate() {
                let off = (n * channels + c) * plane;
                *b = *b + dy[off..off + plane].iter().copied().sum::<T>();
            }
        }
    }
    if let Some(dx) = dx {
        let count = T::from_usize(plane).unwrap();
        for n in 0..batch {
            for c in 0..channels {
                let off = (n * channels + c) * plane;
                let is = inv_std[n * channels + c];
                let mut sum_d = T::zero();
                let mut sum_dx = T::zero();
                for i in 0..plane {
                    let d = dy[off + i] * gamma[c];
                    sum_d = sum_d + d;
                    sum_dx = sum_dx + d * xhat[off + i];
                }
                for i in 0..plane {
                    let d = dy[off + i] * gamma[c];
                    let v = (count * d - sum_d - xhat[off + i] * sum_dx) * is / count;
                    dx[off + i] = dx[off + i] + v;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f64], batch: usize, kernel: &[f64], g: &ConvGeom) -> Vec<f64> {
        let (ho, wo) = (g.out_height(), g.out_width());
        let mut out = vec![0.0; batch * g.out_channels * ho * wo];
        for n in 0..batch {
            for co in 0..g.out_channels {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for ci in 0..g.in_channels {
                            for ki in 0..g.kernel {
                                for kj in 0..g.kernel {
                                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                                    let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                                    if iy < 0 || ix < 0 || iy >= g.height as isize || ix >= g.width as isize {
                                        continue;
                                    }
                                    acc += x[((n * g.in_channels + ci) * g.height + iy as usize) * g.width + ix as usize]
                                        * kernel[((co * g.in_channels + ci) * g.kernel + ki) * g.kernel + kj];
                                }
                            }
                        }
                        out[((n * g.out_channels + co) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn strided_padded_conv_matches_loops() {
        let g = ConvGeom {
            in_channels: 2,
            out_channels: 3,
            height: 7,
            width: 6,
            kernel: 3,
            stride: 2,
            padding: 1,
        };
        let x: Vec<f64> = (0..2 * 2 * 7 * 6).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
        let k: Vec<f64> = (0..3 * 2 * 9).map(|i| ((i * 13 % 7) as f64) * 0.25 - 0.5).collect();
        let fast = conv2d_forward(&x, 2, &k, &g);
        let slow = naive_conv(&x, 2, &k, &g);
        assert_eq!(fast.len(), slow.len());
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)>
        let g = ConvGeom {
            in_channels: 2,
            out_channels: 1,
            height: 5,
            width: 4,
            kernel: 3,
            stride: 1,
            padding: 1,
        };
        let x: Vec<f64> = (0..40).map(|i| (i as f64 * 0.7).cos()).collect();
        let plen = 18;
        let hw = g.out_height() * g.out_width();
        let c: Vec<f64> = (0..plen * hw).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut cols = vec![0.0; plen * hw];
        im2col(&x, &g, &mut cols);
        let mut back = vec![0.0; 40];
        col2im(&c, &g, &mut back);
        let lhs: f64 = cols.iter().zip(&c).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
