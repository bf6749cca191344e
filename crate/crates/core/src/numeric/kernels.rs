//! Raw kernels on flat row-major buffers. Shape validation happens in the
//! graph layer; everything here trusts its dimensions.

/// `C[m×n] = A[m×k] · B[k×n]`
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in row.iter_mut().zip(brow) {
                *cv += aip * bv;
            }
        }
    }
    c
}

/// `C[m×n] = Aᵀ · B` with `A` stored as `k×m` and `B` as `k×n`.
pub fn matmul_tn(a: &[f64], b: &[f64], k: usize, m: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &aval) in arow.iter().enumerate() {
            if aval == 0.0 {
                continue;
            }
            let row = &mut c[i * n..(i + 1) * n];
            for (cv, bv) in row.iter_mut().zip(brow) {
                *cv += aval * bv;
            }
        }
    }
    c
}

/// `C[m×k] = A · Bᵀ` with `A` stored as `m×n` and `B` as `k×n`.
pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * k];
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for j in 0..k {
            let brow = &b[j * n..(j + 1) * n];
            c[i * k + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn out_h(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel_h) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel_w) / self.stride + 1
    }

    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    fn is_pointwise(&self) -> bool {
        self.kernel_h == 1 && self.kernel_w == 1 && self.stride == 1 && self.pad == 0
    }

    /// Source pixel for output `(oy, ox)` and kernel tap `(ki, kj)`, if inside the image.
    #[inline]
    fn source(&self, oy: usize, ox: usize, ki: usize, kj: usize) -> Option<(usize, usize)> {
        let y = (oy * self.stride + ki).checked_sub(self.pad)?;
        let x = (ox * self.stride + kj).checked_sub(self.pad)?;
        (y < self.height && x < self.width).then_some((y, x))
    }
}

/// Unfolds `x` into a `[C·kh·kw, Ho·Wo]` patch matrix with zero padding.
pub fn im2col(x: &[f64], g: &ConvGeometry) -> Vec<f64> {
    if g.is_pointwise() {
        return x.to_vec();
    }
    let (oh, ow) = (g.out_h(), g.out_w());
    let cols = oh * ow;
    let mut out = vec![0.0; g.patch_len() * cols];
    for c in 0..g.in_channels {
        let plane = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let row = (c * g.kernel_h + ki) * g.kernel_w + kj;
                let dst = &mut out[row * cols..(row + 1) * cols];
                for oy in 0..oh {
                    for ox in 0..ow {
                        if let Some((y, xx)) = g.source(oy, ox, ki, kj) {
                            dst[oy * ow + ox] = plane[y * g.width + xx];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: scatter-adds patch gradients back onto the image.
pub fn col2im(cols_grad: &[f64], g: &ConvGeometry) -> Vec<f64> {
    if g.is_pointwise() {
        return cols_grad.to_vec();
    }
    let (oh, ow) = (g.out_h(), g.out_w());
    let cols = oh * ow;
    let mut out = vec![0.0; g.in_channels * g.height * g.width];
    for c in 0..g.in_channels {
        let plane = &mut out[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let row = (c * g.kernel_h + ki) * g.kernel_w + kj;
                let src = &cols_grad[row * cols..(row + 1) * cols];
                for oy in 0..oh {
                    for ox in 0..ow {
                        if let Some((y, xx)) = g.source(oy, ox, ki, kj) {
                            plane[y * g.width + xx] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Linear interpolation taps for doubling an axis of length `len`:
/// output `i` reads `(lo, hi, w_hi)` at source coordinate `(i + 0.5)/2 - 0.5`,
/// clamped to `[0, len - 1]`.
pub fn upsample_taps(len: usize) -> Vec<(usize, usize, f64)> {
    let last = (len - 1) as f64;
    (0..2 * len)
        .map(|i| {
            let src = ((i as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, last);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(len - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

pub fn upsample2x(x: &[f64], channels: usize, h: usize, w: usize) -> Vec<f64> {
    let rows = upsample_taps(h);
    let cols = upsample_taps(w);
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0; channels * oh * ow];
    for c in 0..channels {
        let src = &x[c * h * w..(c + 1) * h * w];
        let dst = &mut out[c * oh * ow..(c + 1) * oh * ow];
        for (i, &(r0, r1, wr)) in rows.iter().enumerate() {
            for (j, &(c0, c1, wc)) in cols.iter().enumerate() {
                let top = src[r0 * w + c0] * (1.0 - wc) + src[r0 * w + c1] * wc;
                let bottom = src[r1 * w + c0] * (1.0 - wc) + src[r1 * w + c1] * wc;
                dst[i * ow + j] = top * (1.0 - wr) + bottom * wr;
            }
        }
    }
    out
}

pub fn upsample2x_backward(gy: &[f64], channels: usize, h: usize, w: usize) -> Vec<f64> {
    let rows = upsample_taps(h);
    let cols = upsample_taps(w);
    let (oh, ow) = (2 * h, 2 * w);
    let mut gx = vec![0.0; channels * h * w];
    for c in 0..channels {
        let src = &gy[c * oh * ow..(c + 1) * oh * ow];
        let dst = &mut gx[c * h * w..(c + 1) * h * w];
        for (i, &(r0, r1, wr)) in rows.iter().enumerate() {
            for (j, &(c0, c1, wc)) in cols.iter().enumerate() {
                let g = src[i * ow + j];
                dst[r0 * w + c0] += g * (1.0 - wr) * (1.0 - wc);
                dst[r0 * w + c1] += g * (1.0 - wr) * wc;
                dst[r1 * w + c0] += g * wr * (1.0 - wc);
                dst[r1 * w + c1] += g * wr * wc;
            }
        }
    }
    gx
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}
