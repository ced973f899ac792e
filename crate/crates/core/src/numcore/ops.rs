//! Forward kernels and their local gradient rules.
//!
//! Convolution is cross-correlation (the kernel is not flipped), lowered to
//! im2col followed by a single-precision GEMM per batch element.

use crate::error::{Error, Result};

use super::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub h: usize,
    pub w: usize,
    pub out_ch: usize,
    pub k: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(input: &Tensor, kernel: &Tensor, pad: usize) -> Result<Self> {
        let [batch, in_ch, h, w] = input.dims4()?;
        let [out_ch, kc, kh, kw] = kernel.dims4()?;
        if kc != in_ch {
            return Err(Error::shape(format!(
                "conv2d channel mismatch: input has {in_ch}, kernel expects {kc}"
            )));
        }
        if kh != kw {
            return Err(Error::shape(format!("conv2d kernel must be square, got {kh}x{kw}")));
        }
        if kh > h + 2 * pad || kw > w + 2 * pad {
            return Err(Error::shape(format!(
                "conv2d kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * pad,
                w + 2 * pad
            )));
        }
        Ok(ConvGeom {
            batch,
            in_ch,
            h,
            w,
            out_ch,
            k: kh,
            pad,
            out_h: h + 2 * pad - kh + 1,
            out_w: w + 2 * pad - kw + 1,
        })
    }

    fn patch(&self) -> usize {
        self.in_ch * self.k * self.k
    }

    fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Lower one image `[C,H,W]` to a `[C*k*k, H'*W']` column matrix.
fn im2col(g: &ConvGeom, img: &[f32], cols: &mut [f32]) {
    let plane = g.out_plane();
    for c in 0..g.in_ch {
        let src = &img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                // Output columns whose source x = ox + kx - pad lands inside the image.
                let ox_lo = g.pad.saturating_sub(kx);
                let ox_hi = (g.w + g.pad).saturating_sub(kx).min(g.out_w);
                for oy in 0..g.out_h {
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    let iy = oy + ky;
                    if iy < g.pad || iy - g.pad >= g.h || ox_lo >= ox_hi {
                        line.fill(0.0);
                        continue;
                    }
                    let iy = iy - g.pad;
                    line[..ox_lo].fill(0.0);
                    line[ox_hi..].fill(0.0);
                    let ix0 = ox_lo + kx - g.pad;
                    line[ox_lo..ox_hi]
                        .copy_from_slice(&src[iy * g.w + ix0..iy * g.w + ix0 + (ox_hi - ox_lo)]);
                }
            }
        }
    }
}

/// Scatter-add a column matrix back onto an image gradient.
fn col2im(g: &ConvGeom, cols: &[f32], img: &mut [f32]) {
    let plane = g.out_plane();
    for c in 0..g.in_ch {
        let dst = &mut img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                let ox_lo = g.pad.saturating_sub(kx);
                let ox_hi = (g.w + g.pad).saturating_sub(kx).min(g.out_w);
                if ox_lo >= ox_hi {
                    continue;
                }
                for oy in 0..g.out_h {
                    let iy = oy + ky;
                    if iy < g.pad || iy - g.pad >= g.h {
                        continue;
                    }
                    let iy = iy - g.pad;
                    let ix0 = ox_lo + kx - g.pad;
                    let d = &mut dst[iy * g.w + ix0..iy * g.w + ix0 + (ox_hi - ox_lo)];
                    let s = &src[oy * g.out_w + ox_lo..oy * g.out_w + ox_hi];
                    for (a, b) in d.iter_mut().zip(s) {
                        *a += b;
                    }
                }
            }
        }
    }
}

/// `c[m,n] = alpha * a[m,k] * b[k,n] + beta * c`, all row-major unless strides say otherwise.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (isize, isize),
    b: &[f32],
    (rsb, csb): (isize, isize),
    beta: f32,
    c: &mut [f32],
) {
    debug_assert!(c.len() >= m * n);
    debug_assert!(a.len() >= m * k && b.len() >= k * n);
    // SAFETY: slice lengths cover every index reachable from the given
    // dimensions and strides (checked above in debug builds, guaranteed by the
    // callers' geometry in release).
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// 2-d cross-correlation of `[B,C,H,W]` with `[F,C,k,k]`, zero padding.
pub fn conv2d(input: &Tensor, kernel: &Tensor, padding: usize) -> Result<Tensor> {
    let g = ConvGeom::new(input, kernel, padding)?;
    let plane = g.out_plane();
    let patch = g.patch();
    let mut out = vec![0.0f32; g.batch * g.out_ch * plane];
    let mut cols = vec![0.0f32; patch * plane];
    let img_len = g.in_ch * g.h * g.w;
    for b in 0..g.batch {
        im2col(&g, &input.data()[b * img_len..(b + 1) * img_len], &mut cols);
        let dst = &mut out[b * g.out_ch * plane..(b + 1) * g.out_ch * plane];
        gemm(
            g.out_ch,
            patch,
            plane,
            kernel.data(),
            (patch as isize, 1),
            &cols,
            (plane as isize, 1),
            0.0,
            dst,
        );
    }
    Tensor::from_vec(&[g.batch, g.out_ch, g.out_h, g.out_w], out)
}

/// Gradients of `conv2d` with respect to its input and its kernel.
pub(crate) fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    padding: usize,
    grad_out: &Tensor,
    want_input: bool,
    want_kernel: bool,
) -> Result<(Option<Tensor>, Option<Tensor>)> {
    let g = ConvGeom::new(input, kernel, padding)?;
    let plane = g.out_plane();
    let patch = g.patch();
    if grad_out.shape() != [g.batch, g.out_ch, g.out_h, g.out_w] {
        return Err(Error::shape("conv2d upstream gradient has the wrong shape"));
    }
    let img_len = g.in_ch * g.h * g.w;
    let mut cols = vec![0.0f32; patch * plane];
    let mut gcols = vec![0.0f32; patch * plane];
    let mut gk = want_kernel.then(|| vec![0.0f32; g.out_ch * patch]);
    let mut gi = want_input.then(|| vec![0.0f32; input.len()]);
    for b in 0..g.batch {
        let go = &grad_out.data()[b * g.out_ch * plane..(b + 1) * g.out_ch * plane];
        if let Some(gk) = gk.as_mut() {
            im2col(&g, &input.data()[b * img_len..(b + 1) * img_len], &mut cols);
            // gk[F, patch] += go[F, plane] * cols^T[plane, patch]
            gemm(
                g.out_ch,
                plane,
                patch,
                go,
                (plane as isize, 1),
                &cols,
                (1, plane as isize),
                1.0,
                gk,
            );
        }
        if let Some(gi) = gi.as_mut() {
            // gcols[patch, plane] = kernel^T[patch, F] * go[F, plane]
            gemm(
                patch,
                g.out_ch,
                plane,
                kernel.data(),
                (1, patch as isize),
                go,
                (plane as isize, 1),
                0.0,
                &mut gcols,
            );
            col2im(&g, &gcols, &mut gi[b * img_len..(b + 1) * img_len]);
        }
    }
    let gi = gi.map(|d| Tensor::from_vec(input.shape(), d)).transpose()?;
    let gk = gk.map(|d| Tensor::from_vec(kernel.shape(), d)).transpose()?;
    Ok((gi, gk))
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "add of mismatched shapes {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::from_vec(a.shape(), data)
}

/// Add a per-channel bias `[F]` to `[B,F,H,W]`.
pub fn add_bias(x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let [_, f, h, w] = x.dims4()?;
    if bias.shape() != [f] {
        return Err(Error::shape(format!(
            "bias of shape {:?} does not match {f} channels",
            bias.shape()
        )));
    }
    let mut out = x.clone().with_grad(false);
    for (i, chunk) in out.data_mut().chunks_mut(h * w).enumerate() {
        let b = bias.data()[i % f];
        for v in chunk {
            *v += b;
        }
    }
    Ok(out)
}

/// Mean squared error over all elements, accumulated in `f64`.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(format!(
            "mse of mismatched shapes {:?} and {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = f64::from(p) - f64::from(t);
            d * d
        })
        .sum();
    Ok(sum / pred.len() as f64)
}
