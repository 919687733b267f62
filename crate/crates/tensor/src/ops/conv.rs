//! 2-D cross-correlation with stride, dilation, and "same" zero padding,
//! plus its two adjoints. The three ops are closed under differentiation:
//! the gradient of each is expressed with the other two, which is what makes
//! second-order terms (the R1 penalty) work on the ordinary tape.
//!
//! Layouts: input (c_in, h, w); kernel (c_out, kh, kw, c_in); output
//! (c_out, h_out, w_out). Every output row is written by exactly one rayon
//! task with a fixed inner summation order, so results are deterministic.

use rayon::prelude::*;

use crate::error::{Result, TensorError};
use crate::ops::OpKind;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvCfg {
    pub c_in: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub h_in: usize,
    pub w_in: usize,
    pub h_out: usize,
    pub w_out: usize,
    pub stride: usize,
    pub dilation: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvCfg {
    /// "Same" padding: output extent ceil(in/stride); odd kernels only.
    pub fn same(
        c_in: usize,
        c_out: usize,
        kh: usize,
        kw: usize,
        h_in: usize,
        w_in: usize,
        stride: usize,
        dilation: usize,
    ) -> Result<Self> {
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(TensorError::invalid(
                "conv2d",
                format!("kernel spatial extent must be odd, got {kh}x{kw}"),
            ));
        }
        if dilation < 1 {
            return Err(TensorError::invalid("conv2d", "dilation must be >= 1"));
        }
        if stride < 1 {
            return Err(TensorError::invalid("conv2d", "stride must be >= 1"));
        }
        let h_out = h_in.div_ceil(stride);
        let w_out = w_in.div_ceil(stride);
        let eff_kh = (kh - 1) * dilation + 1;
        let eff_kw = (kw - 1) * dilation + 1;
        let total_h = ((h_out - 1) * stride + eff_kh).saturating_sub(h_in);
        let total_w = ((w_out - 1) * stride + eff_kw).saturating_sub(w_in);
        Ok(ConvCfg {
            c_in,
            c_out,
            kh,
            kw,
            h_in,
            w_in,
            h_out,
            w_out,
            stride,
            dilation,
            pad_top: total_h / 2,
            pad_left: total_w / 2,
        })
    }

    fn k(&self) -> usize {
        self.kh * self.kw * self.c_in
    }

    fn hw_out(&self) -> usize {
        self.h_out * self.w_out
    }
}

/// cols[k][oy*w_out+ox] = x[ci][oy*s + khi*d - pt][ox*s + kwi*d - pl] or 0,
/// with k = (khi*kw + kwi)*c_in + ci matching the kernel row layout.
fn im2col<T: Scalar>(x: &[T], cfg: &ConvCfg) -> Vec<T> {
    let hw = cfg.hw_out();
    let mut cols = vec![T::ZERO; cfg.k() * hw];
    for khi in 0..cfg.kh {
        for kwi in 0..cfg.kw {
            for ci in 0..cfg.c_in {
                let krow = ((khi * cfg.kw + kwi) * cfg.c_in + ci) * hw;
                let x_plane = &x[ci * cfg.h_in * cfg.w_in..(ci + 1) * cfg.h_in * cfg.w_in];
                for oy in 0..cfg.h_out {
                    let iy = (oy * cfg.stride + khi * cfg.dilation) as isize
                        - cfg.pad_top as isize;
                    if iy < 0 || iy >= cfg.h_in as isize {
                        continue;
                    }
                    let src_row = iy as usize * cfg.w_in;
                    let dst_row = krow + oy * cfg.w_out;
                    for ox in 0..cfg.w_out {
                        let ix = (ox * cfg.stride + kwi * cfg.dilation) as isize
                            - cfg.pad_left as isize;
                        if ix >= 0 && ix < cfg.w_in as isize {
                            cols[dst_row + ox] = x_plane[src_row + ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-add of a cols matrix back into input layout (adjoint of im2col).
fn col2im<T: Scalar>(cols: &[T], cfg: &ConvCfg) -> Vec<T> {
    let hw = cfg.hw_out();
    let mut x = vec![T::ZERO; cfg.c_in * cfg.h_in * cfg.w_in];
    for khi in 0..cfg.kh {
        for kwi in 0..cfg.kw {
            for ci in 0..cfg.c_in {
                let krow = ((khi * cfg.kw + kwi) * cfg.c_in + ci) * hw;
                let x_plane = &mut x[ci * cfg.h_in * cfg.w_in..(ci + 1) * cfg.h_in * cfg.w_in];
                for oy in 0..cfg.h_out {
                    let iy = (oy * cfg.stride + khi * cfg.dilation) as isize
                        - cfg.pad_top as isize;
                    if iy < 0 || iy >= cfg.h_in as isize {
                        continue;
                    }
                    let src_row = krow + oy * cfg.w_out;
                    let dst_row = iy as usize * cfg.w_in;
                    for ox in 0..cfg.w_out {
                        let ix = (ox * cfg.stride + kwi * cfg.dilation) as isize
                            - cfg.pad_left as isize;
                        if ix >= 0 && ix < cfg.w_in as isize {
                            x_plane[dst_row + ix as usize] += cols[src_row + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

pub(crate) fn conv2d_raw<T: Scalar>(x: &[T], kernel: &[T], cfg: &ConvCfg) -> Vec<T> {
    let cols = im2col(x, cfg);
    let hw = cfg.hw_out();
    let k = cfg.k();
    let mut out = vec![T::ZERO; cfg.c_out * hw];
    out.par_chunks_mut(hw).enumerate().for_each(|(o, row)| {
        let w_row = &kernel[o * k..(o + 1) * k];
        for (kk, &alpha) in w_row.iter().enumerate() {
            let col_row = &cols[kk * hw..(kk + 1) * hw];
            for (c, &v) in row.iter_mut().zip(col_row) {
                *c += alpha * v;
            }
        }
    });
    out
}

pub(crate) fn conv2d_input_vjp_raw<T: Scalar>(kernel: &[T], gout: &[T], cfg: &ConvCfg) -> Vec<T> {
    let hw = cfg.hw_out();
    let k = cfg.k();
    // col_grad = W^T . g
    let mut col_grad = vec![T::ZERO; k * hw];
    col_grad
        .par_chunks_mut(hw)
        .enumerate()
        .for_each(|(kk, row)| {
            for o in 0..cfg.c_out {
                let alpha = kernel[o * k + kk];
                let g_row = &gout[o * hw..(o + 1) * hw];
                for (c, &v) in row.iter_mut().zip(g_row) {
                    *c += alpha * v;
                }
            }
        });
    col2im(&col_grad, cfg)
}

pub(crate) fn conv2d_kernel_vjp_raw<T: Scalar>(x: &[T], gout: &[T], cfg: &ConvCfg) -> Vec<T> {
    let cols = im2col(x, cfg);
    let hw = cfg.hw_out();
    let k = cfg.k();
    let mut grad = vec![T::ZERO; cfg.c_out * k];
    grad.par_chunks_mut(k).enumerate().for_each(|(o, row)| {
        let g_row = &gout[o * hw..(o + 1) * hw];
        for (kk, cell) in row.iter_mut().enumerate() {
            let col_row = &cols[kk * hw..(kk + 1) * hw];
            let mut acc = T::ZERO;
            for (&g, &c) in g_row.iter().zip(col_row) {
                acc += g * c;
            }
            *cell = acc;
        }
    });
    grad
}

fn check_input_kernel<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let xs = input.shape();
    let ks = kernel.shape();
    if xs.len() != 3 {
        return Err(TensorError::invalid(
            "conv2d",
            format!("input must be (c_in,h,w), got {xs:?}"),
        ));
    }
    if ks.len() != 4 {
        return Err(TensorError::invalid(
            "conv2d",
            format!("kernel must be (c_out,kh,kw,c_in), got {ks:?}"),
        ));
    }
    if xs[0] != ks[3] {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            lhs: xs,
            rhs: ks,
        });
    }
    Ok((xs, ks))
}

impl<T: Scalar> Tensor<T> {
    /// Cross-correlation with "same" zero padding.
    pub fn conv2d(&self, kernel: &Tensor<T>, stride: usize, dilation: usize) -> Result<Tensor<T>> {
        let (xs, ks) = check_input_kernel(self, kernel)?;
        let cfg = ConvCfg::same(xs[0], ks[0], ks[1], ks[2], xs[1], xs[2], stride, dilation)?;
        conv2d_with_cfg(self, kernel, cfg)
    }
}

pub(crate) fn conv2d_with_cfg<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    cfg: ConvCfg,
) -> Result<Tensor<T>> {
    let data = conv2d_raw(&input.node.data.borrow(), &kernel.node.data.borrow(), &cfg);
    Ok(Tensor::from_op(
        vec![cfg.c_out, cfg.h_out, cfg.w_out],
        data,
        OpKind::Conv2d(cfg),
        vec![input.clone(), kernel.clone()],
    ))
}

pub(crate) fn conv_input_vjp_op<T: Scalar>(
    kernel: &Tensor<T>,
    gout: &Tensor<T>,
    cfg: ConvCfg,
) -> Tensor<T> {
    let data = conv2d_input_vjp_raw(&kernel.node.data.borrow(), &gout.node.data.borrow(), &cfg);
    Tensor::from_op(
        vec![cfg.c_in, cfg.h_in, cfg.w_in],
        data,
        OpKind::ConvInputVjp(cfg),
        vec![kernel.clone(), gout.clone()],
    )
}

pub(crate) fn conv_kernel_vjp_op<T: Scalar>(
    input: &Tensor<T>,
    gout: &Tensor<T>,
    cfg: ConvCfg,
) -> Tensor<T> {
    let data = conv2d_kernel_vjp_raw(&input.node.data.borrow(), &gout.node.data.borrow(), &cfg);
    Tensor::from_op(
        vec![cfg.c_out, cfg.kh, cfg.kw, cfg.c_in],
        data,
        OpKind::ConvKernelVjp(cfg),
        vec![input.clone(), gout.clone()],
    )
}
