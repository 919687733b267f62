//! Bilinear resampling (align-corners = false, clamped edges) and its
//! adjoint. The same index/weight tables drive both directions, so the
//! adjoint is exact and the pair closes under differentiation.

use crate::error::{Result, TensorError};
use crate::ops::OpKind;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-output-pixel source taps: (i0, i1, w1) with w0 = 1 - w1.
fn axis_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = (o as f64 + 0.5) * scale - 0.5;
            let floor = src.floor();
            let frac = src - floor;
            let i0 = (floor.max(0.0) as usize).min(n_in - 1);
            let i1 = ((floor + 1.0).max(0.0) as usize).min(n_in - 1);
            (i0, i1, frac.clamp(0.0, 1.0))
        })
        .collect()
}

fn resize_raw<T: Scalar>(
    x: &[T],
    c: usize,
    h_in: usize,
    w_in: usize,
    h_out: usize,
    w_out: usize,
) -> Vec<T> {
    let ty = axis_taps(h_in, h_out);
    let tx = axis_taps(w_in, w_out);
    let mut out = vec![T::ZERO; c * h_out * w_out];
    for ci in 0..c {
        let plane = &x[ci * h_in * w_in..(ci + 1) * h_in * w_in];
        let out_plane = &mut out[ci * h_out * w_out..(ci + 1) * h_out * w_out];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let v00 = plane[y0 * w_in + x0].to_f64();
                let v01 = plane[y0 * w_in + x1].to_f64();
                let v10 = plane[y1 * w_in + x0].to_f64();
                let v11 = plane[y1 * w_in + x1].to_f64();
                let top = v00 * (1.0 - fx) + v01 * fx;
                let bot = v10 * (1.0 - fx) + v11 * fx;
                out_plane[oy * w_out + ox] = T::from_f64(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    out
}

fn resize_adjoint_raw<T: Scalar>(
    g: &[T],
    c: usize,
    h_in: usize,
    w_in: usize,
    h_out: usize,
    w_out: usize,
) -> Vec<T> {
    let ty = axis_taps(h_in, h_out);
    let tx = axis_taps(w_in, w_out);
    let mut out = vec![T::ZERO; c * h_in * w_in];
    for ci in 0..c {
        let g_plane = &g[ci * h_out * w_out..(ci + 1) * h_out * w_out];
        let out_plane = &mut out[ci * h_in * w_in..(ci + 1) * h_in * w_in];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let gv = g_plane[oy * w_out + ox].to_f64();
                out_plane[y0 * w_in + x0] += T::from_f64(gv * (1.0 - fy) * (1.0 - fx));
                out_plane[y0 * w_in + x1] += T::from_f64(gv * (1.0 - fy) * fx);
                out_plane[y1 * w_in + x0] += T::from_f64(gv * fy * (1.0 - fx));
                out_plane[y1 * w_in + x1] += T::from_f64(gv * fy * fx);
            }
        }
    }
    out
}

impl<T: Scalar> Tensor<T> {
    /// Resize a (c, h, w) tensor to (c, out_h, out_w).
    pub fn bilinear_resize(&self, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
        let s = self.shape();
        if s.len() != 3 {
            return Err(TensorError::invalid(
                "bilinear_resize",
                format!("expected (c,h,w), got {s:?}"),
            ));
        }
        if out_h == 0 || out_w == 0 {
            return Err(TensorError::invalid(
                "bilinear_resize",
                "output extent must be >= 1",
            ));
        }
        let data = resize_raw(&self.node.data.borrow(), s[0], s[1], s[2], out_h, out_w);
        Ok(Tensor::from_op(
            vec![s[0], out_h, out_w],
            data,
            OpKind::BilinearResize,
            vec![self.clone()],
        ))
    }

    /// Resize by a rational factor; factor > 1 upsamples.
    pub fn bilinear_scale(&self, factor: f64) -> Result<Tensor<T>> {
        let s = self.shape();
        if s.len() != 3 {
            return Err(TensorError::invalid(
                "bilinear_scale",
                format!("expected (c,h,w), got {s:?}"),
            ));
        }
        if factor <= 0.0 {
            return Err(TensorError::invalid(
                "bilinear_scale",
                "factor must be positive",
            ));
        }
        let out_h = ((s[1] as f64 * factor).round() as usize).max(1);
        let out_w = ((s[2] as f64 * factor).round() as usize).max(1);
        self.bilinear_resize(out_h, out_w)
    }
}

/// Adjoint of `bilinear_resize`: maps an (c, out_h, out_w) cotangent back to
/// (c, in_h, in_w).
pub(crate) fn bilinear_adjoint_op<T: Scalar>(
    g: &Tensor<T>,
    in_h: usize,
    in_w: usize,
) -> Tensor<T> {
    let s = g.shape();
    let data = resize_adjoint_raw(&g.node.data.borrow(), s[0], in_h, in_w, s[1], s[2]);
    Tensor::from_op(
        vec![s[0], in_h, in_w],
        data,
        OpKind::BilinearAdjoint,
        vec![g.clone()],
    )
}
