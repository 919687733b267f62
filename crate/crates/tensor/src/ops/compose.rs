//! Ops composed from primitives. Because every piece is a recorded op,
//! first and second derivatives come for free.

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

impl<T: Scalar> Tensor<T> {
    /// Detached per-slice maximum along `axis` (kept as extent 1).
    fn max_axis_detached(&self, axis: usize) -> Result<Tensor<T>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(TensorError::InvalidAxis {
                axis,
                rank: shape.len(),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let extent = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.node.data.borrow();
        let mut out = vec![T::ZERO; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut m = src[o * extent * inner + i];
                for e in 1..extent {
                    let v = src[(o * extent + e) * inner + i];
                    if v > m {
                        m = v;
                    }
                }
                out[o * inner + i] = m;
            }
        }
        drop(src);
        let mut out_shape = shape;
        out_shape[axis] = 1;
        Ok(Tensor::new_node(out_shape, out, false, None))
    }

    /// Numerically stable softmax along `axis`. Subtracting the detached
    /// maximum leaves both the value and the derivative unchanged.
    pub fn softmax(&self, axis: usize) -> Result<Tensor<T>> {
        let m = self.max_axis_detached(axis)?;
        let e = self.sub(&m)?.exp();
        let denom = e.sum_axis(axis)?;
        e.div(&denom)
    }

    /// Zero-mean unit-variance normalization along `axis` (biased variance,
    /// eps inside the square root). Affine parameters live in the layers
    /// that use this.
    pub fn layer_norm(&self, axis: usize, eps: f64) -> Result<Tensor<T>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(TensorError::InvalidAxis {
                axis,
                rank: shape.len(),
            });
        }
        if shape[axis] < 2 {
            return Err(TensorError::invalid(
                "layer_norm",
                format!("axis extent must be >= 2, got {}", shape[axis]),
            ));
        }
        let n = shape[axis] as f64;
        let mean = self.sum_axis(axis)?.scale(1.0 / n);
        let centered = self.sub(&mean)?;
        let var = centered.mul(&centered)?.sum_axis(axis)?.scale(1.0 / n);
        centered.div(&var.affine(1.0, eps).sqrt())
    }
}

/// w [out x in] . x [in x m] + b [out x 1] broadcast over columns.
pub fn fully_connected<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<Tensor<T>> {
    w.matmul(x)?.add(b)
}

/// Mean of squared differences over all entries.
pub fn mse<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "mse",
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    let d = a.sub(b)?;
    d.mul(&d)?.mean_all()
}
