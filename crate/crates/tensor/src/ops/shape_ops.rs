//! Shape-changing ops: reshape, concat, slice, zero-pad, broadcast and its
//! adjoint reduction.

use crate::error::{Result, TensorError};
use crate::ops::{broadcast_strides, broadcastable_to, OpKind};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

impl<T: Scalar> Tensor<T> {
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        let expected: usize = shape.iter().product();
        if expected != self.numel() {
            return Err(TensorError::invalid(
                "reshape",
                format!("cannot reshape {:?} into {:?}", self.shape(), shape),
            ));
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.data(),
            OpKind::Reshape,
            vec![self.clone()],
        ))
    }

    /// Contiguous slice along `axis`: indices [start, start + len).
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(TensorError::InvalidAxis {
                axis,
                rank: shape.len(),
            });
        }
        if start + len > shape[axis] || len == 0 {
            return Err(TensorError::invalid(
                "slice",
                format!(
                    "range {}..{} out of bounds for extent {}",
                    start,
                    start + len,
                    shape[axis]
                ),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.node.data.borrow();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * shape[axis] + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        drop(src);
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        Ok(Tensor::from_op(
            out_shape,
            out,
            OpKind::Slice { axis, start },
            vec![self.clone()],
        ))
    }

    /// Zero-pad along `axis` with `before`/`after` extra entries.
    pub fn pad_zero(&self, axis: usize, before: usize, after: usize) -> Result<Tensor<T>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(TensorError::InvalidAxis {
                axis,
                rank: shape.len(),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let new_extent = shape[axis] + before + after;
        let src = self.node.data.borrow();
        let mut out = vec![T::ZERO; outer * new_extent * inner];
        for o in 0..outer {
            let src_base = o * shape[axis] * inner;
            let dst_base = (o * new_extent + before) * inner;
            out[dst_base..dst_base + shape[axis] * inner]
                .copy_from_slice(&src[src_base..src_base + shape[axis] * inner]);
        }
        drop(src);
        let mut out_shape = shape.clone();
        out_shape[axis] = new_extent;
        Ok(Tensor::from_op(
            out_shape,
            out,
            OpKind::PadZero { axis, before },
            vec![self.clone()],
        ))
    }

    /// Materialize this tensor broadcast up to `shape`.
    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Tensor<T>> {
        let src_shape = self.shape();
        if !broadcastable_to(&src_shape, shape) {
            return Err(TensorError::ShapeMismatch {
                op: "broadcast_to",
                lhs: src_shape,
                rhs: shape.to_vec(),
            });
        }
        let strides = broadcast_strides(&src_shape, shape);
        let n: usize = shape.iter().product();
        let rank = shape.len();
        let src = self.node.data.borrow();
        let mut idx = vec![0usize; rank];
        let mut off = 0usize;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(src[off]);
            for d in (0..rank).rev() {
                idx[d] += 1;
                off += strides[d];
                if idx[d] < shape[d] {
                    break;
                }
                idx[d] = 0;
                off -= strides[d] * shape[d];
            }
        }
        drop(src);
        Ok(Tensor::from_op(
            shape.to_vec(),
            out,
            OpKind::BroadcastTo,
            vec![self.clone()],
        ))
    }

    /// Sum entries down to `shape` (the adjoint of broadcast_to). A target
    /// of [1] reduces everything to one scalar.
    pub fn sum_to_shape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        let src_shape = self.shape();
        if !broadcastable_to(shape, &src_shape) {
            return Err(TensorError::ShapeMismatch {
                op: "sum_to_shape",
                lhs: src_shape,
                rhs: shape.to_vec(),
            });
        }
        let data = sum_to_shape_raw(&src_shape, &self.node.data.borrow(), shape);
        Ok(Tensor::from_op(
            shape.to_vec(),
            data,
            OpKind::SumToShape,
            vec![self.clone()],
        ))
    }

    pub fn sum_all(&self) -> Result<Tensor<T>> {
        self.sum_to_shape(&[1])
    }

    pub fn mean_all(&self) -> Result<Tensor<T>> {
        let n = self.numel();
        Ok(self.sum_all()?.scale(1.0 / n as f64))
    }

    /// Sum along one axis, keeping it as extent 1.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor<T>> {
        let mut target = self.shape();
        if axis >= target.len() {
            return Err(TensorError::InvalidAxis {
                axis,
                rank: target.len(),
            });
        }
        target[axis] = 1;
        self.sum_to_shape(&target)
    }
}

pub(crate) fn sum_to_shape_raw<T: Scalar>(
    src_shape: &[usize],
    src: &[T],
    dst_shape: &[usize],
) -> Vec<T> {
    let n: usize = src_shape.iter().product();
    let dst_n: usize = dst_shape.iter().product();
    if src_shape == dst_shape {
        return src.to_vec();
    }
    // dst strides aligned to src rank, 0 where dst broadcasts
    let rank = src_shape.len();
    let offset = rank - dst_shape.len();
    let mut dst_strides = vec![0usize; rank];
    let mut acc = 1usize;
    for i in (0..dst_shape.len()).rev() {
        dst_strides[i + offset] = if dst_shape[i] == 1 { 0 } else { acc };
        acc *= dst_shape[i];
    }
    let mut out = vec![T::ZERO; dst_n];
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for &v in src.iter().take(n) {
        out[off] += v;
        for d in (0..rank).rev() {
            idx[d] += 1;
            off += dst_strides[d];
            if idx[d] < src_shape[d] {
                break;
            }
            idx[d] = 0;
            off -= dst_strides[d] * src_shape[d];
        }
    }
    out
}

/// Concatenate along `axis`. All other extents must agree.
pub fn concat<T: Scalar>(tensors: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    if tensors.is_empty() {
        return Err(TensorError::invalid("concat", "no inputs"));
    }
    let first = tensors[0].shape();
    if axis >= first.len() {
        return Err(TensorError::InvalidAxis {
            axis,
            rank: first.len(),
        });
    }
    let mut total = 0usize;
    for t in tensors {
        let s = t.shape();
        if s.len() != first.len()
            || s.iter()
                .zip(&first)
                .enumerate()
                .any(|(i, (a, b))| i != axis && a != b)
        {
            return Err(TensorError::ShapeMismatch {
                op: "concat",
                lhs: first.clone(),
                rhs: s,
            });
        }
        total += s[axis];
    }
    let outer: usize = first[..axis].iter().product();
    let inner: usize = first[axis + 1..].iter().product();
    let mut out_shape = first.clone();
    out_shape[axis] = total;
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for t in tensors {
            let extent = t.node.shape[axis];
            let src = t.node.data.borrow();
            let base = o * extent * inner;
            out.extend_from_slice(&src[base..base + extent * inner]);
        }
    }
    Ok(Tensor::from_op(
        out_shape,
        out,
        OpKind::Concat { axis },
        tensors.iter().map(|t| (*t).clone()).collect(),
    ))
}
