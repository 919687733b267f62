//! 2-D matrix product and transpose.

use rayon::prelude::*;

use crate::error::{Result, TensorError};
use crate::ops::OpKind;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// c[m][n] = sum_k a[m][k] * b[k][n], gaxpy form: stream rows of b.
/// Each output row is produced by exactly one task with a fixed summation
/// order, so results are bit-identical regardless of thread count.
pub(crate) fn matmul_raw<T: Scalar>(
    a: &[T],
    b: &[T],
    m: usize,
    k: usize,
    n: usize,
    out: &mut [T],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.par_chunks_mut(n).enumerate().for_each(|(row, c_row)| {
        c_row.fill(T::ZERO);
        let a_row = &a[row * k..(row + 1) * k];
        for (kk, &alpha) in a_row.iter().enumerate() {
            let b_row = &b[kk * n..(kk + 1) * n];
            for (c, &bv) in c_row.iter_mut().zip(b_row) {
                *c += alpha * bv;
            }
        }
    });
}

impl<T: Scalar> Tensor<T> {
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::ZERO; m * n];
        matmul_raw(
            &self.node.data.borrow(),
            &other.node.data.borrow(),
            m,
            k,
            n,
            &mut out,
        );
        Ok(Tensor::from_op(
            vec![m, n],
            out,
            OpKind::Matmul,
            vec![self.clone(), other.clone()],
        ))
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&self) -> Result<Tensor<T>> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(TensorError::invalid(
                "transpose",
                format!("expected rank 2, got shape {s:?}"),
            ));
        }
        let (r, c) = (s[0], s[1]);
        let src = self.node.data.borrow();
        let mut out = vec![T::ZERO; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        drop(src);
        Ok(Tensor::from_op(
            vec![c, r],
            out,
            OpKind::Transpose2d,
            vec![self.clone()],
        ))
    }
}
