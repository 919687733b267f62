//! Elementwise ops with trailing-dimension broadcasting.

use crate::error::Result;
use crate::ops::{broadcast_shapes, broadcast_strides, OpKind};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Apply `f` elementwise over the broadcast of two buffers.
fn zip_broadcast<T: Scalar>(
    a_shape: &[usize],
    a: &[T],
    b_shape: &[usize],
    b: &[T],
    out_shape: &[usize],
    f: impl Fn(T, T) -> T,
) -> Vec<T> {
    let n: usize = out_shape.iter().product();
    if a_shape == out_shape && b_shape == out_shape {
        return a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect();
    }
    let sa = broadcast_strides(a_shape, out_shape);
    let sb = broadcast_strides(b_shape, out_shape);
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    let mut oa = 0usize;
    let mut ob = 0usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(f(a[oa], b[ob]));
        // odometer increment
        for d in (0..rank).rev() {
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
            oa -= sa[d] * out_shape[d];
            ob -= sb[d] * out_shape[d];
        }
    }
    out
}

fn binary<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    kind: OpKind,
    name: &'static str,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    let out_shape = broadcast_shapes(&a.node.shape, &b.node.shape, name)?;
    let data = zip_broadcast(
        &a.node.shape,
        &a.node.data.borrow(),
        &b.node.shape,
        &b.node.data.borrow(),
        &out_shape,
        f,
    );
    Ok(Tensor::from_op(
        out_shape,
        data,
        kind,
        vec![a.clone(), b.clone()],
    ))
}

fn unary<T: Scalar>(x: &Tensor<T>, kind: OpKind, f: impl Fn(T) -> T) -> Tensor<T> {
    let data = x.node.data.borrow().iter().map(|&v| f(v)).collect();
    Tensor::from_op(x.shape(), data, kind, vec![x.clone()])
}

impl<T: Scalar> Tensor<T> {
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(self, other, OpKind::Add, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(self, other, OpKind::Sub, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(self, other, OpKind::Mul, "mul", |a, b| a * b)
    }

    pub fn div(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(self, other, OpKind::Div, "div", |a, b| a / b)
    }

    pub fn neg(&self) -> Tensor<T> {
        unary(self, OpKind::Neg, |v| -v)
    }

    /// mul * x + add, with plain constants.
    pub fn affine(&self, mul: f64, add: f64) -> Tensor<T> {
        let m = T::from_f64(mul);
        let a = T::from_f64(add);
        unary(self, OpKind::Affine { mul }, move |v| m * v + a)
    }

    pub fn scale(&self, factor: f64) -> Tensor<T> {
        self.affine(factor, 0.0)
    }

    pub fn exp(&self) -> Tensor<T> {
        unary(self, OpKind::Exp, |v| v.exp())
    }

    pub fn sqrt(&self) -> Tensor<T> {
        unary(self, OpKind::Sqrt, |v| v.sqrt())
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        unary(self, OpKind::Sigmoid, |v| {
            // evaluate on the non-overflowing side
            if v >= T::ZERO {
                T::ONE / (T::ONE + (-v).exp())
            } else {
                let e = v.exp();
                e / (T::ONE + e)
            }
        })
    }

    pub fn tanh(&self) -> Tensor<T> {
        unary(self, OpKind::Tanh, |v| v.tanh())
    }

    /// ln(1 + e^x), computed as max(x, 0) + ln(1 + e^{-|x|}).
    pub fn softplus(&self) -> Tensor<T> {
        unary(self, OpKind::Softplus, |v| {
            v.maximum(T::ZERO) + (T::ONE + (-v.abs()).exp()).ln()
        })
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor<T> {
        crate::tensor::kink_sentinel_fold_signs(&self.node.data.borrow());
        let s = T::from_f64(slope);
        unary(self, OpKind::LeakyRelu { slope }, move |v| {
            if v >= T::ZERO {
                v
            } else {
                s * v
            }
        })
    }

    /// Detached elementwise derivative of leaky_relu at this tensor's values.
    pub(crate) fn leaky_relu_mask(&self, slope: f64) -> Tensor<T> {
        let s = T::from_f64(slope);
        let data: Vec<T> = self
            .node
            .data
            .borrow()
            .iter()
            .map(|&v| if v >= T::ZERO { T::ONE } else { s })
            .collect();
        Tensor::new_node(self.shape(), data, false, None)
    }
}
