pub mod compose;
pub mod conv;
pub mod elementwise;
pub mod linalg;
pub mod resample;
pub mod shape_ops;

pub use conv::ConvCfg;

/// Recorded op identity plus the metadata backward needs. Saved input
/// tensors live in the node's parent list, not here.
#[derive(Clone, Debug)]
pub(crate) enum OpKind {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    /// out = mul * x + add with f64 constants; backward only needs `mul`.
    Affine {
        mul: f64,
    },
    Exp,
    Sqrt,
    Sigmoid,
    Tanh,
    Softplus,
    LeakyRelu {
        slope: f64,
    },
    Matmul,
    Transpose2d,
    Reshape,
    Concat {
        axis: usize,
    },
    Slice {
        axis: usize,
        start: usize,
    },
    PadZero {
        axis: usize,
        before: usize,
    },
    BroadcastTo,
    SumToShape,
    Conv2d(ConvCfg),
    ConvInputVjp(ConvCfg),
    ConvKernelVjp(ConvCfg),
    BilinearResize,
    BilinearAdjoint,
}

/// NumPy-style trailing-dimension broadcast of two shapes.
pub(crate) fn broadcast_shapes(
    a: &[usize],
    b: &[usize],
    op: &'static str,
) -> crate::error::Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() {
            1
        } else {
            a[i - (rank - a.len())]
        };
        let db = if i < rank - b.len() {
            1
        } else {
            b[i - (rank - b.len())]
        };
        if da == db || da == 1 || db == 1 {
            out[i] = da.max(db);
        } else {
            return Err(crate::error::TensorError::ShapeMismatch {
                op,
                lhs: a.to_vec(),
                rhs: b.to_vec(),
            });
        }
    }
    Ok(out)
}

/// Row-major strides, with stride 0 on broadcast (extent-1) dims after
/// aligning `shape` to `out_rank` trailing dimensions.
pub(crate) fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let out_rank = out_shape.len();
    let offset = out_rank - shape.len();
    let mut strides = vec![0usize; out_rank];
    let mut acc = 1usize;
    for i in (0..shape.len()).rev() {
        let extent = shape[i];
        strides[i + offset] = if extent == 1 { 0 } else { acc };
        acc *= extent;
    }
    strides
}

/// Whether `src` can broadcast up to exactly `dst` (trailing alignment).
pub(crate) fn broadcastable_to(src: &[usize], dst: &[usize]) -> bool {
    if src.len() > dst.len() {
        return false;
    }
    let offset = dst.len() - src.len();
    src.iter()
        .enumerate()
        .all(|(i, &s)| s == dst[i + offset] || s == 1)
}
