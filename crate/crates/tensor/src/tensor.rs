//! The tensor handle and the recorded computation graph.
//!
//! A `Tensor` is a cheap handle (`Rc`) onto a node. Nodes created by ops keep
//! handles to their parents, so the graph that produced a value stays alive
//! exactly as long as the value does. `backward` walks that graph in reverse
//! topological order and accumulates gradients for every `requires_grad`
//! leaf exactly once.

use std::cell::{Cell, RefCell};
use std::rc::Rc;

use crate::error::{Result, TensorError};
use crate::ops::OpKind;
use crate::scalar::Scalar;

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(1) };
    static NO_GRAD_DEPTH: Cell<u32> = const { Cell::new(0) };
    /// When armed, leaky_relu folds its input sign pattern in here. The
    /// gradcheck harness uses it to detect probes that cross a kink.
    static KINK_HASH: Cell<Option<u64>> = const { Cell::new(None) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// Run `f` with op recording disabled: results are plain constants.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    NO_GRAD_DEPTH.with(|c| c.set(c.get() + 1));
    let out = f();
    NO_GRAD_DEPTH.with(|c| c.set(c.get() - 1));
    out
}

pub(crate) fn recording_enabled() -> bool {
    NO_GRAD_DEPTH.with(|c| c.get()) == 0
}

/// Arm the kink sentinel (resets the running sign hash).
pub fn kink_sentinel_arm() {
    KINK_HASH.with(|c| c.set(Some(0xcbf29ce484222325)));
}

/// Read and disarm the sentinel; None if it was never armed.
pub fn kink_sentinel_take() -> Option<u64> {
    KINK_HASH.with(|c| c.take())
}

pub(crate) fn kink_sentinel_fold_signs<T: Scalar>(values: &[T]) {
    KINK_HASH.with(|c| {
        if let Some(mut h) = c.get() {
            for v in values {
                h ^= (*v >= T::ZERO) as u64 + 1;
                h = h.wrapping_mul(0x100000001b3);
            }
            c.set(Some(h));
        }
    });
}

pub(crate) struct Node<T: Scalar> {
    pub id: u64,
    pub shape: Vec<usize>,
    pub data: RefCell<Vec<T>>,
    pub requires_grad: Cell<bool>,
    /// Gradient accumulator for leaves.
    pub grad: RefCell<Option<Vec<T>>>,
    /// The op that produced this node, with handles to its inputs.
    /// `None` for leaves.
    pub op: Option<Op<T>>,
}

pub(crate) struct Op<T: Scalar> {
    pub kind: OpKind,
    pub parents: Vec<Tensor<T>>,
}

/// N-dimensional array with optional gradient tracking.
pub struct Tensor<T: Scalar> {
    pub(crate) node: Rc<Node<T>>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            node: Rc::clone(&self.node),
        }
    }
}

impl<T: Scalar> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Tensor(id={}, shape={:?}, requires_grad={})",
            self.node.id,
            self.node.shape,
            self.node.requires_grad.get()
        )
    }
}

impl<T: Scalar> Tensor<T> {
    pub(crate) fn new_node(
        shape: Vec<usize>,
        data: Vec<T>,
        requires_grad: bool,
        op: Option<Op<T>>,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            node: Rc::new(Node {
                id: next_id(),
                shape,
                data: RefCell::new(data),
                requires_grad: Cell::new(requires_grad),
                grad: RefCell::new(None),
                op,
            }),
        }
    }

    /// Result node of an op: keeps parent handles unless recording is off
    /// or no parent needs gradients.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<T>,
        kind: OpKind,
        parents: Vec<Tensor<T>>,
    ) -> Self {
        let track = recording_enabled() && parents.iter().any(|p| p.node.requires_grad.get());
        if track {
            Self::new_node(shape, data, true, Some(Op { kind, parents }))
        } else {
            Self::new_node(shape, data, false, None)
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(TensorError::DataLength {
                shape: shape.to_vec(),
                expected,
                got: data.len(),
            });
        }
        Ok(Self::new_node(shape.to_vec(), data, false, None))
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n: usize = shape.iter().product();
        Self::new_node(shape.to_vec(), vec![value; n], false, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::ZERO)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::ONE)
    }

    pub fn scalar(value: T) -> Self {
        Self::new_node(vec![1], vec![value], false, None)
    }

    pub fn requires_grad(self, flag: bool) -> Self {
        self.node.requires_grad.set(flag);
        self
    }

    pub fn requires_grad_flag(&self) -> bool {
        self.node.requires_grad.get()
    }

    pub fn is_leaf(&self) -> bool {
        self.node.op.is_none()
    }

    pub(crate) fn id(&self) -> u64 {
        self.node.id
    }

    pub fn shape(&self) -> Vec<usize> {
        self.node.shape.clone()
    }

    pub fn rank(&self) -> usize {
        self.node.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.node.shape.iter().product()
    }

    pub fn data(&self) -> Vec<T> {
        self.node.data.borrow().clone()
    }

    /// Borrow the raw buffer for the duration of `f`.
    pub fn with_data<R>(&self, f: impl FnOnce(&[T]) -> R) -> R {
        f(&self.node.data.borrow())
    }

    /// Overwrite the buffer of a leaf in place (used by optimizers and
    /// finite-difference probes). Length must match.
    pub fn set_data(&self, new: &[T]) {
        let mut d = self.node.data.borrow_mut();
        assert_eq!(d.len(), new.len(), "set_data length mismatch");
        d.copy_from_slice(new);
    }

    /// In-place elementwise update of a leaf buffer.
    pub fn update_data(&self, f: impl FnMut(&mut [T])) {
        let mut d = self.node.data.borrow_mut();
        let mut f = f;
        f(&mut d);
    }

    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.node.data.borrow()[0]
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.node.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.borrow_mut() = None;
    }

    pub(crate) fn accumulate_grad(&self, g: &[T]) {
        let mut slot = self.node.grad.borrow_mut();
        match slot.as_mut() {
            Some(buf) => {
                for (a, b) in buf.iter_mut().zip(g) {
                    *a += *b;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Constant copy sharing no graph history.
    pub fn detach(&self) -> Self {
        Self::new_node(self.shape(), self.data(), false, None)
    }

    /// True when every element is finite.
    pub fn all_finite(&self) -> bool {
        self.node.data.borrow().iter().all(|v| v.is_finite())
    }

    /// Error out if any element is non-finite; `context` names the culprit.
    pub fn check_finite(&self, context: &str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(TensorError::NonFinite {
                context: context.to_string(),
            })
        }
    }
}
