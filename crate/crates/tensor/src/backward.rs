//! Reverse-mode differentiation over the recorded graph.
//!
//! `backward` accumulates into leaf `.grad` buffers. `grad` returns gradient
//! tensors for chosen nodes and can keep recording (`create_graph`) so the
//! returned gradients are themselves differentiable — that is how the R1
//! penalty reaches second order.

use std::collections::{HashMap, HashSet};

use crate::error::{Result, TensorError};
use crate::ops::conv::{conv2d_with_cfg, conv_input_vjp_op, conv_kernel_vjp_op};
use crate::ops::resample::bilinear_adjoint_op;
use crate::ops::shape_ops::sum_to_shape_raw;
use crate::ops::OpKind;
use crate::scalar::Scalar;
use crate::tensor::{no_grad, Tensor};

/// Reverse topological order from `root` (root first).
fn topo_order<T: Scalar>(root: &Tensor<T>) -> Vec<Tensor<T>> {
    let mut order: Vec<Tensor<T>> = Vec::new();
    let mut visited: HashSet<u64> = HashSet::new();
    // iterative post-order DFS; entries are (tensor, child_cursor)
    let mut stack: Vec<(Tensor<T>, usize)> = vec![(root.clone(), 0)];
    visited.insert(root.id());
    while let Some((node, cursor)) = stack.pop() {
        let parents: Vec<Tensor<T>> = match &node.node.op {
            Some(op) => op.parents.clone(),
            None => Vec::new(),
        };
        if cursor < parents.len() {
            stack.push((node.clone(), cursor + 1));
            let child = parents[cursor].clone();
            if child.requires_grad_flag() && !visited.contains(&child.id()) {
                visited.insert(child.id());
                stack.push((child, 0));
            }
        } else {
            order.push(node);
        }
    }
    order.reverse();
    order
}

/// Per-parent gradient contributions of one op given the upstream cotangent.
fn vjp<T: Scalar>(
    kind: &OpKind,
    out: &Tensor<T>,
    parents: &[Tensor<T>],
    up: &Tensor<T>,
) -> Result<Vec<Option<Tensor<T>>>> {
    let g = match kind {
        OpKind::Add => vec![
            Some(up.sum_to_shape(&parents[0].shape())?),
            Some(up.sum_to_shape(&parents[1].shape())?),
        ],
        OpKind::Sub => vec![
            Some(up.sum_to_shape(&parents[0].shape())?),
            Some(up.neg().sum_to_shape(&parents[1].shape())?),
        ],
        OpKind::Mul => vec![
            Some(up.mul(&parents[1])?.sum_to_shape(&parents[0].shape())?),
            Some(up.mul(&parents[0])?.sum_to_shape(&parents[1].shape())?),
        ],
        OpKind::Div => {
            // out = a / b: da = up / b; db = -up * out / b
            let da = up.div(&parents[1])?.sum_to_shape(&parents[0].shape())?;
            let db = up
                .mul(out)?
                .div(&parents[1])?
                .neg()
                .sum_to_shape(&parents[1].shape())?;
            vec![Some(da), Some(db)]
        }
        OpKind::Neg => vec![Some(up.neg())],
        OpKind::Affine { mul, .. } => vec![Some(up.scale(*mul))],
        OpKind::Exp => vec![Some(up.mul(out)?)],
        OpKind::Sqrt => vec![Some(up.scale(0.5).div(out)?)],
        OpKind::Sigmoid => {
            let one_minus = out.affine(-1.0, 1.0);
            vec![Some(up.mul(out)?.mul(&one_minus)?)]
        }
        OpKind::Tanh => {
            let one_minus_sq = out.mul(out)?.affine(-1.0, 1.0);
            vec![Some(up.mul(&one_minus_sq)?)]
        }
        OpKind::Softplus => vec![Some(up.mul(&parents[0].sigmoid())?)],
        OpKind::LeakyRelu { slope } => {
            let mask = parents[0].leaky_relu_mask(*slope);
            vec![Some(up.mul(&mask)?)]
        }
        OpKind::Matmul => {
            let da = up.matmul(&parents[1].transpose()?)?;
            let db = parents[0].transpose()?.matmul(up)?;
            vec![Some(da), Some(db)]
        }
        OpKind::Transpose2d => vec![Some(up.transpose()?)],
        OpKind::Reshape => vec![Some(up.reshape(&parents[0].shape())?)],
        OpKind::Concat { axis } => {
            let mut offset = 0usize;
            let mut grads = Vec::with_capacity(parents.len());
            for p in parents {
                let extent = p.shape()[*axis];
                grads.push(Some(up.slice(*axis, offset, extent)?));
                offset += extent;
            }
            grads
        }
        OpKind::Slice { axis, start } => {
            let orig = parents[0].shape()[*axis];
            let len = out.shape()[*axis];
            vec![Some(up.pad_zero(*axis, *start, orig - start - len)?)]
        }
        OpKind::PadZero { axis, before } => {
            let orig = parents[0].shape()[*axis];
            vec![Some(up.slice(*axis, *before, orig)?)]
        }
        OpKind::BroadcastTo => vec![Some(up.sum_to_shape(&parents[0].shape())?)],
        OpKind::SumToShape => vec![Some(up.broadcast_to(&parents[0].shape())?)],
        OpKind::Conv2d(cfg) => {
            let di = conv_input_vjp_op(&parents[1], up, *cfg);
            let dk = conv_kernel_vjp_op(&parents[0], up, *cfg);
            vec![Some(di), Some(dk)]
        }
        // node = input_vjp(kernel, gout): linear in both.
        OpKind::ConvInputVjp(cfg) => {
            let dk = conv_kernel_vjp_op(up, &parents[1], *cfg);
            let dg = conv2d_with_cfg(up, &parents[0], *cfg)?;
            vec![Some(dk), Some(dg)]
        }
        // node = kernel_vjp(input, gout): linear in both.
        OpKind::ConvKernelVjp(cfg) => {
            let di = conv_input_vjp_op(up, &parents[1], *cfg);
            let dg = conv2d_with_cfg(&parents[0], up, *cfg)?;
            vec![Some(di), Some(dg)]
        }
        OpKind::BilinearResize => {
            let ps = parents[0].shape();
            vec![Some(bilinear_adjoint_op(up, ps[1], ps[2]))]
        }
        OpKind::BilinearAdjoint => {
            let ps = parents[0].shape();
            vec![Some(up.bilinear_resize(ps[1], ps[2])?)]
        }
    };
    Ok(g)
}

/// Walk the graph root-first, producing cotangents. By the time a node is
/// processed every consumer has already contributed, so entries not named in
/// `keep` are dropped right after use to bound memory.
fn run_walk<T: Scalar>(
    root: &Tensor<T>,
    seed: Tensor<T>,
    keep: &HashSet<u64>,
) -> Result<HashMap<u64, Tensor<T>>> {
    let order = topo_order(root);
    let mut grads: HashMap<u64, Tensor<T>> = HashMap::new();
    grads.insert(root.id(), seed);
    for node in &order {
        let Some(op) = &node.node.op else {
            continue; // leaf: keep its accumulated grad entry
        };
        let up = if keep.contains(&node.id()) {
            match grads.get(&node.id()) {
                Some(g) => g.clone(),
                None => continue,
            }
        } else {
            match grads.remove(&node.id()) {
                Some(g) => g,
                None => continue,
            }
        };
        let contribs = vjp(&op.kind, node, &op.parents, &up)?;
        for (parent, contrib) in op.parents.iter().zip(contribs) {
            if !parent.requires_grad_flag() {
                continue;
            }
            if let Some(c) = contrib {
                match grads.get(&parent.id()) {
                    Some(existing) => {
                        let summed = existing.add(&c)?;
                        grads.insert(parent.id(), summed);
                    }
                    None => {
                        grads.insert(parent.id(), c);
                    }
                }
            }
        }
    }
    Ok(grads)
}

/// Backpropagate from a scalar loss, accumulating into the `.grad` buffer of
/// every reachable `requires_grad` leaf. The walk itself is not recorded.
pub fn backward<T: Scalar>(loss: &Tensor<T>) -> Result<()> {
    if loss.numel() != 1 {
        return Err(TensorError::NonScalarLoss {
            shape: loss.shape(),
        });
    }
    if !loss.requires_grad_flag() {
        return Ok(());
    }
    let grads = no_grad(|| run_walk(loss, Tensor::ones(&loss.shape()), &HashSet::new()))?;
    for node in topo_order(loss) {
        if node.is_leaf() && node.requires_grad_flag() {
            if let Some(g) = grads.get(&node.id()) {
                // raw sum in case the graph reused a leaf with broadcasting
                let data = if g.shape() == node.shape() {
                    g.data()
                } else {
                    sum_to_shape_raw(&g.shape(), &g.data(), &node.shape())
                };
                node.accumulate_grad(&data);
            }
        }
    }
    Ok(())
}

/// Gradients of a scalar `output` with respect to `wrt`. With
/// `create_graph`, the returned tensors carry their own history and can be
/// differentiated again. Unreachable entries come back as zeros.
pub fn grad<T: Scalar>(
    output: &Tensor<T>,
    wrt: &[&Tensor<T>],
    create_graph: bool,
) -> Result<Vec<Tensor<T>>> {
    if output.numel() != 1 {
        return Err(TensorError::NonScalarLoss {
            shape: output.shape(),
        });
    }
    let seed = Tensor::ones(&output.shape());
    let keep: HashSet<u64> = wrt.iter().map(|t| t.id()).collect();
    let grads = if create_graph {
        run_walk(output, seed, &keep)?
    } else {
        no_grad(|| run_walk(output, seed, &keep))?
    };
    Ok(wrt
        .iter()
        .map(|t| match grads.get(&t.id()) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&t.shape()),
        })
        .collect())
}
