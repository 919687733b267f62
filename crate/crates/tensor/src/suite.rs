//! The op-level finite-difference suite. Each differentiable op is checked
//! on freshly seeded random inputs; the readout is a weighted sum so that
//! misplaced elements cannot cancel. Inputs for non-smooth ops are nudged
//! away from their kinks.

use rand_chacha::ChaCha8Rng;

use crate::backward::grad;
use crate::error::Result;
use crate::gradcheck::{check_fn, check_fn_with, GradCheckReport};
use crate::ops::compose::{fully_connected, mse};
use crate::ops::shape_ops::concat;
use crate::rng;
use crate::tensor::Tensor;

fn rngs(seed: u64, name: &str) -> ChaCha8Rng {
    rng::stream(seed, name, 0)
}

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    rng::randn_tensor(rng, shape)
}

/// Random tensor with |x| >= margin, for ops with kinks or poles.
fn randn_away(rng: &mut ChaCha8Rng, shape: &[usize], margin: f64) -> Tensor<f64> {
    let t: Tensor<f64> = rng::randn_tensor(rng, shape);
    let data: Vec<f64> = t
        .data()
        .iter()
        .map(|&v| {
            if v.abs() < margin {
                if v >= 0.0 {
                    v + margin
                } else {
                    v - margin
                }
            } else {
                v
            }
        })
        .collect();
    Tensor::from_vec(&t.shape(), data).unwrap()
}

fn positive(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let t: Tensor<f64> = rng::randn_tensor(rng, shape);
    let data: Vec<f64> = t.data().iter().map(|&v| v.abs() + 0.5).collect();
    Tensor::from_vec(&t.shape(), data).unwrap()
}

/// Weighted-sum readout with fixed weights derived from the output shape.
fn readout(out: &Tensor<f64>, seed: u64) -> Result<Tensor<f64>> {
    let w = rng::randn_tensor::<f64>(&mut rng::stream(seed, "readout", 77), &out.shape());
    out.mul(&w)?.sum_all()
}

type CheckFn = Box<dyn Fn(u64) -> Result<GradCheckReport>>;

fn checks() -> Vec<(&'static str, CheckFn)> {
    let mut list: Vec<(&'static str, CheckFn)> = Vec::new();

    list.push((
        "add_broadcast",
        Box::new(|seed| {
            let mut r = rngs(seed, "add");
            let a = randn(&mut r, &[3, 4]);
            let b = randn(&mut r, &[3, 1]);
            check_fn("add_broadcast", &[a, b], move |ins| {
                readout(&ins[0].add(&ins[1])?, seed)
            })
        }),
    ));
    list.push((
        "sub_broadcast",
        Box::new(|seed| {
            let mut r = rngs(seed, "sub");
            let a = randn(&mut r, &[2, 3, 4]);
            let b = randn(&mut r, &[4]);
            check_fn("sub_broadcast", &[a, b], move |ins| {
                readout(&ins[0].sub(&ins[1])?, seed)
            })
        }),
    ));
    list.push((
        "mul_broadcast",
        Box::new(|seed| {
            let mut r = rngs(seed, "mul");
            let a = randn(&mut r, &[3, 4]);
            let b = randn(&mut r, &[1, 4]);
            check_fn("mul_broadcast", &[a, b], move |ins| {
                readout(&ins[0].mul(&ins[1])?, seed)
            })
        }),
    ));
    list.push((
        "div",
        Box::new(|seed| {
            let mut r = rngs(seed, "div");
            let a = randn(&mut r, &[3, 4]);
            let b = randn_away(&mut r, &[3, 1], 0.5);
            check_fn("div", &[a, b], move |ins| {
                readout(&ins[0].div(&ins[1])?, seed)
            })
        }),
    ));
    list.push((
        "neg_affine",
        Box::new(|seed| {
            let mut r = rngs(seed, "neg");
            let a = randn(&mut r, &[7]);
            check_fn("neg_affine", &[a], move |ins| {
                readout(&ins[0].neg().affine(1.7, -0.3), seed)
            })
        }),
    ));
    list.push((
        "exp",
        Box::new(|seed| {
            let mut r = rngs(seed, "exp");
            let a = randn(&mut r, &[6]);
            check_fn("exp", &[a], move |ins| readout(&ins[0].exp(), seed))
        }),
    ));
    list.push((
        "sqrt",
        Box::new(|seed| {
            let mut r = rngs(seed, "sqrt");
            let a = positive(&mut r, &[6]);
            check_fn("sqrt", &[a], move |ins| readout(&ins[0].sqrt(), seed))
        }),
    ));
    list.push((
        "sigmoid",
        Box::new(|seed| {
            let mut r = rngs(seed, "sigmoid");
            let a = randn(&mut r, &[6]);
            check_fn("sigmoid", &[a], move |ins| readout(&ins[0].sigmoid(), seed))
        }),
    ));
    list.push((
        "tanh",
        Box::new(|seed| {
            let mut r = rngs(seed, "tanh");
            let a = randn(&mut r, &[6]);
            check_fn("tanh", &[a], move |ins| readout(&ins[0].tanh(), seed))
        }),
    ));
    list.push((
        "softplus",
        Box::new(|seed| {
            let mut r = rngs(seed, "softplus");
            let a = randn(&mut r, &[6]);
            check_fn("softplus", &[a], move |ins| {
                readout(&ins[0].softplus(), seed)
            })
        }),
    ));
    list.push((
        "leaky_relu",
        Box::new(|seed| {
            let mut r = rngs(seed, "lrelu");
            let a = randn_away(&mut r, &[8], 0.05);
            check_fn("leaky_relu", &[a], move |ins| {
                readout(&ins[0].leaky_relu(0.2), seed)
            })
        }),
    ));
    list.push((
        "matmul",
        Box::new(|seed| {
            let mut r = rngs(seed, "matmul");
            let a = randn(&mut r, &[5, 7]);
            let b = randn(&mut r, &[7, 3]);
            check_fn("matmul", &[a, b], move |ins| {
                readout(&ins[0].matmul(&ins[1])?, seed)
            })
        }),
    ));
    list.push((
        "transpose",
        Box::new(|seed| {
            let mut r = rngs(seed, "transpose");
            let a = randn(&mut r, &[3, 5]);
            check_fn("transpose", &[a], move |ins| {
                readout(&ins[0].transpose()?, seed)
            })
        }),
    ));
    list.push((
        "reshape",
        Box::new(|seed| {
            let mut r = rngs(seed, "reshape");
            let a = randn(&mut r, &[3, 4]);
            check_fn("reshape", &[a], move |ins| {
                readout(&ins[0].reshape(&[2, 6])?, seed)
            })
        }),
    ));
    list.push((
        "concat",
        Box::new(|seed| {
            let mut r = rngs(seed, "concat");
            let a = randn(&mut r, &[2, 3]);
            let b = randn(&mut r, &[2, 5]);
            let c = randn(&mut r, &[2, 1]);
            check_fn("concat", &[a, b, c], move |ins| {
                readout(&concat(&[&ins[0], &ins[1], &ins[2]], 1)?, seed)
            })
        }),
    ));
    list.push((
        "slice",
        Box::new(|seed| {
            let mut r = rngs(seed, "slice");
            let a = randn(&mut r, &[3, 6]);
            check_fn("slice", &[a], move |ins| {
                readout(&ins[0].slice(1, 2, 3)?, seed)
            })
        }),
    ));
    list.push((
        "pad_zero",
        Box::new(|seed| {
            let mut r = rngs(seed, "pad");
            let a = randn(&mut r, &[3, 4]);
            check_fn("pad_zero", &[a], move |ins| {
                readout(&ins[0].pad_zero(0, 1, 2)?, seed)
            })
        }),
    ));
    list.push((
        "broadcast_to",
        Box::new(|seed| {
            let mut r = rngs(seed, "bcast");
            let a = randn(&mut r, &[3, 1]);
            check_fn("broadcast_to", &[a], move |ins| {
                readout(&ins[0].broadcast_to(&[2, 3, 4])?, seed)
            })
        }),
    ));
    list.push((
        "sum_to_shape",
        Box::new(|seed| {
            let mut r = rngs(seed, "sumshape");
            let a = randn(&mut r, &[2, 3, 4]);
            check_fn("sum_to_shape", &[a], move |ins| {
                readout(&ins[0].sum_to_shape(&[3, 1])?, seed)
            })
        }),
    ));
    list.push((
        "softmax",
        Box::new(|seed| {
            let mut r = rngs(seed, "softmax");
            let a = randn(&mut r, &[4, 5]);
            check_fn("softmax", &[a], move |ins| {
                let s0 = ins[0].softmax(0)?;
                let s1 = ins[0].softmax(1)?;
                readout(&s0, seed)?.add(&readout(&s1, seed.wrapping_add(1))?)
            })
        }),
    ));
    list.push((
        "layer_norm",
        Box::new(|seed| {
            let mut r = rngs(seed, "layernorm");
            // wider spread keeps 1/sigma^3 curvature terms small enough for
            // the 1e-3 finite-difference step
            let a = randn(&mut r, &[8, 3]).scale(2.5);
            check_fn("layer_norm", &[a], move |ins| {
                readout(&ins[0].layer_norm(0, 1e-5)?, seed)
            })
        }),
    ));
    list.push((
        "fully_connected",
        Box::new(|seed| {
            let mut r = rngs(seed, "fc");
            let x = randn(&mut r, &[4, 3]);
            let w = randn(&mut r, &[5, 4]);
            let b = randn(&mut r, &[5, 1]);
            check_fn("fully_connected", &[x, w, b], move |ins| {
                readout(&fully_connected(&ins[0], &ins[1], &ins[2])?, seed)
            })
        }),
    ));
    list.push((
        "mse",
        Box::new(|seed| {
            let mut r = rngs(seed, "mse");
            let a = randn(&mut r, &[3, 4]);
            let b = randn(&mut r, &[3, 4]);
            check_fn("mse", &[a, b], move |ins| mse(&ins[0], &ins[1]))
        }),
    ));
    list.push((
        "conv2d_s1_d1",
        Box::new(|seed| {
            let mut r = rngs(seed, "conv11");
            let x = randn(&mut r, &[3, 6, 6]);
            let k = randn(&mut r, &[4, 3, 3, 3]);
            check_fn("conv2d_s1_d1", &[x, k], move |ins| {
                readout(&ins[0].conv2d(&ins[1], 1, 1)?, seed)
            })
        }),
    ));
    list.push((
        "conv2d_s2_d1",
        Box::new(|seed| {
            let mut r = rngs(seed, "conv21");
            let x = randn(&mut r, &[3, 7, 7]);
            let k = randn(&mut r, &[2, 3, 3, 3]);
            check_fn("conv2d_s2_d1", &[x, k], move |ins| {
                readout(&ins[0].conv2d(&ins[1], 2, 1)?, seed)
            })
        }),
    ));
    list.push((
        "conv2d_s1_d2",
        Box::new(|seed| {
            let mut r = rngs(seed, "conv12");
            let x = randn(&mut r, &[2, 8, 8]);
            let k = randn(&mut r, &[3, 3, 3, 2]);
            check_fn("conv2d_s1_d2", &[x, k], move |ins| {
                readout(&ins[0].conv2d(&ins[1], 1, 2)?, seed)
            })
        }),
    ));
    list.push((
        "conv2d_1x1",
        Box::new(|seed| {
            let mut r = rngs(seed, "conv1x1");
            let x = randn(&mut r, &[3, 4, 4]);
            let k = randn(&mut r, &[2, 1, 1, 3]);
            check_fn("conv2d_1x1", &[x, k], move |ins| {
                readout(&ins[0].conv2d(&ins[1], 1, 1)?, seed)
            })
        }),
    ));
    list.push((
        "bilinear_up",
        Box::new(|seed| {
            let mut r = rngs(seed, "bilup");
            let x = randn(&mut r, &[2, 4, 4]);
            check_fn("bilinear_up", &[x], move |ins| {
                readout(&ins[0].bilinear_resize(8, 8)?, seed)
            })
        }),
    ));
    list.push((
        "bilinear_down",
        Box::new(|seed| {
            let mut r = rngs(seed, "bildown");
            let x = randn(&mut r, &[2, 6, 6]);
            check_fn("bilinear_down", &[x], move |ins| {
                readout(&ins[0].bilinear_resize(3, 3)?, seed)
            })
        }),
    ));
    list.push((
        "bilinear_rational",
        Box::new(|seed| {
            let mut r = rngs(seed, "bilrat");
            let x = randn(&mut r, &[1, 5, 5]);
            check_fn("bilinear_rational", &[x], move |ins| {
                readout(&ins[0].bilinear_resize(3, 7)?, seed)
            })
        }),
    ));
    // Second-order: the checked function itself contains a create_graph
    // backward, the same construction the R1 penalty uses. These
    // compositions square the curvature, so the probe step is smaller.
    list.push((
        "double_backward_mlp",
        Box::new(|seed| {
            let mut r = rngs(seed, "dd_mlp");
            let x = randn(&mut r, &[3, 1]);
            let w = randn(&mut r, &[3, 3]);
            check_fn_with("double_backward_mlp", &[x, w], 1e-4, move |ins| {
                let y = ins[1].matmul(&ins[0])?.tanh().sum_all()?;
                let gx = grad(&y, &[&ins[0]], true)?.remove(0);
                readout(&gx.mul(&gx)?, seed)
            })
        }),
    ));
    list.push((
        "double_backward_conv",
        Box::new(|seed| {
            let mut r = rngs(seed, "dd_conv");
            let x = randn(&mut r, &[2, 5, 5]);
            let k = randn(&mut r, &[2, 3, 3, 2]);
            check_fn_with("double_backward_conv", &[x, k], 1e-4, move |ins| {
                let y = ins[0].conv2d(&ins[1], 2, 1)?.tanh().sum_all()?;
                let gx = grad(&y, &[&ins[0]], true)?.remove(0);
                readout(&gx.mul(&gx)?, seed)
            })
        }),
    ));
    list
}

/// Run every op check over `n_seeds` seeds; one report per op with the
/// worst relative error observed.
pub fn op_suite(n_seeds: u64) -> Vec<GradCheckReport> {
    let mut reports = Vec::new();
    for (name, check) in checks() {
        let mut worst = GradCheckReport {
            name: name.to_string(),
            max_rel_err: 0.0,
            checked: 0,
            skipped: 0,
            passed: true,
        };
        for seed in 0..n_seeds {
            match check(seed) {
                Ok(rep) => {
                    worst.checked += rep.checked;
                    worst.skipped += rep.skipped;
                    if rep.max_rel_err > worst.max_rel_err {
                        worst.max_rel_err = rep.max_rel_err;
                    }
                    worst.passed &= rep.passed;
                }
                Err(e) => panic!("gradcheck {name} failed to run: {e}"),
            }
        }
        reports.push(worst);
    }
    reports
}
