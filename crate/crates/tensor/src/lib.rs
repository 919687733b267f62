//! Minimal reverse-mode autodiff tensor engine.
//!
//! Single-threaded graph construction over immutable-value ops, with
//! data-parallel kernels whose reduction order is fixed so results are
//! bit-identical across runs and thread counts. Gradients of gradients work
//! (the backward pass can itself be recorded), which is what the R1 penalty
//! needs.

mod backward;
pub mod checkpoint;
mod error;
pub mod gradcheck;
mod ops;
pub mod rng;
mod scalar;
pub mod suite;
mod tensor;

pub use backward::{backward, grad};
pub use checkpoint::Checkpoint;
pub use error::{Result, TensorError};
pub use ops::compose::{fully_connected, mse};
pub use ops::shape_ops::concat;
pub use ops::ConvCfg;
pub use scalar::Scalar;
pub use tensor::{kink_sentinel_arm, kink_sentinel_take, no_grad, Tensor};

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let i2 = Tensor::<f32>::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let out = i2.matmul(&i2).unwrap();
        assert_eq!(out.data(), vec![1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn matmul_hand_case() {
        let a = Tensor::<f32>::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::<f32>::from_vec(&[2, 1], vec![0.0, 1.0]).unwrap();
        let out = a.matmul(&b).unwrap();
        assert_eq!(out.shape(), vec![2, 1]);
        assert_eq!(out.data(), vec![2.0, 4.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::<f32>::zeros(&[2, 3]);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "unexpected message: {msg}");
    }

    #[test]
    fn add_broadcast_bias() {
        let x = Tensor::<f32>::from_vec(&[2, 3], vec![1.0; 6]).unwrap();
        let b = Tensor::<f32>::from_vec(&[2, 1], vec![1.0, 2.0]).unwrap();
        let out = x.add(&b).unwrap();
        assert_eq!(out.data(), vec![2.0, 2.0, 2.0, 3.0, 3.0, 3.0]);
    }

    #[test]
    fn backward_accumulates_each_leaf_once() {
        let x = Tensor::<f32>::from_vec(&[2], vec![3.0, 4.0])
            .unwrap()
            .requires_grad(true);
        // y = sum(x * x + x): dy/dx = 2x + 1
        let y = x.mul(&x).unwrap().add(&x).unwrap().sum_all().unwrap();
        backward(&y).unwrap();
        assert_eq!(x.grad().unwrap(), vec![7.0, 9.0]);
        // a second backward on a fresh graph accumulates
        let y2 = x.sum_all().unwrap();
        backward(&y2).unwrap();
        assert_eq!(x.grad().unwrap(), vec![8.0, 10.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let x = Tensor::<f32>::ones(&[2]).requires_grad(true);
        let y = x.mul(&x).unwrap();
        assert!(matches!(
            backward(&y),
            Err(TensorError::NonScalarLoss { .. })
        ));
    }

    #[test]
    fn concat_shapes() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::<f32>::zeros(&[2, 5]);
        let out = concat(&[&a, &b], 1).unwrap();
        assert_eq!(out.shape(), vec![2, 8]);
    }

    #[test]
    fn fc_identity_passthrough() {
        let w = Tensor::<f32>::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::<f32>::zeros(&[2, 1]);
        let x = Tensor::<f32>::from_vec(&[2, 3], (0..6).map(|v| v as f32).collect()).unwrap();
        let out = fully_connected(&x, &w, &b).unwrap();
        assert_eq!(out.data(), x.data());
    }

    #[test]
    fn softmax_symmetry_and_stability() {
        let x = Tensor::<f32>::zeros(&[3]);
        let s = x.softmax(0).unwrap();
        for v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-6);
        }
        let big = Tensor::<f32>::from_vec(&[2], vec![1000.0, 0.0]).unwrap();
        let s = big.softmax(0).unwrap();
        assert!(s.all_finite());
        assert!((s.data()[0] - 1.0).abs() < 1e-6);
        assert!(s.data()[1].abs() < 1e-6);
    }

    #[test]
    fn layer_norm_examples() {
        let c = Tensor::<f32>::full(&[4], 5.0);
        let out = c.layer_norm(0, 1e-5).unwrap();
        for v in out.data() {
            assert!(v.abs() < 1e-6, "constant input should normalize to zero");
        }
        let two = Tensor::<f32>::from_vec(&[2], vec![1.0, 3.0]).unwrap();
        let out = two.layer_norm(0, 1e-5).unwrap();
        assert!((out.data()[0] + 1.0).abs() < 1e-2);
        assert!((out.data()[1] - 1.0).abs() < 1e-2);
    }

    #[test]
    fn activation_values() {
        let x = Tensor::<f32>::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        let l = x.leaky_relu(0.2).data();
        assert_eq!(l, vec![-0.2, 0.0, 2.0]);
        let s = Tensor::<f32>::scalar(0.0).sigmoid().item();
        assert!((s - 0.5).abs() < 1e-7);
    }

    #[test]
    fn conv_impulse_dilation1() {
        // 7x7 impulse at center, 3x3 kernel of ones
        let mut img = vec![0.0f32; 49];
        img[3 * 7 + 3] = 1.0;
        let x = Tensor::<f32>::from_vec(&[1, 7, 7], img).unwrap();
        let k = Tensor::<f32>::ones(&[1, 3, 3, 1]);
        let out = x.conv2d(&k, 1, 1).unwrap();
        let d = out.data();
        for y in 0..7 {
            for xx in 0..7 {
                let expected = if (2..=4).contains(&y) && (2..=4).contains(&xx) {
                    1.0
                } else {
                    0.0
                };
                assert_eq!(d[y * 7 + xx], expected, "at ({y},{xx})");
            }
        }
    }

    #[test]
    fn conv_impulse_dilation8() {
        let n = 17;
        let mut img = vec![0.0f32; n * n];
        img[8 * n + 8] = 1.0;
        let x = Tensor::<f32>::from_vec(&[1, n, n], img).unwrap();
        let k = Tensor::<f32>::ones(&[1, 3, 3, 1]);
        let out = x.conv2d(&k, 1, 8).unwrap();
        let d = out.data();
        let mut nonzero = Vec::new();
        for y in 0..n {
            for xx in 0..n {
                if d[y * n + xx] != 0.0 {
                    nonzero.push((y as isize - 8, xx as isize - 8));
                }
            }
        }
        let mut expected = Vec::new();
        for dy in [-8isize, 0, 8] {
            for dx in [-8isize, 0, 8] {
                expected.push((dy, dx));
            }
        }
        assert_eq!(nonzero, expected);
    }

    #[test]
    fn conv_rejects_even_kernel_and_zero_dilation() {
        let x = Tensor::<f32>::zeros(&[1, 4, 4]);
        let k = Tensor::<f32>::zeros(&[1, 2, 2, 1]);
        assert!(x.conv2d(&k, 1, 1).is_err());
        let k3 = Tensor::<f32>::zeros(&[1, 3, 3, 1]);
        assert!(x.conv2d(&k3, 1, 0).is_err());
    }

    #[test]
    fn bilinear_constant_preserved() {
        let x = Tensor::<f32>::full(&[1, 4, 4], 0.7);
        for &(h, w) in &[(8usize, 8usize), (2, 2), (5, 3)] {
            let out = x.bilinear_resize(h, w).unwrap();
            for v in out.data() {
                assert!((v - 0.7).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn bilinear_rejects_zero_extent() {
        let x = Tensor::<f32>::ones(&[1, 4, 4]);
        assert!(x.bilinear_resize(0, 4).is_err());
        assert!(x.bilinear_scale(0.1).is_ok()); // rounds to >= 1
        assert!(x.bilinear_scale(-1.0).is_err());
    }

    #[test]
    fn checkpoint_roundtrip_and_version_check() {
        let dir = std::env::temp_dir().join("vsp_tensor_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.vspt");
        let mut ck = Checkpoint::new();
        let t = Tensor::<f32>::from_vec(&[2, 2], vec![1.0, -2.5, 3.25, 0.0]).unwrap();
        ck.insert("a/b", &t);
        ck.write(&path).unwrap();
        let back = Checkpoint::read(&path).unwrap();
        let got: Tensor<f32> = back.get("a/b").unwrap();
        assert_eq!(got.shape(), vec![2, 2]);
        assert_eq!(got.data(), t.data());

        // corrupt the version field
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 99;
        std::fs::write(&path, &bytes).unwrap();
        assert!(Checkpoint::read(&path).is_err());
    }

    #[test]
    fn rng_streams_are_replayable_and_distinct() {
        let a: Vec<f32> = rng::randn_vec(&mut rng::stream(7, "x", 0), 4);
        let b: Vec<f32> = rng::randn_vec(&mut rng::stream(7, "x", 0), 4);
        let c: Vec<f32> = rng::randn_vec(&mut rng::stream(7, "x", 1), 4);
        let d: Vec<f32> = rng::randn_vec(&mut rng::stream(7, "y", 0), 4);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn detach_blocks_gradients() {
        let x = Tensor::<f64>::from_vec(&[2], vec![1.0, 2.0])
            .unwrap()
            .requires_grad(true);
        let y = x.detach().mul(&x).unwrap().sum_all().unwrap();
        backward(&y).unwrap();
        // d/dx (c * x) = c = [1, 2]
        assert_eq!(x.grad().unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn gradcheck_catches_corrupted_backward() {
        // f(x) = x + detach(0.1 x): value slope 1.1, recorded gradient 1.0
        let x = Tensor::<f64>::from_vec(&[3], vec![0.3, -0.7, 1.1]).unwrap();
        let report = gradcheck::check_fn("sabotaged", &[x], |ins| {
            ins[0].add(&ins[0].scale(0.1).detach())?.sum_all()
        })
        .unwrap();
        assert!(!report.passed, "harness must flag the wrong gradient");
    }
}
