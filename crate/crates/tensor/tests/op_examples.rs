//! Frozen per-op examples with oracle values computed independently of the
//! engine's own code paths.

use vsp_tensor::gradcheck::check_fn;
use vsp_tensor::{backward, mse, rng, Tensor};

#[test]
fn matmul_grad_is_row_broadcast_of_b_row_sums() {
    let mut r = rng::stream(42, "matmul_ex", 0);
    let a: Tensor<f64> = rng::randn_tensor(&mut r, &[5, 7]);
    let b: Tensor<f64> = rng::randn_tensor(&mut r, &[7, 3]);
    let a = a.requires_grad(true);
    let loss = a.matmul(&b).unwrap().sum_all().unwrap();
    backward(&loss).unwrap();
    // d/da sum(a.b) = broadcast of b's row sums across a's rows
    let bd = b.data();
    let mut row_sums = vec![0.0f64; 7];
    for k in 0..7 {
        for j in 0..3 {
            row_sums[k] += bd[k * 3 + j];
        }
    }
    let g = a.grad().unwrap();
    for i in 0..5 {
        for k in 0..7 {
            assert!((g[i * 7 + k] - row_sums[k]).abs() < 1e-12);
        }
    }
    // and the finite-difference oracle agrees
    let a2: Tensor<f64> = rng::randn_tensor(&mut r, &[5, 7]);
    let b2: Tensor<f64> = rng::randn_tensor(&mut r, &[7, 3]);
    let report = check_fn("matmul_example", &[a2, b2], |ins| {
        ins[0].matmul(&ins[1])?.sum_all()
    })
    .unwrap();
    assert!(report.passed, "{report}");
}

#[test]
fn conv_spec_case_grads_match_finite_differences() {
    let mut r = rng::stream(7, "conv_ex", 0);
    let x: Tensor<f64> = rng::randn_tensor(&mut r, &[4, 16, 16]);
    let k: Tensor<f64> = rng::randn_tensor(&mut r, &[8, 3, 3, 4]);
    let w: Tensor<f64> = rng::randn_tensor(&mut r, &[8, 16, 16]);
    let report = check_fn("conv_4x16x16_dil2", &[x, k], move |ins| {
        ins[0].conv2d(&ins[1], 1, 2)?.mul(&w)?.sum_all()
    })
    .unwrap();
    assert!(report.passed, "{report}");
}

#[test]
fn bilinear_checkerboard_matches_closed_form() {
    // independent 1-D align-corners=false weights for 2 -> 4
    fn taps(o: usize) -> [(usize, f64); 2] {
        let s = (o as f64 + 0.5) * 0.5 - 0.5;
        let x0 = s.floor();
        let f = s - x0;
        let i0 = (x0.max(0.0) as usize).min(1);
        let i1 = ((x0 + 1.0).max(0.0) as usize).min(1);
        [(i0, 1.0 - f), (i1, f)]
    }
    let board = [[0.0f64, 1.0], [1.0, 0.0]];
    let x = Tensor::<f32>::from_vec(&[1, 2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
    let out = x.bilinear_resize(4, 4).unwrap();
    let got = out.data();
    for oy in 0..4 {
        for ox in 0..4 {
            let mut expected = 0.0f64;
            for (iy, wy) in taps(oy) {
                for (ix, wx) in taps(ox) {
                    expected += wy * wx * board[iy][ix];
                }
            }
            let g = got[oy * 4 + ox] as f64;
            assert!(
                (g - expected).abs() < 1e-6,
                "({oy},{ox}): got {g}, expected {expected}"
            );
        }
    }
}

#[test]
fn bilinear_down_up_preserves_ramp_interior() {
    // linear ramp; border pixels clamp so only the interior is affine-exact
    let n = 16;
    let mut data = vec![0.0f32; n * n];
    for y in 0..n {
        for x in 0..n {
            data[y * n + x] = 0.1 + 0.03 * x as f32 + 0.02 * y as f32;
        }
    }
    let img = Tensor::<f32>::from_vec(&[1, n, n], data.clone()).unwrap();
    let down = img.bilinear_resize(n / 2, n / 2).unwrap();
    let up = down.bilinear_resize(n, n).unwrap();
    let got = up.data();
    for y in 2..n - 2 {
        for x in 2..n - 2 {
            assert!(
                (got[y * n + x] - data[y * n + x]).abs() < 1e-6,
                "interior ({y},{x})"
            );
        }
    }
}

#[test]
fn ops_are_deterministic_across_runs() {
    let mut r = rng::stream(3, "det", 0);
    let x: Tensor<f32> = rng::randn_tensor(&mut r, &[8, 24, 24]);
    let k: Tensor<f32> = rng::randn_tensor(&mut r, &[16, 3, 3, 8]);
    let a = x.conv2d(&k, 1, 2).unwrap().data();
    let b = x.conv2d(&k, 1, 2).unwrap().data();
    assert_eq!(a, b, "conv must be bit-identical across runs");
    let m1 = rng::randn_tensor::<f32>(&mut rng::stream(3, "det2", 0), &[64, 64]);
    let m2 = rng::randn_tensor::<f32>(&mut rng::stream(3, "det3", 0), &[64, 64]);
    assert_eq!(
        m1.matmul(&m2).unwrap().data(),
        m1.matmul(&m2).unwrap().data()
    );
}

#[test]
fn mse_basic_values() {
    let a = Tensor::<f32>::ones(&[2, 3]);
    let b = Tensor::<f32>::zeros(&[2, 3]);
    assert!((mse(&a, &a).unwrap().item() - 0.0).abs() < 1e-9);
    assert!((mse(&b, &a).unwrap().item() - 1.0).abs() < 1e-7);
    assert!(mse(&a, &Tensor::<f32>::ones(&[3, 2])).is_err());
}
