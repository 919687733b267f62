//! Property tests for the normalization and support invariants.

use proptest::prelude::*;
use vsp_tensor::Tensor;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_sums_to_one(vals in prop::collection::vec(-30.0f32..30.0, 2..40)) {
        let n = vals.len();
        let t = Tensor::<f32>::from_vec(&[n], vals).unwrap();
        let s = t.softmax(0).unwrap();
        let total: f32 = s.data().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-6);
        prop_assert!(s.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn layer_norm_moments(
        vals in prop::collection::vec(-5.0f64..5.0, 8..64),
        spread in 0.5f64..4.0,
    ) {
        let n = vals.len();
        // guarantee non-degenerate variance
        let vals: Vec<f64> = vals
            .iter()
            .enumerate()
            .map(|(i, &v)| v + spread * (i % 2) as f64)
            .collect();
        let t = Tensor::<f64>::from_vec(&[n], vals).unwrap();
        let out = t.layer_norm(0, 1e-5).unwrap().data();
        let mean: f64 = out.iter().sum::<f64>() / n as f64;
        let var: f64 = out.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        prop_assert!(mean.abs() < 1e-5, "mean {mean}");
        prop_assert!((var - 1.0).abs() < 1e-3, "var {var}");
    }

    #[test]
    fn conv_impulse_support_is_dilation_lattice(
        d in 1usize..=8,
        kvals in prop::collection::vec(0.25f32..2.0, 9),
    ) {
        let n = 2 * 8 * 1 + 1 + 16; // big enough for any d <= 8
        let c = n / 2;
        let mut img = vec![0.0f32; n * n];
        img[c * n + c] = 1.0;
        let x = Tensor::<f32>::from_vec(&[1, n, n], img).unwrap();
        let k = Tensor::<f32>::from_vec(&[1, 3, 3, 1], kvals).unwrap();
        let out = x.conv2d(&k, 1, d).unwrap().data();
        let mut support = Vec::new();
        for y in 0..n {
            for xx in 0..n {
                if out[y * n + xx] != 0.0 {
                    support.push((y as isize - c as isize, xx as isize - c as isize));
                }
            }
        }
        let di = d as isize;
        let mut expected = Vec::new();
        for dy in [-di, 0, di] {
            for dx in [-di, 0, di] {
                expected.push((dy, dx));
            }
        }
        prop_assert_eq!(support, expected);
    }
}
