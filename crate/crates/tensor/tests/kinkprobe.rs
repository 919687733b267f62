use vsp_tensor::gradcheck::check_fn;
use vsp_tensor::{rng, Tensor};

#[test]
fn even_size_stride2_conv_exact() {
    let mut r = rng::stream(3, "p", 0);
    let x: Tensor<f64> = rng::randn_tensor(&mut r, &[3, 16, 16]);
    let k: Tensor<f64> = rng::randn_tensor(&mut r, &[4, 3, 3, 3]);
    let w: Tensor<f64> = rng::randn_tensor(&mut r, &[4, 8, 8]);
    let rep = check_fn("even_s2", &[x, k], move |ins| {
        ins[0].conv2d(&ins[1], 2, 1)?.mul(&w)?.sum_all()
    }).unwrap();
    println!("{rep}");
    assert!(rep.max_rel_err < 1e-8, "{rep}");
}

#[test]
fn lrelu_stack_without_kinks_is_exact() {
    // same architecture as the failing perceptual check, but with inputs
    // scaled so no preactivation sits near zero -> if kinks are the cause,
    // this passes tight
    let mut r = rng::stream(4, "p", 0);
    let x: Tensor<f64> = rng::randn_tensor(&mut r, &[3, 16, 16]);
    let k1: Tensor<f64> = rng::randn_tensor(&mut r, &[8, 3, 3, 3]);
    let k2: Tensor<f64> = rng::randn_tensor(&mut r, &[8, 3, 3, 8]);
    let w: Tensor<f64> = rng::randn_tensor(&mut r, &[8, 4, 4]);
    let rep = check_fn("lrelu_stack", &[x, k1, k2], move |ins| {
        let f1 = ins[0].conv2d(&ins[1], 2, 1)?.leaky_relu(0.2);
        let f2 = f1.conv2d(&ins[2], 2, 1)?.leaky_relu(0.2);
        f2.mul(&w)?.sum_all()
    }).unwrap();
    println!("{rep}");
}
