//! Training objectives: noise-prediction MSE, a frozen random-feature
//! perceptual distance, a frozen embedding identity distance, and the
//! non-saturating adversarial pair with the R1 gradient penalty.

use vsp_tensor::{grad, mse, Scalar, Tensor};

use crate::error::{CoreError, Result};
use crate::nn::{Conv, Linear, Module, ParamSet};

/// Mean squared error between true and predicted noise.
pub fn diffusion_loss<T: Scalar>(eps: &Tensor<T>, eps_hat: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(mse(eps, eps_hat)?)
}

/// Frozen, seed-fixed 4-level conv pyramid; the perceptual distance is the
/// per-level feature MSE summed over levels.
pub struct PerceptualNet<T: Scalar> {
    levels: Vec<Conv<T>>,
}

impl<T: Scalar> PerceptualNet<T> {
    pub fn new(seed: u64) -> Self {
        let widths = [8usize, 16, 32, 64];
        let mut levels = Vec::new();
        let mut c_in = 3;
        for (i, &w) in widths.iter().enumerate() {
            levels.push(Conv::new(
                seed,
                &format!("perceptual/level{i}"),
                c_in,
                w,
                3,
                2,
                1,
            ));
            c_in = w;
        }
        let net = PerceptualNet { levels };
        net.params("perceptual").set_requires_grad(false);
        net
    }

    fn features(&self, image: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let mut feat = image.clone();
        let mut out = Vec::with_capacity(self.levels.len());
        for level in &self.levels {
            feat = level.forward(&feat)?.leaky_relu(0.2);
            out.push(feat.clone());
        }
        Ok(out)
    }

    pub fn loss(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        if a.shape() != b.shape() {
            return Err(CoreError::Model(format!(
                "perceptual loss shape mismatch: {:?} vs {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let fa = self.features(a)?;
        let fb = self.features(b)?;
        let mut total = Tensor::zeros(&[1]);
        for (x, y) in fa.iter().zip(&fb) {
            total = total.add(&mse(x, y)?)?;
        }
        Ok(total)
    }
}

impl<T: Scalar> Module<T> for PerceptualNet<T> {
    fn collect_params(&self, prefix: &str, out: &mut ParamSet<T>) {
        for (i, l) in self.levels.iter().enumerate() {
            l.collect_params(&format!("{prefix}/level{i}"), out);
        }
    }
}

/// Frozen embedder to a 64-vector. Luminance + per-image standardization
/// up front make the embedding respond to geometry much more than to color,
/// which is the property the identity objective needs.
pub struct IdentityNet<T: Scalar> {
    conv1: Conv<T>,
    conv2: Conv<T>,
    head: Linear<T>,
    resolution: usize,
}

impl<T: Scalar> IdentityNet<T> {
    pub const EMBED_DIM: usize = 64;

    pub fn new(seed: u64, resolution: usize) -> Self {
        let side = resolution / 4;
        let net = IdentityNet {
            conv1: Conv::new(seed, "identity/conv1", 1, 8, 3, 2, 1),
            conv2: Conv::new(seed, "identity/conv2", 8, 16, 3, 2, 1),
            head: Linear::new(seed, "identity/head", 16 * side * side, Self::EMBED_DIM),
            resolution,
        };
        net.params("identity").set_requires_grad(false);
        net
    }

    pub fn embed(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = image.shape();
        if shape != vec![3, self.resolution, self.resolution] {
            return Err(CoreError::Model(format!(
                "identity embedder expects (3,{r},{r}), got {shape:?}",
                r = self.resolution
            )));
        }
        // luminance
        let r = image.slice(0, 0, 1)?;
        let g = image.slice(0, 1, 1)?;
        let b = image.slice(0, 2, 1)?;
        let gray = r
            .scale(0.299)
            .add(&g.scale(0.587))?
            .add(&b.scale(0.114))?;
        // per-image standardization
        let n = gray.numel() as f64;
        let mean = gray.sum_all()?.scale(1.0 / n);
        let centered = gray.sub(&mean)?;
        let var = centered.mul(&centered)?.sum_all()?.scale(1.0 / n);
        let std = var.affine(1.0, 1e-8).sqrt();
        let norm = centered.div(&std)?;

        let f1 = self.conv1.forward(&norm)?.leaky_relu(0.2);
        let f2 = self.conv2.forward(&f1)?.leaky_relu(0.2);
        self.head.forward(&f2.reshape(&[f2.numel(), 1])?)
    }

    /// 1 - cosine similarity of the two embeddings, in [0, 2].
    pub fn loss(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        let ea = self.embed(a)?;
        let eb = self.embed(b)?;
        let na = ea.mul(&ea)?.sum_all()?;
        let nb = eb.mul(&eb)?.sum_all()?;
        if na.item().to_f64() < 1e-12 || nb.item().to_f64() < 1e-12 {
            return Err(CoreError::Model(
                "degenerate identity embedding (zero norm)".into(),
            ));
        }
        let dot = ea.mul(&eb)?.sum_all()?;
        let cos = dot.div(&na.sqrt().mul(&nb.sqrt())?)?;
        Ok(cos.neg().affine(1.0, 1.0))
    }
}

impl<T: Scalar> Module<T> for IdentityNet<T> {
    fn collect_params(&self, prefix: &str, out: &mut ParamSet<T>) {
        self.conv1.collect_params(&format!("{prefix}/conv1"), out);
        self.conv2.collect_params(&format!("{prefix}/conv2"), out);
        self.head.collect_params(&format!("{prefix}/head"), out);
    }
}

/// Generator side of the non-saturating logistic objective.
pub fn adversarial_g_loss<T: Scalar>(
    critic: impl Fn(&Tensor<T>) -> Result<Tensor<T>>,
    fake: &Tensor<T>,
) -> Result<Tensor<T>> {
    Ok(critic(fake)?.neg().softplus().sum_all()?)
}

/// Discriminator side: softplus(D(fake)) + softplus(-D(real)) plus the R1
/// penalty (gamma/2) |grad_real D(real)|^2, built with a recorded backward
/// so it is differentiable with respect to the critic's parameters.
/// Returns (total loss, r1 term).
pub fn adversarial_d_loss<T: Scalar>(
    critic: impl Fn(&Tensor<T>) -> Result<Tensor<T>>,
    fake_detached: &Tensor<T>,
    real: &Tensor<T>,
    gamma: f64,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let real_leaf = real.detach().requires_grad(true);
    let logit_real = critic(&real_leaf)?.sum_all()?;
    let grad_real = grad(&logit_real, &[&real_leaf], true)?.remove(0);
    let r1 = grad_real
        .mul(&grad_real)?
        .sum_all()?
        .scale(gamma / 2.0);
    let loss = critic(fake_detached)?
        .softplus()
        .sum_all()?
        .add(&logit_real.neg().softplus())?
        .add(&r1)?;
    Ok((loss, r1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::FaceParams;
    use vsp_tensor::gradcheck::check_fn;
    use vsp_tensor::rng as trng;

    #[test]
    fn diffusion_loss_values_and_gradcheck() {
        let e = Tensor::<f32>::ones(&[4, 2]);
        assert!(diffusion_loss(&e, &e).unwrap().item() < 1e-12);
        let z = Tensor::<f32>::zeros(&[4, 2]);
        assert!((diffusion_loss(&e, &z).unwrap().item() - 1.0).abs() < 1e-7);

        let mut r = trng::stream(1, "dl", 0);
        let a: Tensor<f64> = trng::randn_tensor(&mut r, &[4, 3]);
        let b: Tensor<f64> = trng::randn_tensor(&mut r, &[4, 3]);
        let report = check_fn("diffusion_loss", &[a, b], |ins| {
            vsp_tensor::mse(&ins[0], &ins[1])
        })
        .unwrap();
        assert!(report.passed, "{report}");
    }

    #[test]
    fn perceptual_loss_zero_symmetry_and_blend_monotone() {
        let net = PerceptualNet::<f32>::new(101);
        let mut r = trng::stream(2, "im", 0);
        let a: Tensor<f32> = trng::randn_tensor(&mut r, &[3, 32, 32]).scale(0.5);
        let b: Tensor<f32> = trng::randn_tensor(&mut r, &[3, 32, 32]).scale(0.5);
        assert!(net.loss(&a, &a).unwrap().item() < 1e-12, "identical -> 0");
        let ab = net.loss(&a, &b).unwrap().item();
        let ba = net.loss(&b, &a).unwrap().item();
        assert!((ab - ba).abs() < 1e-7, "symmetric");

        // blending a noisy image toward the target decreases the loss
        let clean = FaceParams::sample(&mut trng::stream(3, "f", 0))
            .render(32)
            .to_tensor::<f32>();
        let noise: Tensor<f32> = trng::randn_tensor(&mut r, &[3, 32, 32]).scale(0.6);
        let noisy = clean.add(&noise).unwrap();
        let mut last = f32::INFINITY;
        for step in 0..=4 {
            let lam = step as f64 * 0.25;
            let blend = noisy.scale(1.0 - lam).add(&clean.scale(lam)).unwrap();
            let l = net.loss(&blend, &clean).unwrap().item();
            assert!(l < last, "loss must decrease along the blend: {l} !< {last}");
            last = l;
        }
    }

    #[test]
    fn identity_loss_properties() {
        let net = IdentityNet::<f32>::new(102, 32);
        let mut r = trng::stream(4, "f", 0);
        let pa = FaceParams::sample(&mut r);
        let ia = pa.render(32).to_tensor::<f32>();
        assert!(net.loss(&ia, &ia).unwrap().item() < 1e-6);

        // bounds on random pairs
        for i in 0..5 {
            let p2 = FaceParams::sample(&mut trng::stream(5, "f2", i));
            let ib = p2.render(32).to_tensor::<f32>();
            let v = net.loss(&ia, &ib).unwrap().item();
            assert!((0.0..=2.0).contains(&v), "cosine distance bounds: {v}");
        }
    }

    #[test]
    fn identity_loss_prefers_same_geometry() {
        // same geometry / new colors must score lower on average than new
        // geometry / same colors
        let net = IdentityNet::<f32>::new(102, 32);
        let mut same_geo = 0.0f64;
        let mut diff_geo = 0.0f64;
        let n = 100;
        for i in 0..n {
            let mut r = trng::stream(6, "pair", i);
            let base = FaceParams::sample(&mut r);
            let recolored = base.with_colors(&mut r);
            let moved = base.with_geometry(&mut r);
            let ia = base.render(32).to_tensor::<f32>();
            let ib = recolored.render(32).to_tensor::<f32>();
            let ic = moved.render(32).to_tensor::<f32>();
            same_geo += net.loss(&ia, &ib).unwrap().item() as f64;
            diff_geo += net.loss(&ia, &ic).unwrap().item() as f64;
        }
        let (same_avg, diff_avg) = (same_geo / n as f64, diff_geo / n as f64);
        assert!(
            same_avg < diff_avg,
            "same-geometry pairs must embed closer: {same_avg} vs {diff_avg}"
        );
    }

    #[test]
    fn r1_closed_forms() {
        // constant critic: zero input gradient, r1 = 0
        let img: Tensor<f64> =
            trng::randn_tensor(&mut trng::stream(7, "i", 0), &[3, 8, 8]);
        let fake = img.scale(0.5);
        let constant =
            |_: &Tensor<f64>| -> Result<Tensor<f64>> { Ok(Tensor::<f64>::full(&[1, 1], 0.7)) };
        let (_, r1) = adversarial_d_loss(constant, &fake, &img, 10.0).unwrap();
        assert!(r1.item().abs() < 1e-12, "constant critic r1 = {}", r1.item());

        // linear critic <a, x>: r1 = (gamma/2) |a|^2 exactly
        let a: Tensor<f64> = trng::randn_tensor(&mut trng::stream(8, "a", 0), &[3, 8, 8]);
        let a2 = a.clone();
        let linear = move |x: &Tensor<f64>| -> Result<Tensor<f64>> {
            Ok(a2.mul(x)?.sum_all()?.reshape(&[1, 1])?)
        };
        let (_, r1) = adversarial_d_loss(linear, &fake, &img, 10.0).unwrap();
        let want: f64 = 5.0 * a.data().iter().map(|v| v * v).sum::<f64>();
        assert!(
            (r1.item() - want).abs() < 1e-6 * want.max(1.0),
            "linear critic r1 {} want {want}",
            r1.item()
        );
    }

    #[test]
    fn r1_double_backward_matches_finite_differences() {
        // tiny critic: conv stride 2 + lrelu + linear head; checked wrt its
        // weights through the full d-loss including the r1 term
        let mut r = trng::stream(9, "w", 0);
        let kernel: Tensor<f64> = trng::randn_tensor(&mut r, &[2, 3, 3, 3]);
        let head: Tensor<f64> = trng::randn_tensor(&mut r, &[1, 2 * 4 * 4]);
        let real: Tensor<f64> = trng::randn_tensor(&mut r, &[3, 8, 8]);
        let fake: Tensor<f64> = trng::randn_tensor(&mut r, &[3, 8, 8]);
        let report = vsp_tensor::gradcheck::check_fn_with(
            "adversarial_d_loss",
            &[kernel, head],
            1e-4,
            move |ins| {
                let k = ins[0].clone();
                let h = ins[1].clone();
                let critic = move |x: &Tensor<f64>| -> Result<Tensor<f64>> {
                    let f = x.conv2d(&k, 2, 1)?.leaky_relu(0.2);
                    Ok(h.matmul(&f.reshape(&[f.numel(), 1])?)?)
                };
                adversarial_d_loss(critic, &fake, &real, 10.0)
                    .map(|(loss, _)| loss)
                    .map_err(|e| vsp_tensor::TensorError::invalid("d_loss", e.to_string()))
            },
        )
        .unwrap();
        assert!(report.passed, "{report}");
    }

    #[test]
    fn g_loss_is_softplus_of_negated_logit() {
        let fake = Tensor::<f64>::full(&[3, 4, 4], 0.3);
        let critic =
            |x: &Tensor<f64>| -> Result<Tensor<f64>> { Ok(x.sum_all()?.reshape(&[1, 1])?) };
        let g = adversarial_g_loss(critic, &fake).unwrap().item();
        let logit = 0.3 * 48.0;
        let want = (1.0 + (-logit as f64).exp()).ln();
        assert!((g - want).abs() < 1e-9);
    }
}
