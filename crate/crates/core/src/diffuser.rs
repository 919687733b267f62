//! The noise predictor: four stacked temporal-aware code-to-code blocks.
//! Each block attends over the running codes with queries built from the
//! time-augmented initial codes, then applies a sigmoid gate (offset by +1)
//! and an additive bias path, both driven by two-layer perceptrons.

use vsp_tensor::{concat, Scalar, Tensor};

use crate::diffusion::NoisePredictor;
use crate::error::{CoreError, Result};
use crate::nn::{AugLinear, Linear, Module, ParamSet};

/// Sinusoidal embedding of t/T as one extra code column (d x 1). Frequency
/// pairs share sin/cos, so the norm is d/2 for every t.
pub fn embed_timestep<T: Scalar>(t: usize, t_total: usize, dim: usize) -> Result<Tensor<T>> {
    if t < 1 || t > t_total {
        return Err(CoreError::Model(format!(
            "timestep {t} out of range 1..={t_total}"
        )));
    }
    if dim % 2 != 0 {
        return Err(CoreError::Model("embedding dim must be even".into()));
    }
    let tau = t as f64 / t_total as f64;
    let mut data = Vec::with_capacity(dim);
    for p in 0..dim / 2 {
        let omega = 1.0 / 10000f64.powf(2.0 * p as f64 / dim as f64);
        data.push(T::from_f64((omega * tau).sin()));
        data.push(T::from_f64((omega * tau).cos()));
    }
    Ok(Tensor::from_vec(&[dim, 1], data)?)
}

pub struct TaccBlock<T: Scalar> {
    proj_q: AugLinear<T>,
    proj_k: Linear<T>,
    proj_v: Linear<T>,
    proj_qb: AugLinear<T>,
    proj_kb: Linear<T>,
    proj_vb: Linear<T>,
    gate_fc1: AugLinear<T>,
    gate_fc2: Linear<T>,
    bias_fc1: AugLinear<T>,
    bias_fc2: Linear<T>,
    ln_gamma: Tensor<T>,
    ln_beta: Tensor<T>,
    dim: usize,
    n_styles: usize,
}

impl<T: Scalar> TaccBlock<T> {
    pub fn new(seed: u64, name: &str, dim: usize, n_styles: usize) -> Self {
        let sub = |suffix: &str| format!("{name}/{suffix}");
        TaccBlock {
            proj_q: AugLinear::new(seed, &sub("q"), dim, n_styles + 1, n_styles),
            proj_k: Linear::new(seed, &sub("k"), dim, dim),
            proj_v: Linear::new(seed, &sub("v"), dim, dim),
            proj_qb: AugLinear::new(seed, &sub("qb"), dim, n_styles + 1, n_styles),
            proj_kb: Linear::new(seed, &sub("kb"), dim, dim),
            proj_vb: Linear::new(seed, &sub("vb"), dim, dim),
            gate_fc1: AugLinear::new(seed, &sub("gate1"), dim, n_styles + 1, n_styles),
            gate_fc2: Linear::new(seed, &sub("gate2"), dim, dim),
            bias_fc1: AugLinear::new(seed, &sub("bias1"), dim, n_styles + 1, n_styles),
            bias_fc2: Linear::new(seed, &sub("bias2"), dim, dim),
            ln_gamma: Tensor::ones(&[dim, 1]).requires_grad(true),
            ln_beta: Tensor::zeros(&[dim, 1]).requires_grad(true),
            dim,
            n_styles,
        }
    }

    /// Zero the gate/bias perceptron outputs (used by the init-reduction
    /// test: the block then collapses to 1.5 * LayerNorm(a)).
    pub fn zero_gate_bias(&self) {
        for t in [
            &self.gate_fc2.w,
            &self.gate_fc2.b,
            &self.bias_fc2.w,
            &self.bias_fc2.b,
        ] {
            t.update_data(|d| d.fill(T::ZERO));
        }
    }

    fn mlp(fc1: &AugLinear<T>, fc2: &Linear<T>, aug: &Tensor<T>) -> Result<Tensor<T>> {
        let h = fc1.forward(aug)?.leaky_relu(0.2);
        fc2.forward(&h)
    }

    /// The two attention maps plus gating and bias. Both softmax maps are
    /// row-normalized.
    pub fn forward(
        &self,
        gamma_prev: &Tensor<T>,
        w_hat: &Tensor<T>,
        t: usize,
        t_total: usize,
    ) -> Result<Tensor<T>> {
        let expect = vec![self.dim, self.n_styles];
        if gamma_prev.shape() != expect || w_hat.shape() != expect {
            return Err(CoreError::Model(format!(
                "tacc expects {expect:?}, got {:?} and {:?}",
                gamma_prev.shape(),
                w_hat.shape()
            )));
        }
        let t_col = embed_timestep::<T>(t, t_total, self.dim)?;
        let aug = concat(&[w_hat, &t_col], 1)?;

        let wq = self.proj_q.forward(&aug)?;
        let wk = self.proj_k.forward(gamma_prev)?;
        let wv = self.proj_v.forward(gamma_prev)?;
        let wqb = self.proj_qb.forward(&aug)?;
        let wkb = self.proj_kb.forward(gamma_prev)?;
        let wvb = self.proj_vb.forward(gamma_prev)?;

        // channel attention contracts over the N columns (kappa_1 = sqrt N)
        let kappa1 = (self.n_styles as f64).sqrt();
        let chan_map = wq
            .transpose()?
            .matmul(&wk)?
            .scale(1.0 / kappa1)
            .softmax(1)?;
        let chan = wv.matmul(&chan_map)?;

        // position attention contracts over the d channels (kappa_2 = sqrt d)
        let kappa2 = (self.dim as f64).sqrt();
        let pos_map = wqb
            .matmul(&wkb.transpose()?)?
            .scale(1.0 / kappa2)
            .softmax(1)?;
        let pos = pos_map.matmul(&wvb)?;

        let a = chan.add(&pos)?;
        let normed = a
            .layer_norm(0, 1e-5)?
            .mul(&self.ln_gamma)?
            .add(&self.ln_beta)?;

        let gate = Self::mlp(&self.gate_fc1, &self.gate_fc2, &aug)?
            .sigmoid()
            .affine(1.0, 1.0);
        let bias = Self::mlp(&self.bias_fc1, &self.bias_fc2, &aug)?.leaky_relu(0.2);
        Ok(normed.mul(&gate)?.add(&bias)?)
    }

    /// Row-sums of both attention maps (diagnostics for the normalization
    /// contract).
    pub fn attention_row_sums(
        &self,
        gamma_prev: &Tensor<T>,
        w_hat: &Tensor<T>,
        t: usize,
        t_total: usize,
    ) -> Result<(Vec<T>, Vec<T>)> {
        let t_col = embed_timestep::<T>(t, t_total, self.dim)?;
        let aug = concat(&[w_hat, &t_col], 1)?;
        let wq = self.proj_q.forward(&aug)?;
        let wk = self.proj_k.forward(gamma_prev)?;
        let wqb = self.proj_qb.forward(&aug)?;
        let wkb = self.proj_kb.forward(gamma_prev)?;
        let m1 = wq
            .transpose()?
            .matmul(&wk)?
            .scale(1.0 / (self.n_styles as f64).sqrt())
            .softmax(1)?;
        let m2 = wqb
            .matmul(&wkb.transpose()?)?
            .scale(1.0 / (self.dim as f64).sqrt())
            .softmax(1)?;
        let sums = |m: &Tensor<T>| {
            let s = m.shape();
            let d = m.data();
            (0..s[0])
                .map(|r| d[r * s[1]..(r + 1) * s[1]].iter().copied().sum())
                .collect::<Vec<T>>()
        };
        Ok((sums(&m1), sums(&m2)))
    }
}

impl<T: Scalar> Module<T> for TaccBlock<T> {
    fn collect_params(&self, prefix: &str, out: &mut ParamSet<T>) {
        self.proj_q.collect_params(&format!("{prefix}/q"), out);
        self.proj_k.collect_params(&format!("{prefix}/k"), out);
        self.proj_v.collect_params(&format!("{prefix}/v"), out);
        self.proj_qb.collect_params(&format!("{prefix}/qb"), out);
        self.proj_kb.collect_params(&format!("{prefix}/kb"), out);
        self.proj_vb.collect_params(&format!("{prefix}/vb"), out);
        self.gate_fc1.collect_params(&format!("{prefix}/gate1"), out);
        self.gate_fc2.collect_params(&format!("{prefix}/gate2"), out);
        self.bias_fc1.collect_params(&format!("{prefix}/bias1"), out);
        self.bias_fc2.collect_params(&format!("{prefix}/bias2"), out);
        out.add(format!("{prefix}/ln_gamma"), &self.ln_gamma);
        out.add(format!("{prefix}/ln_beta"), &self.ln_beta);
    }
}

/// Four chained TACC blocks; the output of the last is the noise estimate.
pub struct CodeDiffuser<T: Scalar> {
    pub blocks: Vec<TaccBlock<T>>,
    pub dim: usize,
    pub n_styles: usize,
    pub t_total: usize,
}

impl<T: Scalar> CodeDiffuser<T> {
    pub const NUM_BLOCKS: usize = 4;

    pub fn new(seed: u64, dim: usize, n_styles: usize, t_total: usize) -> Self {
        let blocks = (0..Self::NUM_BLOCKS)
            .map(|i| TaccBlock::new(seed, &format!("diffuser/block{i}"), dim, n_styles))
            .collect();
        CodeDiffuser {
            blocks,
            dim,
            n_styles,
            t_total,
        }
    }
}

impl<T: Scalar> Module<T> for CodeDiffuser<T> {
    fn collect_params(&self, prefix: &str, out: &mut ParamSet<T>) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.collect_params(&format!("{prefix}/block{i}"), out);
        }
    }
}

impl<T: Scalar> NoisePredictor<T> for CodeDiffuser<T> {
    fn predict(&self, w_t: &Tensor<T>, w_hat: &Tensor<T>, t: usize) -> Result<Tensor<T>> {
        let mut gamma = w_t.clone();
        for block in &self.blocks {
            gamma = block.forward(&gamma, w_hat, t, self.t_total)?;
        }
        Ok(gamma)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use vsp_tensor::rng as trng;

    #[test]
    fn embed_norm_constant_and_injective() {
        let t_total = 16;
        let dim = 32;
        let mut embs = Vec::new();
        for t in 1..=t_total {
            let e = embed_timestep::<f64>(t, t_total, dim).unwrap();
            let norm2: f64 = e.data().iter().map(|v| v * v).sum();
            assert!(
                (norm2 - dim as f64 / 2.0).abs() < 1e-6,
                "norm^2 {norm2} should be d/2"
            );
            embs.push(e.data());
        }
        let mut min_l2 = f64::INFINITY;
        for i in 0..embs.len() {
            for j in i + 1..embs.len() {
                let d2: f64 = embs[i]
                    .iter()
                    .zip(&embs[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                min_l2 = min_l2.min(d2.sqrt());
            }
        }
        assert!(min_l2 > 0.0, "distinct t must embed distinctly");
        assert!(embed_timestep::<f32>(0, 4, 8).is_err());
        assert!(embed_timestep::<f32>(5, 4, 8).is_err());
    }

    #[test]
    fn embed_at_t_equals_total_is_tau_one() {
        let e = embed_timestep::<f64>(4, 4, 8).unwrap();
        assert!((e.data()[0] - 1f64.sin()).abs() < 1e-12);
        assert!((e.data()[1] - 1f64.cos()).abs() < 1e-12);
    }

    #[test]
    fn zero_gamma_with_zero_biases_leaves_only_bias_path() {
        let dim = 8;
        let n = 4;
        let block = TaccBlock::<f32>::new(3, "b", dim, n);
        let gamma = Tensor::<f32>::zeros(&[dim, n]);
        let w_hat: Tensor<f32> =
            trng::randn_tensor(&mut trng::stream(3, "wh", 0), &[dim, n]);
        // with zero k/v biases (default init) the attention output a is 0;
        // LayerNorm(0) = 0, so output = 0 * gate + bias path
        let t_col = embed_timestep::<f32>(2, 4, dim).unwrap();
        let aug = concat(&[&w_hat, &t_col], 1).unwrap();
        let bias_only = TaccBlock::mlp(&block.bias_fc1, &block.bias_fc2, &aug)
            .unwrap()
            .leaky_relu(0.2);
        let out = block.forward(&gamma, &w_hat, 2, 4).unwrap();
        for (o, b) in out.data().iter().zip(bias_only.data()) {
            assert!((o - b).abs() < 1e-5, "output must reduce to the bias path");
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let block = TaccBlock::<f32>::new(5, "b", 8, 4);
        let mut r = trng::stream(5, "x", 0);
        let gamma = trng::randn_tensor(&mut r, &[8, 4]);
        let w_hat = trng::randn_tensor(&mut r, &[8, 4]);
        let (s1, s2) = block.attention_row_sums(&gamma, &w_hat, 1, 4).unwrap();
        for v in s1.iter().chain(&s2) {
            assert!((v - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn gate_factor_stays_in_open_interval() {
        let block = TaccBlock::<f32>::new(7, "b", 8, 4);
        let mut r = trng::stream(7, "x", 0);
        let w_hat = trng::randn_tensor::<f32>(&mut r, &[8, 4]).scale(3.0);
        let t_col = embed_timestep::<f32>(1, 4, 8).unwrap();
        let aug = concat(&[&w_hat, &t_col], 1).unwrap();
        let gate = TaccBlock::mlp(&block.gate_fc1, &block.gate_fc2, &aug)
            .unwrap()
            .sigmoid()
            .affine(1.0, 1.0);
        for v in gate.data() {
            assert!(v > 1.0 && v < 2.0, "gate factor {v} outside (1,2)");
        }
    }

    #[test]
    fn init_reduction_closed_form() {
        // zeroed gate/bias MLP outputs: block == 1.5 * LayerNorm(a) with
        // unit gamma and zero beta
        let dim = 8;
        let n = 4;
        let block = TaccBlock::<f32>::new(11, "b", dim, n);
        block.zero_gate_bias();
        let mut r = trng::stream(11, "x", 0);
        let gamma = trng::randn_tensor(&mut r, &[dim, n]);
        let w_hat = trng::randn_tensor(&mut r, &[dim, n]);
        let out = block.forward(&gamma, &w_hat, 3, 4).unwrap();

        // rebuild a and its norm independently
        let t_col = embed_timestep::<f32>(3, 4, dim).unwrap();
        let aug = concat(&[&w_hat, &t_col], 1).unwrap();
        let wq = block.proj_q.forward(&aug).unwrap();
        let wk = block.proj_k.forward(&gamma).unwrap();
        let wv = block.proj_v.forward(&gamma).unwrap();
        let wqb = block.proj_qb.forward(&aug).unwrap();
        let wkb = block.proj_kb.forward(&gamma).unwrap();
        let wvb = block.proj_vb.forward(&gamma).unwrap();
        let chan = wv
            .matmul(
                &wq.transpose()
                    .unwrap()
                    .matmul(&wk)
                    .unwrap()
                    .scale(1.0 / (n as f64).sqrt())
                    .softmax(1)
                    .unwrap(),
            )
            .unwrap();
        let pos = wqb
            .matmul(&wkb.transpose().unwrap())
            .unwrap()
            .scale(1.0 / (dim as f64).sqrt())
            .softmax(1)
            .unwrap()
            .matmul(&wvb)
            .unwrap();
        let want = chan
            .add(&pos)
            .unwrap()
            .layer_norm(0, 1e-5)
            .unwrap()
            .scale(1.5);
        for (o, w) in out.data().iter().zip(want.data()) {
            assert!((o - w).abs() < 1e-5);
        }
    }

    #[test]
    fn predict_noise_shape_contract() {
        for (d, n) in [(8, 4), (64, 8)] {
            let diffuser = CodeDiffuser::<f32>::new(1, d, n, 4);
            let mut r = trng::stream(1, "x", 0);
            let w_t = trng::randn_tensor(&mut r, &[d, n]);
            let w_hat = trng::randn_tensor(&mut r, &[d, n]);
            let eps = diffuser.predict(&w_t, &w_hat, 2).unwrap();
            assert_eq!(eps.shape(), vec![d, n]);
        }
    }

    #[test]
    fn column_permutation_changes_output() {
        let diffuser = CodeDiffuser::<f32>::new(9, 8, 4, 4);
        let mut r = trng::stream(9, "x", 0);
        let w_t: Tensor<f32> = trng::randn_tensor(&mut r, &[8, 4]);
        let w_hat = trng::randn_tensor(&mut r, &[8, 4]);
        let out = diffuser.predict(&w_t, &w_hat, 2).unwrap();
        // swap first two columns of w_t
        let mut data = w_t.data();
        for row in 0..8 {
            data.swap(row * 4, row * 4 + 1);
        }
        let permuted = Tensor::from_vec(&[8, 4], data).unwrap();
        let out_p = diffuser.predict(&permuted, &w_hat, 2).unwrap();
        let diff: f32 = out
            .data()
            .iter()
            .zip(out_p.data())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(diff > 1e-3, "no spurious permutation invariance");
    }
}
