//! Style-conditioned convolutions: kernel modulation/demodulation, the
//! plain style layer, and the multi-dilation aggregation layer that merges
//! dilation-{1,2,4,8} branches sharing one style vector.

use vsp_tensor::{concat, Scalar, Tensor};

use crate::error::{CoreError, Result};
use crate::nn::{Linear, Module, ParamSet};

pub const SMART_DILATIONS: [usize; 4] = [1, 2, 4, 8];
const DEMOD_EPS: f64 = 1e-8;

/// Scale kernel taps per input channel by the style vector, then rescale
/// every output channel's kernel back to unit L2 norm.
pub fn modulate_demodulate<T: Scalar>(kernel: &Tensor<T>, style: &Tensor<T>) -> Result<Tensor<T>> {
    let ks = kernel.shape();
    if ks.len() != 4 {
        return Err(CoreError::Model(format!(
            "kernel must be (c_out,kh,kw,c_in), got {ks:?}"
        )));
    }
    let c_in = ks[3];
    let flat = if style.rank() == 2 && style.shape()[1] == 1 {
        style.reshape(&[style.shape()[0]])?
    } else {
        style.clone()
    };
    if flat.shape() != vec![c_in] {
        return Err(CoreError::Model(format!(
            "style length {:?} does not match c_in {c_in}",
            style.shape()
        )));
    }
    let modulated = kernel.mul(&flat)?;
    let sumsq = modulated
        .mul(&modulated)?
        .sum_to_shape(&[ks[0], 1, 1, 1])?;
    Ok(modulated.div(&sumsq.affine(1.0, DEMOD_EPS).sqrt())?)
}

/// Style layer: s = FC(prompt), demodulated 3x3 convolution, bias, leaky
/// relu. The prompt arrives as a (d, m) matrix and is flattened column-wise
/// into the style FC.
pub struct StyleConv<T: Scalar> {
    pub style_fc: Linear<T>,
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
    pub dilation: usize,
    prompt_dim: usize,
}

impl<T: Scalar> StyleConv<T> {
    pub fn new(
        seed: u64,
        name: &str,
        c_in: usize,
        c_out: usize,
        prompt_dim: usize,
        dilation: usize,
    ) -> Self {
        let mut rng = vsp_tensor::rng::stream(seed, &format!("{name}/kernel"), 0);
        StyleConv {
            style_fc: Linear::new(seed, &format!("{name}/style_fc"), prompt_dim, c_in),
            kernel: vsp_tensor::rng::init_weights::<T>(
                &mut rng,
                &[c_out, 3, 3, c_in],
                c_in * 9,
            )
            .requires_grad(true),
            bias: Tensor::zeros(&[c_out, 1, 1]).requires_grad(true),
            dilation,
            prompt_dim,
        }
    }

    pub fn style(&self, prompt: &Tensor<T>) -> Result<Tensor<T>> {
        let flat = prompt.reshape(&[self.prompt_dim, 1])?;
        self.style_fc.forward(&flat)
    }

    /// The conv stage alone (modulated conv + bias), before activation.
    pub fn conv_stage(&self, features: &Tensor<T>, prompt: &Tensor<T>) -> Result<Tensor<T>> {
        let s = self.style(prompt)?;
        let k = modulate_demodulate(&self.kernel, &s)?;
        Ok(features.conv2d(&k, 1, self.dilation)?.add(&self.bias)?)
    }

    pub fn forward(&self, features: &Tensor<T>, prompt: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.conv_stage(features, prompt)?.leaky_relu(0.2))
    }
}

impl<T: Scalar> Module<T> for StyleConv<T> {
    fn collect_params(&self, prefix: &str, out: &mut ParamSet<T>) {
        self.style_fc
            .collect_params(&format!("{prefix}/style_fc"), out);
        out.add(format!("{prefix}/kernel"), &self.kernel);
        out.add(format!("{prefix}/bias"), &self.bias);
    }
}

/// Style-modulated aggregation: four dilation branches with independent
/// base kernels share one style vector; their activated maps concatenate
/// channel-wise and a 3x3 convolution merges them back to `c_out`.
pub struct SmartLayer<T: Scalar> {
    pub style_fc: Linear<T>,
    pub branch_kernels: Vec<Tensor<T>>,
    pub branch_biases: Vec<Tensor<T>>,
    pub agg_kernel: Tensor<T>,
    pub agg_bias: Tensor<T>,
    prompt_dim: usize,
}

impl<T: Scalar> SmartLayer<T> {
    pub fn new(seed: u64, name: &str, c_in: usize, c_out: usize, prompt_dim: usize) -> Self {
        let mut kernels = Vec::new();
        let mut biases = Vec::new();
        for d in SMART_DILATIONS {
            let mut rng =
                vsp_tensor::rng::stream(seed, &format!("{name}/branch_{d}/kernel"), 0);
            kernels.push(
                vsp_tensor::rng::init_weights::<T>(&mut rng, &[c_out, 3, 3, c_in], c_in * 9)
                    .requires_grad(true),
            );
            biases.push(Tensor::zeros(&[c_out, 1, 1]).requires_grad(true));
        }
        let mut rng = vsp_tensor::rng::stream(seed, &format!("{name}/agg/kernel"), 0);
        SmartLayer {
            style_fc: Linear::new(seed, &format!("{name}/style_fc"), prompt_dim, c_in),
            branch_kernels: kernels,
            branch_biases: biases,
            agg_kernel: vsp_tensor::rng::init_weights::<T>(
                &mut rng,
                &[c_out, 3, 3, 4 * c_out],
                4 * c_out * 9,
            )
            .requires_grad(true),
            agg_bias: Tensor::zeros(&[c_out, 1, 1]).requires_grad(true),
            prompt_dim,
        }
    }

    pub fn style(&self, prompt: &Tensor<T>) -> Result<Tensor<T>> {
        let flat = prompt.reshape(&[self.prompt_dim, 1])?;
        self.style_fc.forward(&flat)
    }

    /// Per-dilation activated branch outputs.
    pub fn branches(&self, features: &Tensor<T>, prompt: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let s = self.style(prompt)?;
        let mut outs = Vec::with_capacity(SMART_DILATIONS.len());
        for (i, d) in SMART_DILATIONS.into_iter().enumerate() {
            let k = modulate_demodulate(&self.branch_kernels[i], &s)?;
            let y = features
                .conv2d(&k, 1, d)?
                .add(&self.branch_biases[i])?
                .leaky_relu(0.2);
            outs.push(y);
        }
        Ok(outs)
    }

    pub fn forward(&self, features: &Tensor<T>, prompt: &Tensor<T>) -> Result<Tensor<T>> {
        let branches = self.branches(features, prompt)?;
        let refs: Vec<&Tensor<T>> = branches.iter().collect();
        let stacked = concat(&refs, 0)?;
        Ok(stacked
            .conv2d(&self.agg_kernel, 1, 1)?
            .add(&self.agg_bias)?)
    }
}

impl<T: Scalar> Module<T> for SmartLayer<T> {
    fn collect_params(&self, prefix: &str, out: &mut ParamSet<T>) {
        self.style_fc
            .collect_params(&format!("{prefix}/style_fc"), out);
        for (i, d) in SMART_DILATIONS.into_iter().enumerate() {
            out.add(
                format!("{prefix}/branch_{d}/kernel"),
                &self.branch_kernels[i],
            );
            out.add(format!("{prefix}/branch_{d}/bias"), &self.branch_biases[i]);
        }
        out.add(format!("{prefix}/agg/kernel"), &self.agg_kernel);
        out.add(format!("{prefix}/agg/bias"), &self.agg_bias);
    }
}
