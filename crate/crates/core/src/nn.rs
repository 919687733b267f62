//! Layer building blocks and parameter bookkeeping.

use sha2::{Digest, Sha256};
use vsp_tensor::{fully_connected, rng as trng, Checkpoint, Scalar, Tensor};

use crate::error::{CoreError, Result};

/// Ordered, named collection of trainable tensors. The order is the
/// optimizer's iteration order, so it must be construction-deterministic.
pub struct ParamSet<T: Scalar> {
    items: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        ParamSet { items: Vec::new() }
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, t: &Tensor<T>) {
        self.items.push((name.into(), t.clone()));
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &(String, Tensor<T>)> {
        self.items.iter()
    }

    pub fn count_scalars(&self) -> usize {
        self.items.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn set_requires_grad(&self, flag: bool) {
        for (_, t) in &self.items {
            t.clone().requires_grad(flag);
        }
    }

    pub fn zero_grads(&self) {
        for (_, t) in &self.items {
            t.zero_grad();
        }
    }

    /// SHA-256 over the f32 bytes of every tensor, in order. Used to assert
    /// frozen components stay frozen.
    pub fn weight_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for (name, t) in &self.items {
            hasher.update(name.as_bytes());
            for v in t.data() {
                hasher.update((v.to_f64() as f32).to_le_bytes());
            }
        }
        hex_string(&hasher.finalize())
    }

    pub fn save_into(&self, ck: &mut Checkpoint) {
        for (name, t) in &self.items {
            ck.insert(name, t);
        }
    }

    pub fn load_from(&self, ck: &Checkpoint) -> Result<()> {
        for (name, t) in &self.items {
            ck.load_into(name, t).map_err(CoreError::Tensor)?;
        }
        Ok(())
    }
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Anything with named parameters.
pub trait Module<T: Scalar> {
    fn collect_params(&self, prefix: &str, out: &mut ParamSet<T>);

    fn params(&self, prefix: &str) -> ParamSet<T> {
        let mut set = ParamSet::new();
        self.collect_params(prefix, &mut set);
        set
    }
}

/// Column-wise fully connected layer: out = W x + b for x of shape
/// (in_dim, m).
pub struct Linear<T: Scalar> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(seed: u64, name: &str, in_dim: usize, out_dim: usize) -> Self {
        let mut rng = trng::stream(seed, name, 0);
        Linear {
            w: trng::init_weights::<T>(&mut rng, &[out_dim, in_dim], in_dim).requires_grad(true),
            b: Tensor::zeros(&[out_dim, 1]).requires_grad(true),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(fully_connected(x, &self.w, &self.b)?)
    }
}

impl<T: Scalar> Module<T> for Linear<T> {
    fn collect_params(&self, prefix: &str, out: &mut ParamSet<T>) {
        out.add(format!("{prefix}/w"), &self.w);
        out.add(format!("{prefix}/b"), &self.b);
    }
}

/// Fully connected layer for the time-augmented code matrix: channel mixing
/// W (d x d) after a learned column projection P ((n+1) x n), so a
/// d x (n+1) input comes back as d x n. Bias is per-channel.
pub struct AugLinear<T: Scalar> {
    pub w: Tensor<T>,
    pub p: Tensor<T>,
    pub b: Tensor<T>,
}

impl<T: Scalar> AugLinear<T> {
    pub fn new(seed: u64, name: &str, dim: usize, cols_in: usize, cols_out: usize) -> Self {
        let mut rng = trng::stream(seed, name, 0);
        AugLinear {
            w: trng::init_weights::<T>(&mut rng, &[dim, dim], dim).requires_grad(true),
            p: trng::init_weights::<T>(&mut rng, &[cols_in, cols_out], cols_in)
                .requires_grad(true),
            b: Tensor::zeros(&[dim, 1]).requires_grad(true),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let projected = x.matmul(&self.p)?;
        Ok(self.w.matmul(&projected)?.add(&self.b)?)
    }
}

impl<T: Scalar> Module<T> for AugLinear<T> {
    fn collect_params(&self, prefix: &str, out: &mut ParamSet<T>) {
        out.add(format!("{prefix}/w"), &self.w);
        out.add(format!("{prefix}/p"), &self.p);
        out.add(format!("{prefix}/b"), &self.b);
    }
}

/// Plain (unstyled) convolution layer with bias.
pub struct Conv<T: Scalar> {
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub dilation: usize,
}

impl<T: Scalar> Conv<T> {
    pub fn new(
        seed: u64,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        dilation: usize,
    ) -> Self {
        let mut rng = trng::stream(seed, name, 0);
        let fan_in = c_in * k * k;
        Conv {
            kernel: trng::init_weights::<T>(&mut rng, &[c_out, k, k, c_in], fan_in)
                .requires_grad(true),
            bias: Tensor::zeros(&[c_out, 1, 1]).requires_grad(true),
            stride,
            dilation,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(x.conv2d(&self.kernel, self.stride, self.dilation)?
            .add(&self.bias)?)
    }
}

impl<T: Scalar> Module<T> for Conv<T> {
    fn collect_params(&self, prefix: &str, out: &mut ParamSet<T>) {
        out.add(format!("{prefix}/kernel"), &self.kernel);
        out.add(format!("{prefix}/bias"), &self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_shapes_and_determinism() {
        let l1 = Linear::<f32>::new(3, "lin", 4, 6);
        let l2 = Linear::<f32>::new(3, "lin", 4, 6);
        assert_eq!(l1.w.data(), l2.w.data(), "same seed, same init");
        let x = Tensor::<f32>::ones(&[4, 5]);
        let y = l1.forward(&x).unwrap();
        assert_eq!(y.shape(), vec![6, 5]);
    }

    #[test]
    fn aug_linear_reduces_columns() {
        let l = AugLinear::<f32>::new(1, "aug", 8, 5, 4);
        let x = Tensor::<f32>::ones(&[8, 5]);
        let y = l.forward(&x).unwrap();
        assert_eq!(y.shape(), vec![8, 4]);
    }

    #[test]
    fn weight_hash_tracks_changes() {
        let l = Linear::<f32>::new(3, "lin", 4, 4);
        let set = l.params("m");
        let h1 = set.weight_hash();
        assert_eq!(h1, l.params("m").weight_hash());
        l.w.update_data(|d| d[0] += 1.0);
        assert_ne!(h1, l.params("m").weight_hash());
    }

    #[test]
    fn param_set_checkpoint_roundtrip() {
        let l = Linear::<f32>::new(9, "lin", 3, 3);
        let mut ck = Checkpoint::new();
        l.params("x").save_into(&mut ck);
        let l2 = Linear::<f32>::new(10, "other", 3, 3);
        assert_ne!(l.w.data(), l2.w.data());
        l2.params("x").load_from(&ck).unwrap();
        assert_eq!(l.w.data(), l2.w.data());
    }
}
