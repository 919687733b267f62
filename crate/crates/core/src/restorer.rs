//! The restoration auto-encoder: a style-prompted encoder/decoder pair with
//! mirrored widths, prior-feature fusion at the decoder's aggregation
//! sites, a fully-connected mapping network for random styles, and a
//! strided-conv discriminator.
//!
//! Encoder layers alternate aggregation (odd) and downsampling style convs
//! (even); decoder layers alternate upsampling style convs (odd) and
//! aggregation on fused features (even). Only aggregation-layer features
//! take part in skip connections, so mirror shapes line up exactly.

use vsp_tensor::{concat, Scalar, Tensor};

use crate::config::{ModelVariant, RunConfig};
use crate::error::{CoreError, Result};
use crate::nn::{Conv, Linear, Module, ParamSet};
use crate::styleops::{SmartLayer, StyleConv};

/// 4-layer fully connected stack mapping z to the random style.
pub struct MappingNetwork<T: Scalar> {
    layers: Vec<Linear<T>>,
}

impl<T: Scalar> MappingNetwork<T> {
    pub fn new(seed: u64, dim: usize) -> Self {
        let layers = (0..4)
            .map(|i| Linear::new(seed, &format!("mapping/fc{i}"), dim, dim))
            .collect();
        MappingNetwork { layers }
    }

    pub fn forward(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = z.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h)?;
            if i + 1 < self.layers.len() {
                h = h.leaky_relu(0.2);
            }
        }
        Ok(h)
    }
}

impl<T: Scalar> Module<T> for MappingNetwork<T> {
    fn collect_params(&self, prefix: &str, out: &mut ParamSet<T>) {
        for (i, l) in self.layers.iter().enumerate() {
            l.collect_params(&format!("{prefix}/fc{i}"), out);
        }
    }
}

/// Either a SMART aggregation layer or its plain style-conv stand-in.
enum PromptLayer<T: Scalar> {
    Smart(SmartLayer<T>),
    Plain(StyleConv<T>),
}

impl<T: Scalar> PromptLayer<T> {
    fn new(
        seed: u64,
        name: &str,
        c_in: usize,
        c_out: usize,
        prompt_dim: usize,
        variant: ModelVariant,
    ) -> Self {
        if variant == ModelVariant::ScOnly {
            PromptLayer::Plain(StyleConv::new(
                seed,
                &format!("{name}/sc"),
                c_in,
                c_out,
                prompt_dim,
                1,
            ))
        } else {
            PromptLayer::Smart(SmartLayer::new(
                seed,
                &format!("{name}/smart"),
                c_in,
                c_out,
                prompt_dim,
            ))
        }
    }

    fn forward(&self, x: &Tensor<T>, prompt: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            PromptLayer::Smart(s) => s.forward(x, prompt),
            PromptLayer::Plain(p) => p.forward(x, prompt),
        }
    }

    fn collect(&self, prefix: &str, out: &mut ParamSet<T>) {
        match self {
            PromptLayer::Smart(s) => s.collect_params(&format!("{prefix}/smart"), out),
            PromptLayer::Plain(p) => p.collect_params(&format!("{prefix}/sc"), out),
        }
    }

    pub fn as_smart(&self) -> Option<&SmartLayer<T>> {
        match self {
            PromptLayer::Smart(s) => Some(s),
            PromptLayer::Plain(_) => None,
        }
    }
}

/// Elementwise sum of the decoder feature, its encoder mirror, and the
/// prior feature.
pub fn fuse<T: Scalar>(
    de_prev: &Tensor<T>,
    en_mirror: &Tensor<T>,
    prior: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    if de_prev.shape() != en_mirror.shape() {
        return Err(CoreError::Model(format!(
            "fuse shape mismatch: {:?} vs {:?}",
            de_prev.shape(),
            en_mirror.shape()
        )));
    }
    let mut out = de_prev.add(en_mirror)?;
    if let Some(p) = prior {
        if p.shape() != de_prev.shape() {
            return Err(CoreError::Model(format!(
                "fuse prior shape mismatch: {:?} vs {:?}",
                p.shape(),
                de_prev.shape()
            )));
        }
        out = out.add(p)?;
    }
    Ok(out)
}

pub struct Encoder<T: Scalar> {
    stem: Conv<T>,
    layers: Vec<EncLayer<T>>,
    global_fc: Linear<T>,
    widths: Vec<usize>,
    resolution: usize,
    code_dim: usize,
}

enum EncLayer<T: Scalar> {
    Aggregation(PromptLayer<T>),
    Down(StyleConv<T>),
}

pub struct EncoderOutput<T: Scalar> {
    /// F_1 .. F_N (the stem F_0 is not part of the pyramid contract).
    pub features: Vec<Tensor<T>>,
    /// Global code, d x 2.
    pub global_code: Tensor<T>,
}

impl<T: Scalar> Encoder<T> {
    pub fn new(cfg: &RunConfig) -> Self {
        let n = cfg.num_styles;
        let w = &cfg.widths;
        let prompt_dim = 2 * cfg.code_dim; // [w0_i, z_hat]
        let mut layers = Vec::with_capacity(n);
        for i in 1..=n {
            let c_in = if i == 1 { w[0] } else { w[i - 2] };
            let c_out = w[i - 1];
            let name = format!("enc/layer{i}");
            if i % 2 == 1 {
                layers.push(EncLayer::Aggregation(PromptLayer::new(
                    cfg.seed,
                    &name,
                    c_in,
                    c_out,
                    prompt_dim,
                    cfg.model_variant,
                )));
            } else {
                layers.push(EncLayer::Down(StyleConv::new(
                    cfg.seed,
                    &format!("{name}/sc"),
                    c_in,
                    c_out,
                    prompt_dim,
                    1,
                )));
            }
        }
        let b = cfg.bottleneck_res();
        Encoder {
            stem: Conv::new(cfg.seed, "enc/stem", 3, w[0], 3, 1, 1),
            layers,
            global_fc: Linear::new(
                cfg.seed,
                "enc/global_fc",
                w[n - 1] * b * b,
                2 * cfg.code_dim,
            ),
            widths: w.clone(),
            resolution: cfg.resolution,
            code_dim: cfg.code_dim,
        }
    }

    /// Spatial side each layer operates at, i = 1..N.
    pub fn operating_sizes(&self) -> Vec<usize> {
        (1..=self.layers.len())
            .map(|i| self.resolution >> ((i - 1) / 2))
            .collect()
    }

    /// Features entering layer 1 (the stem output).
    pub fn stem_features(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.stem.forward(image)?)
    }

    /// The multi-dilation layer at 1-based index `i`, when present.
    pub fn aggregation(&self, i: usize) -> Option<&SmartLayer<T>> {
        match self.layers.get(i - 1)? {
            EncLayer::Aggregation(l) => l.as_smart(),
            EncLayer::Down(_) => None,
        }
    }

    pub fn forward(
        &self,
        image: &Tensor<T>,
        prompts: &[Tensor<T>],
    ) -> Result<EncoderOutput<T>> {
        let shape = image.shape();
        if shape != vec![3, self.resolution, self.resolution] {
            return Err(CoreError::Model(format!(
                "encoder expects (3,{r},{r}), got {shape:?}",
                r = self.resolution
            )));
        }
        let mut feat = self.stem.forward(image)?;
        let mut features = Vec::with_capacity(self.layers.len());
        for (idx, layer) in self.layers.iter().enumerate() {
            let prompt = &prompts[idx];
            feat = match layer {
                EncLayer::Aggregation(l) => l.forward(&feat, prompt)?,
                EncLayer::Down(sc) => {
                    let s = sc.forward(&feat, prompt)?;
                    let sz = s.shape();
                    s.bilinear_resize(sz[1] / 2, sz[2] / 2)?
                }
            };
            features.push(feat.clone());
        }
        let n = self.layers.len();
        let b = self.resolution >> (n / 2);
        let flat = feat.reshape(&[self.widths[n - 1] * b * b, 1])?;
        let global_code = self
            .global_fc
            .forward(&flat)?
            .reshape(&[self.code_dim, 2])?;
        Ok(EncoderOutput {
            features,
            global_code,
        })
    }
}

impl<T: Scalar> Module<T> for Encoder<T> {
    fn collect_params(&self, prefix: &str, out: &mut ParamSet<T>) {
        self.stem.collect_params(&format!("{prefix}/stem"), out);
        for (idx, layer) in self.layers.iter().enumerate() {
            let name = format!("{prefix}/layer{}", idx + 1);
            match layer {
                EncLayer::Aggregation(l) => l.collect(&name, out),
                EncLayer::Down(sc) => sc.collect_params(&format!("{name}/sc"), out),
            }
        }
        self.global_fc
            .collect_params(&format!("{prefix}/global_fc"), out);
    }
}

pub struct Decoder<T: Scalar> {
    stem: Conv<T>,
    layers: Vec<DecLayer<T>>,
    rgb: Conv<T>,
    widths: Vec<usize>,
    resolution: usize,
}

enum DecLayer<T: Scalar> {
    Up(StyleConv<T>),
    Aggregation(PromptLayer<T>),
}

impl<T: Scalar> Decoder<T> {
    pub fn new(cfg: &RunConfig) -> Self {
        let n = cfg.num_styles;
        let dw = cfg.decoder_widths();
        let enc_last = cfg.widths[n - 1];
        let prompt_dim = 4 * cfg.code_dim; // [w0_i, z_hat, c]
        let mut layers = Vec::with_capacity(n);
        for i in 1..=n {
            let c_in = if i == 1 { dw[0] } else { dw[i - 2] };
            let c_out = dw[i - 1];
            let name = format!("dec/layer{i}");
            if i % 2 == 1 {
                layers.push(DecLayer::Up(StyleConv::new(
                    cfg.seed,
                    &format!("{name}/sc"),
                    c_in,
                    c_out,
                    prompt_dim,
                    1,
                )));
            } else {
                layers.push(DecLayer::Aggregation(PromptLayer::new(
                    cfg.seed,
                    &name,
                    c_in,
                    c_out,
                    prompt_dim,
                    cfg.model_variant,
                )));
            }
        }
        Decoder {
            stem: Conv::new(cfg.seed, "dec/stem", enc_last, dw[0], 3, 1, 1),
            rgb: Conv::new(cfg.seed, "dec/rgb", dw[n - 1], 3, 3, 1, 1),
            layers,
            widths: dw,
            resolution: cfg.resolution,
        }
    }

    /// (channels, side) of prior feature j (1-based, index j-1). Prior j
    /// mirrors the decoder's own feature j; fusion at even layer i consumes
    /// prior i-1, so every consumed slot matches by construction.
    pub fn prior_slots(&self) -> Vec<(usize, usize)> {
        let n = self.layers.len();
        let base = self.resolution >> (n / 2);
        (1..=n)
            .map(|j| (self.widths[j - 1], base << j.div_ceil(2)))
            .collect()
    }

    pub fn forward(
        &self,
        encoder_features: &[Tensor<T>],
        prompts: &[Tensor<T>],
        priors: Option<&[Tensor<T>]>,
    ) -> Result<Tensor<T>> {
        let n = self.layers.len();
        if encoder_features.len() != n {
            return Err(CoreError::Model(format!(
                "decoder needs {n} encoder features, got {}",
                encoder_features.len()
            )));
        }
        let mut feat = self.stem.forward(&encoder_features[n - 1])?;
        for (idx, layer) in self.layers.iter().enumerate() {
            let i = idx + 1;
            let prompt = &prompts[idx];
            feat = match layer {
                DecLayer::Up(sc) => {
                    let sz = feat.shape();
                    let up = feat.bilinear_resize(sz[1] * 2, sz[2] * 2)?;
                    sc.forward(&up, prompt)?
                }
                DecLayer::Aggregation(l) => {
                    let mirror = &encoder_features[n - i]; // F_en_{N-i+1}
                    let prior = priors.map(|p| &p[i - 2]);
                    let fused = fuse(&feat, mirror, prior)?;
                    l.forward(&fused, prompt)?
                }
            };
        }
        Ok(self.rgb.forward(&feat)?.tanh())
    }
}

impl<T: Scalar> Module<T> for Decoder<T> {
    fn collect_params(&self, prefix: &str, out: &mut ParamSet<T>) {
        self.stem.collect_params(&format!("{prefix}/stem"), out);
        for (idx, layer) in self.layers.iter().enumerate() {
            let name = format!("{prefix}/layer{}", idx + 1);
            match layer {
                DecLayer::Up(sc) => sc.collect_params(&format!("{name}/sc"), out),
                DecLayer::Aggregation(l) => l.collect(&name, out),
            }
        }
        self.rgb.collect_params(&format!("{prefix}/rgb"), out);
    }
}

/// The full restoration auto-encoder G plus the mapping network F.
pub struct RestorationNet<T: Scalar> {
    pub mapping: MappingNetwork<T>,
    pub encoder: Encoder<T>,
    pub decoder: Decoder<T>,
    code_dim: usize,
    num_styles: usize,
}

impl<T: Scalar> RestorationNet<T> {
    pub fn new(cfg: &RunConfig) -> Self {
        RestorationNet {
            mapping: MappingNetwork::new(cfg.seed, cfg.code_dim),
            encoder: Encoder::new(cfg),
            decoder: Decoder::new(cfg),
            code_dim: cfg.code_dim,
            num_styles: cfg.num_styles,
        }
    }

    /// Restored image (and the global code) from the degraded image, style
    /// codes, random style, and optional prior features.
    pub fn forward(
        &self,
        image: &Tensor<T>,
        w0: &Tensor<T>,
        z_hat: &Tensor<T>,
        priors: Option<&[Tensor<T>]>,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        if w0.shape() != vec![self.code_dim, self.num_styles] {
            return Err(CoreError::Model(format!(
                "codes must be {}x{}, got {:?}",
                self.code_dim,
                self.num_styles,
                w0.shape()
            )));
        }
        let mut enc_prompts = Vec::with_capacity(self.num_styles);
        for i in 0..self.num_styles {
            let col = w0.slice(1, i, 1)?;
            enc_prompts.push(concat(&[&col, z_hat], 1)?);
        }
        let enc = self.encoder.forward(image, &enc_prompts)?;
        let mut dec_prompts = Vec::with_capacity(self.num_styles);
        for i in 0..self.num_styles {
            let col = w0.slice(1, i, 1)?;
            dec_prompts.push(concat(&[&col, z_hat, &enc.global_code], 1)?);
        }
        let out = self
            .decoder
            .forward(&enc.features, &dec_prompts, priors)?;
        Ok((out, enc.global_code))
    }
}

impl<T: Scalar> Module<T> for RestorationNet<T> {
    fn collect_params(&self, prefix: &str, out: &mut ParamSet<T>) {
        self.encoder.collect_params(&format!("{prefix}/enc"), out);
        self.decoder.collect_params(&format!("{prefix}/dec"), out);
    }
}

/// Strided-conv critic ending in a single logit.
pub struct Discriminator<T: Scalar> {
    blocks: Vec<Conv<T>>,
    head: Linear<T>,
    resolution: usize,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new(seed: u64, resolution: usize) -> Self {
        let n_blocks = resolution.trailing_zeros() as usize;
        let mut blocks = Vec::with_capacity(n_blocks);
        let mut c_in = 3;
        let mut width = 32usize;
        for i in 0..n_blocks {
            blocks.push(Conv::new(
                seed,
                &format!("disc/block{i}"),
                c_in,
                width,
                3,
                2,
                1,
            ));
            c_in = width;
            width = (width * 2).min(256);
        }
        Discriminator {
            blocks,
            head: Linear::new(seed, "disc/head", c_in, 1),
            resolution,
        }
    }

    /// Scalar logit, shape (1, 1).
    pub fn forward(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = image.shape();
        if shape != vec![3, self.resolution, self.resolution] {
            return Err(CoreError::Model(format!(
                "discriminator expects (3,{r},{r}), got {shape:?}",
                r = self.resolution
            )));
        }
        let mut feat = image.clone();
        for block in &self.blocks {
            feat = block.forward(&feat)?.leaky_relu(0.2);
        }
        let c = feat.numel();
        Ok(self.head.forward(&feat.reshape(&[c, 1])?)?)
    }
}

impl<T: Scalar> Module<T> for Discriminator<T> {
    fn collect_params(&self, prefix: &str, out: &mut ParamSet<T>) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.collect_params(&format!("{prefix}/block{i}"), out);
        }
        self.head.collect_params(&format!("{prefix}/head"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use vsp_tensor::rng as trng;
    use vsp_tensor::{backward, grad};

    fn small_cfg() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.resolution = 16;
        cfg.code_dim = 8;
        cfg.num_styles = 4;
        cfg.widths = vec![8, 8, 12, 12];
        cfg.validate().unwrap();
        cfg
    }

    fn dummy_priors(cfg: &RunConfig) -> Vec<Tensor<f32>> {
        let dec = Decoder::<f32>::new(cfg);
        let mut rng = trng::stream(1, "priors", 0);
        dec.prior_slots()
            .iter()
            .map(|&(c, side)| trng::randn_tensor(&mut rng, &[c, side, side]))
            .collect()
    }

    #[test]
    fn encoder_operating_sizes_match_halving_rule() {
        let mut cfg = RunConfig::default();
        cfg.corpus_dir = String::new();
        let enc = Encoder::<f32>::new(&cfg);
        assert_eq!(
            enc.operating_sizes(),
            vec![32, 32, 16, 16, 8, 8, 4, 4],
            "N=8 at 32^2"
        );
    }

    #[test]
    fn encoder_output_contract() {
        let cfg = small_cfg();
        let enc = Encoder::<f32>::new(&cfg);
        let mut r = trng::stream(2, "x", 0);
        let img: Tensor<f32> = trng::randn_tensor(&mut r, &[3, 16, 16]);
        let prompts: Vec<Tensor<f32>> = (0..4)
            .map(|_| trng::randn_tensor(&mut r, &[8, 2]))
            .collect();
        let out = enc.forward(&img, &prompts).unwrap();
        assert_eq!(out.global_code.shape(), vec![8, 2], "c is d x 2");
        assert_eq!(out.features.len(), 4);
        // sizes after each layer: agg keeps, down halves
        assert_eq!(out.features[0].shape(), vec![8, 16, 16]);
        assert_eq!(out.features[1].shape(), vec![8, 8, 8]);
        assert_eq!(out.features[2].shape(), vec![12, 8, 8]);
        assert_eq!(out.features[3].shape(), vec![12, 4, 4]);
    }

    #[test]
    fn full_net_roundtrip_and_determinism() {
        let cfg = small_cfg();
        let net = RestorationNet::<f32>::new(&cfg);
        let mut r = trng::stream(3, "x", 0);
        let img: Tensor<f32> = trng::randn_tensor(&mut r, &[3, 16, 16]);
        let w0: Tensor<f32> = trng::randn_tensor(&mut r, &[8, 4]);
        let z: Tensor<f32> = trng::randn_tensor(&mut r, &[8, 1]);
        let priors = dummy_priors(&cfg);
        let (out1, _) = net.forward(&img, &w0, &z, Some(&priors)).unwrap();
        assert_eq!(out1.shape(), vec![3, 16, 16], "resolution preserved");
        for v in out1.data() {
            assert!((-1.0..=1.0).contains(&v), "tanh bounds");
        }
        let (out2, _) = net.forward(&img, &w0, &z, Some(&priors)).unwrap();
        assert_eq!(out1.data(), out2.data(), "bit-identical reruns");
        // priors change the output
        let (out3, _) = net.forward(&img, &w0, &z, None).unwrap();
        assert_ne!(out1.data(), out3.data());
    }

    #[test]
    fn fuse_is_commutative_sum_with_identity_on_zeros() {
        let mut r = trng::stream(4, "f", 0);
        let a: Tensor<f32> = trng::randn_tensor(&mut r, &[2, 4, 4]);
        let b: Tensor<f32> = trng::randn_tensor(&mut r, &[2, 4, 4]);
        let c: Tensor<f32> = trng::randn_tensor(&mut r, &[2, 4, 4]);
        let z = Tensor::<f32>::zeros(&[2, 4, 4]);
        let f1 = fuse(&a, &b, Some(&c)).unwrap();
        let f2 = fuse(&b, &c, Some(&a)).unwrap();
        for (x, y) in f1.data().iter().zip(f2.data()) {
            assert!((x - y).abs() < 1e-6, "commutative in its arguments");
        }
        let id = fuse(&z, &z, Some(&c)).unwrap();
        for (x, y) in id.data().iter().zip(c.data()) {
            assert!((x - y).abs() < 1e-7, "zeros leave the third input");
        }
        let bad = Tensor::<f32>::zeros(&[2, 3, 4]);
        assert!(fuse(&a, &bad, None).is_err());
    }

    #[test]
    fn gradient_reaches_global_code_and_mapping() {
        let cfg = small_cfg();
        let net = RestorationNet::<f32>::new(&cfg);
        let mut r = trng::stream(5, "x", 0);
        let img: Tensor<f32> = trng::randn_tensor(&mut r, &[3, 16, 16]);
        let w0: Tensor<f32> = trng::randn_tensor(&mut r, &[8, 4]);
        let z: Tensor<f32> = trng::randn_tensor(&mut r, &[8, 1]);
        let z_hat = net.mapping.forward(&z).unwrap();
        assert_eq!(z_hat.shape(), vec![8, 1]);
        let (out, c) = net.forward(&img, &w0, &z_hat, None).unwrap();
        let loss = out.mul(&out).unwrap().sum_all().unwrap();
        let g = grad(&loss, &[&c], false).unwrap().remove(0);
        let norm: f32 = g.data().iter().map(|v| v * v).sum();
        assert!(norm > 0.0, "loss must depend on the global code");
        // and into the mapping network's weights
        net.mapping.params("m").zero_grads();
        backward(&loss).unwrap();
        let mp = net.mapping.params("m");
        let total: f32 = mp
            .iter()
            .map(|(_, t)| {
                t.grad()
                    .map(|g| g.iter().map(|v| v * v).sum::<f32>())
                    .unwrap_or(0.0)
            })
            .sum();
        assert!(total > 0.0, "mapping network receives gradient");
    }

    #[test]
    fn mapping_network_basics() {
        let m = MappingNetwork::<f64>::new(1, 8);
        let mut r = trng::stream(1, "z", 0);
        let z: Tensor<f64> = trng::randn_tensor(&mut r, &[8, 1]);
        let a = m.forward(&z).unwrap();
        let b = m.forward(&z).unwrap();
        assert_eq!(a.data(), b.data(), "deterministic given weights and z");
        // nonzero Jacobian at a random point via finite differences
        let mut bumped = z.data();
        bumped[0] += 1e-4;
        let zb = Tensor::from_vec(&[8, 1], bumped).unwrap();
        let c = m.forward(&zb).unwrap();
        let diff: f64 = c
            .data()
            .iter()
            .zip(a.data())
            .map(|(x, y)| (x - y).abs())
            .sum();
        assert!(diff > 0.0, "output must vary with z");
    }

    #[test]
    fn discriminator_scalar_logit_with_finite_input_grad() {
        let d = Discriminator::<f32>::new(2, 16);
        let mut r = trng::stream(2, "i", 0);
        let img = trng::randn_tensor::<f32>(&mut r, &[3, 16, 16]).requires_grad(true);
        let logit = d.forward(&img).unwrap();
        assert_eq!(logit.shape(), vec![1, 1]);
        let g = grad(&logit, &[&img], false).unwrap().remove(0);
        assert!(g.all_finite(), "input gradient exists and is finite");
        let norm: f32 = g.data().iter().map(|v| v * v).sum();
        assert!(norm > 0.0);
    }

    #[test]
    fn sc_only_variant_swaps_aggregation_layers() {
        let mut cfg = small_cfg();
        cfg.model_variant = ModelVariant::ScOnly;
        let net = RestorationNet::<f32>::new(&cfg);
        let names: Vec<String> = net
            .params("restorer")
            .iter()
            .map(|(n, _)| n.clone())
            .collect();
        assert!(names.iter().any(|n| n.contains("/layer1/sc/")));
        assert!(!names.iter().any(|n| n.contains("smart")));
        let full = RestorationNet::<f32>::new(&small_cfg());
        let full_names: Vec<String> = full
            .params("restorer")
            .iter()
            .map(|(n, _)| n.clone())
            .collect();
        assert!(full_names.iter().any(|n| n.contains("/layer1/smart/branch_8/kernel")));
    }
}
