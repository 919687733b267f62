//! Desk-scale stand-ins for the pre-trained components: a style-conditioned
//! toy generator queried as the facial feature bank, and the style encoder
//! that embeds images into the d x N code space the generator consumes.
//! Both are trained once (jointly, as an autoencoder) and frozen.

use vsp_tensor::{Scalar, Tensor};

use crate::config::RunConfig;
use crate::error::{CoreError, Result};
use crate::nn::{Conv, Linear, Module, ParamSet};
use crate::styleops::StyleConv;

/// Learned-constant generator with one style-conditioned conv block per
/// style vector; feature taps mirror the restoration decoder's shapes.
pub struct ToyGenerator<T: Scalar> {
    constant: Tensor<T>,
    blocks: Vec<StyleConv<T>>,
    rgb: Conv<T>,
    code_dim: usize,
    num_styles: usize,
    base_res: usize,
}

impl<T: Scalar> ToyGenerator<T> {
    pub fn new(cfg: &RunConfig) -> Self {
        let widths = cfg.decoder_widths();
        let base = cfg.bank_base_res();
        let mut rng = vsp_tensor::rng::stream(cfg.seed, "bank/gen/const", 0);
        let constant =
            vsp_tensor::rng::randn_tensor::<T>(&mut rng, &[widths[0], base, base])
                .requires_grad(true);
        let blocks = (1..=cfg.num_styles)
            .map(|j| {
                let c_in = if j == 1 { widths[0] } else { widths[j - 2] };
                StyleConv::new(
                    cfg.seed,
                    &format!("bank/gen/block{j}"),
                    c_in,
                    widths[j - 1],
                    cfg.code_dim,
                    1,
                )
            })
            .collect();
        ToyGenerator {
            constant,
            blocks,
            rgb: Conv::new(cfg.seed, "bank/gen/rgb", widths[cfg.num_styles - 1], 3, 3, 1, 1),
            code_dim: cfg.code_dim,
            num_styles: cfg.num_styles,
            base_res: base,
        }
    }

    /// Feature taps (one per block) and the rendered image.
    pub fn forward(&self, w0: &Tensor<T>) -> Result<(Vec<Tensor<T>>, Tensor<T>)> {
        if w0.shape() != vec![self.code_dim, self.num_styles] {
            return Err(CoreError::Model(format!(
                "generator expects {}x{} codes, got {:?}",
                self.code_dim,
                self.num_styles,
                w0.shape()
            )));
        }
        let mut feat = self.constant.clone();
        let mut taps = Vec::with_capacity(self.num_styles);
        for (idx, block) in self.blocks.iter().enumerate() {
            let j = idx + 1;
            if j >= 3 && j % 2 == 1 {
                let s = feat.shape();
                feat = feat.bilinear_resize(s[1] * 2, s[2] * 2)?;
            }
            let prompt = w0.slice(1, idx, 1)?;
            feat = block.forward(&feat, &prompt)?;
            taps.push(feat.clone());
        }
        let image = self.rgb.forward(&feat)?.tanh();
        Ok((taps, image))
    }

    /// Shapes of the feature taps, (channels, side) per block.
    pub fn tap_shapes(&self) -> Vec<(usize, usize)> {
        let mut side = self.base_res;
        let mut out = Vec::with_capacity(self.num_styles);
        for (idx, block) in self.blocks.iter().enumerate() {
            let j = idx + 1;
            if j >= 3 && j % 2 == 1 {
                side *= 2;
            }
            out.push((block.kernel.shape()[0], side));
        }
        out
    }
}

impl<T: Scalar> Module<T> for ToyGenerator<T> {
    fn collect_params(&self, prefix: &str, out: &mut ParamSet<T>) {
        out.add(format!("{prefix}/const"), &self.constant);
        for (idx, b) in self.blocks.iter().enumerate() {
            b.collect_params(&format!("{prefix}/block{}", idx + 1), out);
        }
        self.rgb.collect_params(&format!("{prefix}/rgb"), out);
    }
}

/// Convolutional pyramid from an image down to d x N initial codes.
pub struct StyleEncoder<T: Scalar> {
    stem: Conv<T>,
    downs: Vec<Conv<T>>,
    head: Linear<T>,
    code_dim: usize,
    num_styles: usize,
    resolution: usize,
}

impl<T: Scalar> StyleEncoder<T> {
    pub fn new(cfg: &RunConfig) -> Self {
        let n_down = (cfg.resolution / 4).trailing_zeros() as usize;
        let mut downs = Vec::with_capacity(n_down);
        let mut c_in = 32;
        let mut width = 48usize;
        for i in 0..n_down {
            downs.push(Conv::new(
                cfg.seed,
                &format!("bank/enc/down{i}"),
                c_in,
                width,
                3,
                2,
                1,
            ));
            c_in = width;
            width = (width * 2).min(256);
        }
        StyleEncoder {
            stem: Conv::new(cfg.seed, "bank/enc/stem", 3, 32, 3, 1, 1),
            downs,
            head: Linear::new(
                cfg.seed,
                "bank/enc/head",
                c_in * 16,
                cfg.code_dim * cfg.num_styles,
            ),
            code_dim: cfg.code_dim,
            num_styles: cfg.num_styles,
            resolution: cfg.resolution,
        }
    }

    pub fn forward(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = image.shape();
        if shape != vec![3, self.resolution, self.resolution] {
            return Err(CoreError::Model(format!(
                "style encoder expects (3,{r},{r}), got {shape:?}",
                r = self.resolution
            )));
        }
        let mut feat = self.stem.forward(image)?.leaky_relu(0.2);
        for d in &self.downs {
            feat = d.forward(&feat)?.leaky_relu(0.2);
        }
        let flat = feat.reshape(&[feat.numel(), 1])?;
        self.head
            .forward(&flat)?
            .reshape(&[self.code_dim, self.num_styles])
            .map_err(CoreError::Tensor)
    }
}

impl<T: Scalar> Module<T> for StyleEncoder<T> {
    fn collect_params(&self, prefix: &str, out: &mut ParamSet<T>) {
        self.stem.collect_params(&format!("{prefix}/stem"), out);
        for (i, d) in self.downs.iter().enumerate() {
            d.collect_params(&format!("{prefix}/down{i}"), out);
        }
        self.head.collect_params(&format!("{prefix}/head"), out);
    }
}

/// Frozen generator + encoder pair.
pub struct FeatureBank<T: Scalar> {
    pub generator: ToyGenerator<T>,
    pub encoder: StyleEncoder<T>,
}

impl<T: Scalar> FeatureBank<T> {
    pub fn new(cfg: &RunConfig) -> Self {
        FeatureBank {
            generator: ToyGenerator::new(cfg),
            encoder: StyleEncoder::new(cfg),
        }
    }

    /// Prior features and inverted image for denoised codes.
    pub fn generate(&self, w0: &Tensor<T>) -> Result<(Vec<Tensor<T>>, Tensor<T>)> {
        self.generator.forward(w0)
    }

    /// Initial codes from a (degraded) image.
    pub fn encode_style(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        self.encoder.forward(image)
    }

    pub fn freeze(&self) {
        self.params("bank").set_requires_grad(false);
    }

    /// Construction-time check that every tap matches the decoder's
    /// expected prior shape.
    pub fn validate_against(&self, prior_slots: &[(usize, usize)]) -> Result<()> {
        let taps = self.generator.tap_shapes();
        if taps.len() != prior_slots.len() {
            return Err(CoreError::Model(format!(
                "bank emits {} taps but the decoder declares {} fusion slots",
                taps.len(),
                prior_slots.len()
            )));
        }
        for (j, (tap, slot)) in taps.iter().zip(prior_slots).enumerate() {
            if tap != slot {
                return Err(CoreError::Model(format!(
                    "prior feature {} has shape {:?}, decoder expects {:?}",
                    j + 1,
                    tap,
                    slot
                )));
            }
        }
        Ok(())
    }
}

impl<T: Scalar> Module<T> for FeatureBank<T> {
    fn collect_params(&self, prefix: &str, out: &mut ParamSet<T>) {
        self.generator.collect_params(&format!("{prefix}/gen"), out);
        self.encoder.collect_params(&format!("{prefix}/enc"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::restorer::Decoder;
    use vsp_tensor::rng as trng;

    fn small_cfg() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.resolution = 16;
        cfg.code_dim = 8;
        cfg.num_styles = 4;
        cfg.widths = vec![8, 8, 12, 12];
        cfg.validate().unwrap();
        cfg
    }

    #[test]
    fn tap_shapes_match_decoder_fusion_slots() {
        for cfg in [small_cfg(), RunConfig::default()] {
            let bank = FeatureBank::<f32>::new(&cfg);
            let dec = Decoder::<f32>::new(&cfg);
            bank.validate_against(&dec.prior_slots()).unwrap();
            // and the actual forward produces those shapes
            let mut r = trng::stream(1, "w", 0);
            let w0 = trng::randn_tensor(&mut r, &[cfg.code_dim, cfg.num_styles]);
            let (taps, img) = bank.generate(&w0).unwrap();
            for (tap, (c, side)) in taps.iter().zip(bank.generator.tap_shapes()) {
                assert_eq!(tap.shape(), vec![c, side, side]);
            }
            assert_eq!(img.shape(), vec![3, cfg.resolution, cfg.resolution]);
        }
    }

    #[test]
    fn generator_is_deterministic_when_frozen() {
        let cfg = small_cfg();
        let bank = FeatureBank::<f32>::new(&cfg);
        bank.freeze();
        let mut r = trng::stream(2, "w", 0);
        let w0: Tensor<f32> = trng::randn_tensor(&mut r, &[8, 4]);
        let (_, a) = bank.generate(&w0).unwrap();
        let (_, b) = bank.generate(&w0).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn encoder_output_shape_and_determinism() {
        let cfg = small_cfg();
        let bank = FeatureBank::<f32>::new(&cfg);
        let mut r = trng::stream(3, "i", 0);
        let img: Tensor<f32> = trng::randn_tensor(&mut r, &[3, 16, 16]);
        let w = bank.encode_style(&img).unwrap();
        assert_eq!(w.shape(), vec![8, 4]);
        assert_eq!(w.data(), bank.encode_style(&img).unwrap().data());
    }

    #[test]
    fn code_count_mismatch_rejected() {
        let cfg = small_cfg();
        let bank = FeatureBank::<f32>::new(&cfg);
        let w0 = Tensor::<f32>::zeros(&[8, 3]);
        assert!(bank.generate(&w0).is_err());
    }

    #[test]
    fn freeze_marks_all_params() {
        let cfg = small_cfg();
        let bank = FeatureBank::<f32>::new(&cfg);
        bank.freeze();
        for (_, t) in bank.params("bank").iter() {
            assert!(!t.requires_grad_flag());
        }
    }
}
