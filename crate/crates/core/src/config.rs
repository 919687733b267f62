//! Run configuration: flat `key=value` text with `#` comments. Every
//! tunable of every stage lives here; unknown keys are rejected so configs
//! cannot silently drift. The resolved config is embedded into each
//! checkpoint, making runs self-describing.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Root seed; all randomness derives from it through named sub-streams.
    pub seed: u64,
    /// Square image resolution.
    pub resolution: usize,
    /// Style-code dimension d.
    pub code_dim: usize,
    /// Number of style vectors N (equals restorer layer count).
    pub num_styles: usize,
    /// Per-layer channel widths, length N, equal in pairs.
    pub widths: Vec<usize>,
    /// Diffusion step count T.
    pub t_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub lr: f64,
    /// Learning rate of the bank pretraining stage (stage-local plumbing).
    pub bank_lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    /// Diffuser objective weights.
    pub lambda_lpips: f64,
    pub lambda_id: f64,
    /// Restorer objective weights.
    pub restorer_lambda_lpips: f64,
    pub restorer_lambda_id: f64,
    pub r1_gamma: f64,
    pub bank_batch: usize,
    pub diffuser_batch: usize,
    pub restorer_batch: usize,
    pub bank_steps: usize,
    pub diffuser_steps: usize,
    pub restorer_steps: usize,
    /// Reconstruction gate (dB) the feature-bank pretraining must reach.
    pub bank_psnr_gate: f64,
    pub corpus_dir: String,
    /// First `corpus_train` corpus images train; next `corpus_eval` are held out.
    pub corpus_train: usize,
    pub corpus_eval: usize,
    pub checkpoint_every: usize,
    pub eval_every: usize,
    /// full | no_diffuser | sc_only | no_prior
    pub model_variant: ModelVariant,
    /// Seeds of the frozen substitute backbones.
    pub perceptual_seed: u64,
    pub identity_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelVariant {
    /// Diffused style prompts + SMART layers.
    Full,
    /// Style prompts come straight from the encoder (no denoising).
    NoDiffuser,
    /// SMART layers swapped for plain style convolutions.
    ScOnly,
    /// Prior features dropped from the fusion sites (plain skip connections).
    NoPrior,
}

impl ModelVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelVariant::Full => "full",
            ModelVariant::NoDiffuser => "no_diffuser",
            ModelVariant::ScOnly => "sc_only",
            ModelVariant::NoPrior => "no_prior",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(ModelVariant::Full),
            "no_diffuser" => Ok(ModelVariant::NoDiffuser),
            "sc_only" => Ok(ModelVariant::ScOnly),
            "no_prior" => Ok(ModelVariant::NoPrior),
            other => Err(CoreError::Config(format!("unknown model_variant {other}"))),
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            resolution: 32,
            code_dim: 64,
            num_styles: 8,
            widths: vec![64, 64, 128, 128, 256, 256, 256, 256],
            t_steps: 4,
            beta_start: 0.1,
            beta_end: 0.99,
            lr: 0.0002,
            bank_lr: 0.001,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            lambda_lpips: 0.1,
            lambda_id: 0.1,
            restorer_lambda_lpips: 0.5,
            restorer_lambda_id: 0.1,
            r1_gamma: 10.0,
            bank_batch: 8,
            diffuser_batch: 8,
            restorer_batch: 4,
            bank_steps: 3000,
            diffuser_steps: 2000,
            restorer_steps: 2000,
            bank_psnr_gate: 24.0,
            corpus_dir: "corpus".to_string(),
            corpus_train: 800,
            corpus_eval: 200,
            checkpoint_every: 500,
            eval_every: 100,
            model_variant: ModelVariant::Full,
            perceptual_seed: 101,
            identity_seed: 102,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CoreError::Config(format!("line {}: expected key=value", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| CoreError::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CoreError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| CoreError::Config(format!("bad value for {key}: {v}")))
        }
        match key {
            "seed" => self.seed = num(key, value)?,
            "resolution" => self.resolution = num(key, value)?,
            "code_dim" => self.code_dim = num(key, value)?,
            "num_styles" => self.num_styles = num(key, value)?,
            "widths" => {
                self.widths = value
                    .split(',')
                    .map(|s| num("widths", s.trim()))
                    .collect::<Result<Vec<usize>>>()?
            }
            "t_steps" => self.t_steps = num(key, value)?,
            "beta_start" => self.beta_start = num(key, value)?,
            "beta_end" => self.beta_end = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "bank_lr" => self.bank_lr = num(key, value)?,
            "adam_beta1" => self.adam_beta1 = num(key, value)?,
            "adam_beta2" => self.adam_beta2 = num(key, value)?,
            "lambda_lpips" => self.lambda_lpips = num(key, value)?,
            "lambda_id" => self.lambda_id = num(key, value)?,
            "restorer_lambda_lpips" => self.restorer_lambda_lpips = num(key, value)?,
            "restorer_lambda_id" => self.restorer_lambda_id = num(key, value)?,
            "r1_gamma" => self.r1_gamma = num(key, value)?,
            "bank_batch" => self.bank_batch = num(key, value)?,
            "diffuser_batch" => self.diffuser_batch = num(key, value)?,
            "restorer_batch" => self.restorer_batch = num(key, value)?,
            "bank_steps" => self.bank_steps = num(key, value)?,
            "diffuser_steps" => self.diffuser_steps = num(key, value)?,
            "restorer_steps" => self.restorer_steps = num(key, value)?,
            "bank_psnr_gate" => self.bank_psnr_gate = num(key, value)?,
            "corpus_dir" => self.corpus_dir = value.to_string(),
            "corpus_train" => self.corpus_train = num(key, value)?,
            "corpus_eval" => self.corpus_eval = num(key, value)?,
            "checkpoint_every" => self.checkpoint_every = num(key, value)?,
            "eval_every" => self.eval_every = num(key, value)?,
            "model_variant" => self.model_variant = ModelVariant::parse(value)?,
            "perceptual_seed" => self.perceptual_seed = num(key, value)?,
            "identity_seed" => self.identity_seed = num(key, value)?,
            other => return Err(CoreError::Config(format!("unknown key \"{other}\""))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(CoreError::Config(msg));
        if self.num_styles < 2 || self.num_styles % 2 != 0 {
            return fail(format!(
                "num_styles must be even and >= 2, got {}",
                self.num_styles
            ));
        }
        if self.code_dim < 4 || self.code_dim % 2 != 0 {
            return fail(format!(
                "code_dim must be even and >= 4, got {}",
                self.code_dim
            ));
        }
        if self.widths.len() != self.num_styles {
            return fail(format!(
                "widths must list {} entries, got {}",
                self.num_styles,
                self.widths.len()
            ));
        }
        for pair in self.widths.chunks(2) {
            if pair[0] != pair[1] {
                return fail(format!(
                    "widths must be equal in pairs (mirror alignment), got {:?}",
                    self.widths
                ));
            }
        }
        let halvings = self.num_styles / 2;
        if !self.resolution.is_power_of_two() || self.resolution < 16 {
            return fail(format!(
                "resolution must be a power of two >= 16, got {}",
                self.resolution
            ));
        }
        if self.resolution >> halvings == 0 {
            return fail(format!(
                "resolution {} too small for {} halvings",
                self.resolution, halvings
            ));
        }
        if self.t_steps < 1 {
            return fail("t_steps must be >= 1".to_string());
        }
        if !(self.beta_start > 0.0 && self.beta_start <= self.beta_end && self.beta_end < 1.0) {
            return fail(format!(
                "beta endpoints must satisfy 0 < start <= end < 1, got {} and {}",
                self.beta_start, self.beta_end
            ));
        }
        Ok(())
    }

    /// Serialize every key in a fixed order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let w = self
            .widths
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "resolution={}", self.resolution);
        let _ = writeln!(s, "code_dim={}", self.code_dim);
        let _ = writeln!(s, "num_styles={}", self.num_styles);
        let _ = writeln!(s, "widths={w}");
        let _ = writeln!(s, "t_steps={}", self.t_steps);
        let _ = writeln!(s, "beta_start={}", self.beta_start);
        let _ = writeln!(s, "beta_end={}", self.beta_end);
        let _ = writeln!(s, "lr={}", self.lr);
        let _ = writeln!(s, "bank_lr={}", self.bank_lr);
        let _ = writeln!(s, "adam_beta1={}", self.adam_beta1);
        let _ = writeln!(s, "adam_beta2={}", self.adam_beta2);
        let _ = writeln!(s, "lambda_lpips={}", self.lambda_lpips);
        let _ = writeln!(s, "lambda_id={}", self.lambda_id);
        let _ = writeln!(s, "restorer_lambda_lpips={}", self.restorer_lambda_lpips);
        let _ = writeln!(s, "restorer_lambda_id={}", self.restorer_lambda_id);
        let _ = writeln!(s, "r1_gamma={}", self.r1_gamma);
        let _ = writeln!(s, "bank_batch={}", self.bank_batch);
        let _ = writeln!(s, "diffuser_batch={}", self.diffuser_batch);
        let _ = writeln!(s, "restorer_batch={}", self.restorer_batch);
        let _ = writeln!(s, "bank_steps={}", self.bank_steps);
        let _ = writeln!(s, "diffuser_steps={}", self.diffuser_steps);
        let _ = writeln!(s, "restorer_steps={}", self.restorer_steps);
        let _ = writeln!(s, "bank_psnr_gate={}", self.bank_psnr_gate);
        let _ = writeln!(s, "corpus_dir={}", self.corpus_dir);
        let _ = writeln!(s, "corpus_train={}", self.corpus_train);
        let _ = writeln!(s, "corpus_eval={}", self.corpus_eval);
        let _ = writeln!(s, "checkpoint_every={}", self.checkpoint_every);
        let _ = writeln!(s, "eval_every={}", self.eval_every);
        let _ = writeln!(s, "model_variant={}", self.model_variant.as_str());
        let _ = writeln!(s, "perceptual_seed={}", self.perceptual_seed);
        let _ = writeln!(s, "identity_seed={}", self.identity_seed);
        s
    }

    /// Widths of the decoder / feature-bank blocks (mirror of the encoder).
    pub fn decoder_widths(&self) -> Vec<usize> {
        self.widths.iter().rev().copied().collect()
    }

    /// Spatial side of the encoder bottleneck (after N/2 halvings).
    pub fn bottleneck_res(&self) -> usize {
        self.resolution >> (self.num_styles / 2)
    }

    /// Spatial side of the feature bank's learned constant input.
    pub fn bank_base_res(&self) -> usize {
        self.resolution >> (self.num_styles / 2 - 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let cfg = RunConfig::default();
        let text = cfg.to_text();
        let back = RunConfig::parse(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_key_rejected() {
        let err = RunConfig::parse("bogus_key=1").unwrap_err();
        assert!(err.to_string().contains("bogus_key"));
    }

    #[test]
    fn comments_and_blank_lines_ok() {
        let cfg = RunConfig::parse("# a comment\n\nseed=9 # trailing\n").unwrap();
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn validation_catches_bad_shapes() {
        assert!(RunConfig::parse("num_styles=3").is_err());
        assert!(RunConfig::parse("widths=1,2,3").is_err());
        assert!(RunConfig::parse("num_styles=4\nwidths=8,8,16,32").is_err());
        assert!(RunConfig::parse("beta_start=0.99\nbeta_end=0.1").is_err());
        assert!(RunConfig::parse("resolution=24").is_err());
    }

    #[test]
    fn derived_sizes_at_desk_default() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.bottleneck_res(), 2);
        assert_eq!(cfg.bank_base_res(), 4);
        assert_eq!(cfg.decoder_widths(), vec![256, 256, 256, 256, 128, 128, 64, 64]);
    }
}
