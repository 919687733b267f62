//! End-to-end inference over trained artifacts: load the checkpoint set,
//! restore images, and optionally trace the denoising chain (per-step codes
//! plus their inverted images).

use std::path::Path;

use vsp_tensor::{no_grad, rng as trng, Checkpoint, Tensor};

use crate::bank::FeatureBank;
use crate::config::{ModelVariant, RunConfig};
use crate::diffuser::CodeDiffuser;
use crate::diffusion::{sample, NoiseSchedule};
use crate::error::Result;
use crate::image::Image;
use crate::restorer::RestorationNet;
use crate::train;

pub struct Pipeline {
    pub cfg: RunConfig,
    pub bank: FeatureBank<f32>,
    pub diffuser: Option<CodeDiffuser<f32>>,
    pub net: RestorationNet<f32>,
}

/// One denoising-trace entry: the codes after a step and their inverted
/// rendering.
pub struct TraceStep {
    /// Diffusion step index this entry left (T down to 1).
    pub step: usize,
    pub codes: Tensor<f32>,
    pub inverted: Image,
}

pub struct Restored {
    pub output: Image,
    pub trace: Vec<TraceStep>,
}

impl Pipeline {
    /// Load the checkpoint set from a directory. Every stage artifact must
    /// be present (the diffuser is skipped under the no_diffuser variant).
    pub fn load(cfg: &RunConfig, dir: &Path) -> Result<Self> {
        let bank = train::load_bank(cfg, dir)?;
        let diffuser = if cfg.model_variant == ModelVariant::NoDiffuser {
            None
        } else {
            Some(train::load_diffuser(cfg, dir)?)
        };
        let (net, _) = train::load_restorer(cfg, dir)?;
        bank.validate_against(&net.decoder.prior_slots())?;
        Ok(Pipeline {
            cfg: cfg.clone(),
            bank,
            diffuser,
            net,
        })
    }

    pub fn restore(&self, degraded: &Image, with_trace: bool) -> Result<Restored> {
        let cfg = &self.cfg;
        let degraded_t = degraded.to_tensor::<f32>();
        let sched = NoiseSchedule::linear(cfg.t_steps, cfg.beta_start, cfg.beta_end)?;
        no_grad(|| -> Result<Restored> {
            let w_hat = self.bank.encode_style(&degraded_t)?;
            let mut trace_codes = Vec::new();
            let w0 = match (&self.diffuser, cfg.model_variant) {
                (Some(d), v) if v != ModelVariant::NoDiffuser => {
                    let mut chain_rng = trng::stream(cfg.seed, "restore/chain", 0);
                    sample(
                        d,
                        &w_hat,
                        &sched,
                        &mut chain_rng,
                        if with_trace {
                            Some(&mut trace_codes)
                        } else {
                            None
                        },
                    )?
                }
                _ => w_hat.clone(),
            };
            let mut trace = Vec::new();
            if with_trace {
                // skip the pure-noise start; one entry per denoising step
                for (i, codes) in trace_codes.iter().skip(1).enumerate() {
                    let (_, inverted) = self.bank.generate(codes)?;
                    trace.push(TraceStep {
                        step: cfg.t_steps - i,
                        codes: codes.clone(),
                        inverted: Image::from_tensor(&inverted)?,
                    });
                }
            }
            let priors = if cfg.model_variant == ModelVariant::NoPrior {
                None
            } else {
                Some(self.bank.generate(&w0)?.0)
            };
            let z: Tensor<f32> = trng::randn_tensor(
                &mut trng::stream(cfg.seed, "restore/z", 0),
                &[cfg.code_dim, 1],
            );
            let z_hat = self.net.mapping.forward(&z)?;
            let (i_out, _) = self
                .net
                .forward(&degraded_t, &w0, &z_hat, priors.as_deref())?;
            Ok(Restored {
                output: Image::from_tensor(&i_out)?,
                trace,
            })
        })
    }

    /// Write the restored image; with tracing, also write per-step inverted
    /// images and a checkpoint-format file of the per-step code tensors.
    pub fn restore_to_files(
        &self,
        input: &Path,
        output: &Path,
        trace_dir: Option<&Path>,
    ) -> Result<()> {
        let degraded = Image::read_ppm(input)?;
        let restored = self.restore(&degraded, trace_dir.is_some())?;
        restored.output.write_ppm(output)?;
        if let Some(dir) = trace_dir {
            std::fs::create_dir_all(dir)?;
            let mut ck = Checkpoint::new();
            for step in &restored.trace {
                step.inverted
                    .write_ppm(&dir.join(format!("inverted_step_{}.ppm", step.step)))?;
                ck.insert(&format!("trace/step_{}", step.step), &step.codes);
            }
            ck.write(&dir.join("trace_codes.vspt"))?;
        }
        Ok(())
    }
}
