//! The three training stages and their shared plumbing: deterministic batch
//! assembly, metrics CSV, periodic checkpoints with optimizer state, resume,
//! and the stage-order contract. Every random draw in a step comes from a
//! stream keyed by (seed, stage, step), so rerunning or resuming any stage
//! reproduces it bitwise.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use vsp_tensor::{backward, no_grad, rng as trng, Checkpoint, Tensor};

use crate::bank::FeatureBank;
use crate::config::{ModelVariant, RunConfig};
use crate::corpus;
use crate::degrade::{degrade, sample_params};
use crate::diffuser::CodeDiffuser;
use crate::diffusion::{diffuse_marginal, sample, NoiseSchedule, NoisePredictor};
use crate::error::{CoreError, Result};
use crate::image::{psnr, Image};
use crate::losses::{adversarial_d_loss, adversarial_g_loss, IdentityNet, PerceptualNet};
use crate::nn::Module;
use crate::optim::Adam;
use crate::restorer::{Discriminator, RestorationNet};
use crate::CoreError::StageOrder;

pub const BANK_CKPT: &str = "bank.vspt";
pub const DIFFUSER_CKPT: &str = "diffuser.vspt";
pub const RESTORER_CKPT: &str = "restorer.vspt";

/// Keys that must agree between dependent stages (model geometry and the
/// seeds that fix frozen components). The model variant and step budgets
/// may differ.
fn arch_fingerprint(cfg: &RunConfig) -> String {
    format!(
        "seed={};res={};d={};n={};widths={:?};t={};b0={};b1={};ps={};is={}",
        cfg.seed,
        cfg.resolution,
        cfg.code_dim,
        cfg.num_styles,
        cfg.widths,
        cfg.t_steps,
        cfg.beta_start,
        cfg.beta_end,
        cfg.perceptual_seed,
        cfg.identity_seed
    )
}

fn encode_config(ck: &mut Checkpoint, cfg: &RunConfig, step: usize) {
    let bytes: Vec<f32> = cfg.to_text().bytes().map(|b| b as f32).collect();
    let n = bytes.len();
    ck.insert_raw("meta/config", vec![n], bytes);
    ck.insert_raw("meta/step", vec![1], vec![step as f32]);
}

pub fn decode_config(ck: &Checkpoint) -> Result<(RunConfig, usize)> {
    let (_, bytes) = ck
        .get_raw("meta/config")
        .ok_or_else(|| CoreError::Training("checkpoint has no embedded config".into()))?;
    let text: String = bytes.iter().map(|&b| b as u8 as char).collect();
    let cfg = RunConfig::parse(&text)?;
    let (_, step) = ck
        .get_raw("meta/step")
        .ok_or_else(|| CoreError::Training("checkpoint has no step counter".into()))?;
    Ok((cfg, step[0] as usize))
}

fn check_dependency(cfg: &RunConfig, stored: &RunConfig, what: &str) -> Result<()> {
    if arch_fingerprint(cfg) != arch_fingerprint(stored) {
        return Err(StageOrder(format!(
            "{what} was trained with an incompatible config"
        )));
    }
    Ok(())
}

/// Clean training images plus a held-out evaluation set with fixed
/// degradations.
pub struct TrainingData {
    pub train: Vec<Image>,
    pub eval_clean: Vec<Image>,
    pub eval_degraded: Vec<Image>,
}

pub fn load_training_data(cfg: &RunConfig) -> Result<TrainingData> {
    let dir = PathBuf::from(&cfg.corpus_dir);
    let all = corpus::load_corpus(&dir)?;
    let needed = cfg.corpus_train + cfg.corpus_eval;
    if all.len() < needed {
        return Err(CoreError::Training(format!(
            "corpus has {} images, config needs {needed}",
            all.len()
        )));
    }
    let train: Vec<Image> = all[..cfg.corpus_train]
        .iter()
        .map(|(_, im)| im.clone())
        .collect();
    let eval_clean: Vec<Image> = all[cfg.corpus_train..needed]
        .iter()
        .map(|(_, im)| im.clone())
        .collect();
    let mut eval_degraded = Vec::with_capacity(eval_clean.len());
    for (i, im) in eval_clean.iter().enumerate() {
        let mut rng = trng::stream(cfg.seed, "eval/deg", i as u64);
        let params = sample_params(&mut rng);
        let dseed = rng.gen::<u64>();
        eval_degraded.push(degrade(im, &params, dseed)?);
    }
    Ok(TrainingData {
        train,
        eval_clean,
        eval_degraded,
    })
}

/// One clean/degraded training pair drawn from the step stream.
fn training_pair(
    data: &TrainingData,
    rng: &mut ChaCha8Rng,
) -> Result<(Image, Image)> {
    let idx = rng.gen_range(0..data.train.len());
    let clean = data.train[idx].clone();
    let params = sample_params(rng);
    let dseed = rng.gen::<u64>();
    let degraded = degrade(&clean, &params, dseed)?;
    Ok((clean, degraded))
}

/// Append-only metrics table flushed with every checkpoint.
struct MetricsCsv {
    path: PathBuf,
    header: &'static str,
    rows: Vec<String>,
}

impl MetricsCsv {
    fn new(path: PathBuf, header: &'static str) -> Self {
        MetricsCsv {
            path,
            header,
            rows: Vec::new(),
        }
    }

    /// On resume, keep only rows at or below `step`.
    fn resume(&mut self, step: usize) -> Result<()> {
        if !self.path.exists() {
            return Ok(());
        }
        let text = std::fs::read_to_string(&self.path)?;
        for line in text.lines().skip(1) {
            let first = line.split(',').next().unwrap_or("0");
            if first.parse::<usize>().map_err(|_| {
                CoreError::Training(format!("bad metrics row in {:?}", self.path))
            })? <= step
            {
                self.rows.push(line.to_string());
            }
        }
        Ok(())
    }

    fn push(&mut self, row: String) {
        self.rows.push(row);
    }

    fn flush(&self) -> Result<()> {
        let mut text = String::with_capacity(self.rows.len() * 64);
        text.push_str(self.header);
        text.push('\n');
        for r in &self.rows {
            text.push_str(r);
            text.push('\n');
        }
        std::fs::write(&self.path, text)?;
        Ok(())
    }
}

fn non_finite_dump(
    out_dir: &Path,
    stage: &str,
    step: usize,
    cfg: &RunConfig,
    params: &crate::nn::ParamSet<f32>,
    detail: &str,
) -> CoreError {
    let mut ck = Checkpoint::new();
    encode_config(&mut ck, cfg, step);
    params.save_into(&mut ck);
    let path = out_dir.join(format!("{stage}_diagnostic.vspt"));
    let _ = ck.write(&path);
    CoreError::Training(format!(
        "non-finite loss at {stage} step {step} ({detail}); state dumped to {}",
        path.display()
    ))
}

// ---------------------------------------------------------------------------
// Stage 1: feature bank pretraining
// ---------------------------------------------------------------------------

pub struct BankResult {
    pub bank: FeatureBank<f32>,
    pub eval_psnr: f64,
}

/// Reconstruction PSNR of encode-then-generate on clean images.
pub fn eval_bank_psnr(bank: &FeatureBank<f32>, images: &[Image]) -> Result<f64> {
    let mut total = 0.0;
    for im in images {
        let t = im.to_tensor::<f32>();
        let recon = no_grad(|| -> Result<Tensor<f32>> {
            let codes = bank.encode_style(&t)?;
            Ok(bank.generate(&codes)?.1)
        })?;
        let out = Image::from_tensor(&recon)?;
        total += psnr(im, &out).min(60.0);
    }
    Ok(total / images.len() as f64)
}

/// Train generator + encoder jointly as an autoencoder on clean images,
/// with the encoder also fed degraded inputs against clean targets. Fails
/// loudly if the reconstruction gate is not reached.
pub fn pretrain_bank(cfg: &RunConfig, out_dir: &Path) -> Result<BankResult> {
    std::fs::create_dir_all(out_dir)?;
    let data = load_training_data(cfg)?;
    let bank = FeatureBank::<f32>::new(cfg);
    let params = bank.params("bank");
    let mut opt = Adam::new(&params, cfg.bank_lr, 0.9, cfg.adam_beta2);
    let mut csv = MetricsCsv::new(out_dir.join("bank_metrics.csv"), "step,loss,eval_psnr");

    let ckpt_path = out_dir.join(BANK_CKPT);
    let mut start_step = 0usize;
    if ckpt_path.exists() {
        let ck = Checkpoint::read(&ckpt_path)?;
        let (stored, step) = decode_config(&ck)?;
        check_dependency(cfg, &stored, "existing bank checkpoint")?;
        params.load_from(&ck)?;
        opt.load_from(&ck, "opt/bank")?;
        start_step = step;
        csv.resume(step)?;
    }

    for step in start_step + 1..=cfg.bank_steps {
        let mut rng = trng::stream(cfg.seed, "bank/step", step as u64);
        let mut loss_acc = Tensor::<f32>::zeros(&[1]);
        for _ in 0..cfg.bank_batch {
            let (clean, degraded) = training_pair(&data, &mut rng)?;
            let clean_t = clean.to_tensor::<f32>();
            let degraded_t = degraded.to_tensor::<f32>();
            let recon_clean = bank.generate(&bank.encode_style(&clean_t)?)?.1;
            let recon_degraded = bank.generate(&bank.encode_style(&degraded_t)?)?.1;
            let l = vsp_tensor::mse(&recon_clean, &clean_t)?
                .add(&vsp_tensor::mse(&recon_degraded, &clean_t)?)?;
            loss_acc = loss_acc.add(&l)?;
        }
        let loss = loss_acc.scale(1.0 / cfg.bank_batch as f64);
        if !loss.all_finite() {
            return Err(non_finite_dump(out_dir, "bank", step, cfg, &params, "loss"));
        }
        backward(&loss)?;
        opt.step(&params);

        let mut row = format!("{step},{}", loss.item());
        if step % cfg.eval_every == 0 {
            let quick = eval_bank_psnr(&bank, &data.eval_clean[..data.eval_clean.len().min(16)])?;
            let _ = write!(row, ",{quick:.6}");
        } else {
            row.push(',');
        }
        csv.push(row);

        if step % cfg.checkpoint_every == 0 || step == cfg.bank_steps {
            let mut ck = Checkpoint::new();
            encode_config(&mut ck, cfg, step);
            params.save_into(&mut ck);
            opt.save_into(&mut ck, "opt/bank");
            ck.write(&ckpt_path)?;
            csv.flush()?;
        }
    }
    csv.flush()?;

    let eval_psnr = eval_bank_psnr(&bank, &data.eval_clean)?;
    if eval_psnr <= cfg.bank_psnr_gate {
        return Err(CoreError::Training(format!(
            "feature bank failed its reconstruction gate: {eval_psnr:.2} dB <= {} dB after {} steps",
            cfg.bank_psnr_gate, cfg.bank_steps
        )));
    }
    bank.freeze();
    Ok(BankResult { bank, eval_psnr })
}

/// Load a frozen bank, checking stage order and config compatibility.
pub fn load_bank(cfg: &RunConfig, out_dir: &Path) -> Result<FeatureBank<f32>> {
    let path = out_dir.join(BANK_CKPT);
    if !path.exists() {
        return Err(StageOrder(format!(
            "missing {} — run pretrain-bank first",
            path.display()
        )));
    }
    let ck = Checkpoint::read(&path)?;
    let (stored, _) = decode_config(&ck)?;
    check_dependency(cfg, &stored, "feature bank")?;
    let bank = FeatureBank::<f32>::new(cfg);
    bank.params("bank").load_from(&ck)?;
    bank.freeze();
    Ok(bank)
}

// ---------------------------------------------------------------------------
// Stage 2: code diffuser training
// ---------------------------------------------------------------------------

pub struct DiffuserResult {
    pub diffuser: CodeDiffuser<f32>,
}

pub fn train_diffuser(cfg: &RunConfig, out_dir: &Path) -> Result<DiffuserResult> {
    std::fs::create_dir_all(out_dir)?;
    let bank = load_bank(cfg, out_dir)?;
    let bank_hash = bank.params("bank").weight_hash();
    let data = load_training_data(cfg)?;
    let sched = NoiseSchedule::linear(cfg.t_steps, cfg.beta_start, cfg.beta_end)?;
    let perceptual = PerceptualNet::<f32>::new(cfg.perceptual_seed);
    let identity = IdentityNet::<f32>::new(cfg.identity_seed, cfg.resolution);

    let diffuser = CodeDiffuser::<f32>::new(cfg.seed, cfg.code_dim, cfg.num_styles, cfg.t_steps);
    let params = diffuser.params("diffuser");
    let mut opt = Adam::new(&params, cfg.lr, cfg.adam_beta1, cfg.adam_beta2);
    let mut csv = MetricsCsv::new(
        out_dir.join("diffuser_metrics.csv"),
        "step,l_dm,l_lpips,l_id,total",
    );

    let ckpt_path = out_dir.join(DIFFUSER_CKPT);
    let mut start_step = 0usize;
    if ckpt_path.exists() {
        let ck = Checkpoint::read(&ckpt_path)?;
        let (stored, step) = decode_config(&ck)?;
        check_dependency(cfg, &stored, "existing diffuser checkpoint")?;
        params.load_from(&ck)?;
        opt.load_from(&ck, "opt/diffuser")?;
        start_step = step;
        csv.resume(step)?;
    }

    for step in start_step + 1..=cfg.diffuser_steps {
        let mut rng = trng::stream(cfg.seed, "diffuser/step", step as u64);
        let mut dm_acc = Tensor::<f32>::zeros(&[1]);
        let mut lp_acc = Tensor::<f32>::zeros(&[1]);
        let mut id_acc = Tensor::<f32>::zeros(&[1]);
        for _ in 0..cfg.diffuser_batch {
            let (clean, degraded) = training_pair(&data, &mut rng)?;
            let clean_t = clean.to_tensor::<f32>();
            let degraded_t = degraded.to_tensor::<f32>();
            let (w0_target, w_hat) = no_grad(|| -> Result<_> {
                Ok((
                    bank.encode_style(&clean_t)?,
                    bank.encode_style(&degraded_t)?,
                ))
            })?;

            // noise-prediction term at a uniformly sampled step
            let t = rng.gen_range(1..=cfg.t_steps);
            let eps: Tensor<f32> =
                trng::randn_tensor(&mut rng, &[cfg.code_dim, cfg.num_styles]);
            let w_t = diffuse_marginal(&w0_target, t, &eps, &sched)?;
            let eps_hat = diffuser.predict(&w_t, &w_hat, t)?;
            dm_acc = dm_acc.add(&vsp_tensor::mse(&eps, &eps_hat)?)?;

            // full-chain terms on the sampled codes
            let mut chain_rng = trng::stream(
                cfg.seed,
                "diffuser/chain",
                (step as u64) << 8 | rng.gen_range(0..=255u64),
            );
            let w0_sampled = sample(&diffuser, &w_hat, &sched, &mut chain_rng, None)?;
            let (_, inverted) = bank.generate(&w0_sampled)?;
            lp_acc = lp_acc.add(&perceptual.loss(&inverted, &clean_t)?)?;
            id_acc = id_acc.add(&identity.loss(&inverted, &clean_t)?)?;
        }
        let inv_b = 1.0 / cfg.diffuser_batch as f64;
        let l_dm = dm_acc.scale(inv_b);
        let l_lpips = lp_acc.scale(inv_b);
        let l_id = id_acc.scale(inv_b);
        let total = l_dm
            .add(&l_lpips.scale(cfg.lambda_lpips))?
            .add(&l_id.scale(cfg.lambda_id))?;
        if !total.all_finite() {
            return Err(non_finite_dump(
                out_dir, "diffuser", step, cfg, &params, "total loss",
            ));
        }
        backward(&total)?;
        opt.step(&params);

        csv.push(format!(
            "{step},{},{},{},{}",
            l_dm.item(),
            l_lpips.item(),
            l_id.item(),
            total.item()
        ));
        if step % cfg.checkpoint_every == 0 || step == cfg.diffuser_steps {
            let mut ck = Checkpoint::new();
            encode_config(&mut ck, cfg, step);
            params.save_into(&mut ck);
            opt.save_into(&mut ck, "opt/diffuser");
            ck.write(&ckpt_path)?;
            csv.flush()?;
        }
    }
    csv.flush()?;

    if bank.params("bank").weight_hash() != bank_hash {
        return Err(CoreError::Training(
            "frozen feature bank changed during diffuser training".into(),
        ));
    }
    Ok(DiffuserResult { diffuser })
}

pub fn load_diffuser(cfg: &RunConfig, out_dir: &Path) -> Result<CodeDiffuser<f32>> {
    let path = out_dir.join(DIFFUSER_CKPT);
    if !path.exists() {
        return Err(StageOrder(format!(
            "missing {} — run train-diffuser first",
            path.display()
        )));
    }
    let ck = Checkpoint::read(&path)?;
    let (stored, _) = decode_config(&ck)?;
    check_dependency(cfg, &stored, "code diffuser")?;
    let diffuser = CodeDiffuser::<f32>::new(cfg.seed, cfg.code_dim, cfg.num_styles, cfg.t_steps);
    let params = diffuser.params("diffuser");
    params.load_from(&ck)?;
    params.set_requires_grad(false);
    Ok(diffuser)
}

// ---------------------------------------------------------------------------
// Stage 3: restoration network training
// ---------------------------------------------------------------------------

pub struct RestorerResult {
    pub net: RestorationNet<f32>,
    pub discriminator: Discriminator<f32>,
}

/// Style prompts for one degraded image under the configured variant.
pub fn style_codes_for(
    cfg: &RunConfig,
    bank: &FeatureBank<f32>,
    diffuser: Option<&CodeDiffuser<f32>>,
    sched: &NoiseSchedule,
    degraded_t: &Tensor<f32>,
    chain_rng: &mut ChaCha8Rng,
) -> Result<Tensor<f32>> {
    no_grad(|| -> Result<Tensor<f32>> {
        let w_hat = bank.encode_style(degraded_t)?;
        match (cfg.model_variant, diffuser) {
            (ModelVariant::NoDiffuser, _) | (_, None) => Ok(w_hat),
            (_, Some(d)) => sample(d, &w_hat, sched, chain_rng, None),
        }
    })
}

pub fn train_restorer(cfg: &RunConfig, out_dir: &Path) -> Result<RestorerResult> {
    std::fs::create_dir_all(out_dir)?;
    let bank = load_bank(cfg, out_dir)?;
    let diffuser = if cfg.model_variant == ModelVariant::NoDiffuser {
        None
    } else {
        Some(load_diffuser(cfg, out_dir)?)
    };
    let bank_hash = bank.params("bank").weight_hash();
    let data = load_training_data(cfg)?;
    let sched = NoiseSchedule::linear(cfg.t_steps, cfg.beta_start, cfg.beta_end)?;
    let perceptual = PerceptualNet::<f32>::new(cfg.perceptual_seed);
    let identity = IdentityNet::<f32>::new(cfg.identity_seed, cfg.resolution);
    let perceptual_hash = perceptual.params("perceptual").weight_hash();

    let net = RestorationNet::<f32>::new(cfg);
    let disc = Discriminator::<f32>::new(cfg.seed, cfg.resolution);
    bank.validate_against(&net.decoder.prior_slots())?;
    let mut g_params = net.params("restorer");
    net.mapping.collect_params("mapping", &mut g_params);
    let d_params = disc.params("discriminator");
    let mut opt_g = Adam::new(&g_params, cfg.lr, cfg.adam_beta1, cfg.adam_beta2);
    let mut opt_d = Adam::new(&d_params, cfg.lr, cfg.adam_beta1, cfg.adam_beta2);
    let mut csv = MetricsCsv::new(
        out_dir.join("restorer_metrics.csv"),
        "step,g_adv,g_lpips,g_id,g_total,d_loss,r1,eval_psnr",
    );

    let ckpt_name = restorer_ckpt_name(cfg.model_variant);
    let ckpt_path = out_dir.join(&ckpt_name);
    let mut start_step = 0usize;
    if ckpt_path.exists() {
        let ck = Checkpoint::read(&ckpt_path)?;
        let (stored, step) = decode_config(&ck)?;
        check_dependency(cfg, &stored, "existing restorer checkpoint")?;
        if stored.model_variant != cfg.model_variant {
            return Err(StageOrder(
                "existing restorer checkpoint has a different model variant".into(),
            ));
        }
        g_params.load_from(&ck)?;
        d_params.load_from(&ck)?;
        opt_g.load_from(&ck, "opt/g")?;
        opt_d.load_from(&ck, "opt/d")?;
        start_step = step;
        csv.resume(step)?;
    }

    for step in start_step + 1..=cfg.restorer_steps {
        let mut rng = trng::stream(cfg.seed, "restorer/step", step as u64);
        // assemble the batch (shared by the G and D phases)
        let mut batch = Vec::with_capacity(cfg.restorer_batch);
        for _ in 0..cfg.restorer_batch {
            let (clean, degraded) = training_pair(&data, &mut rng)?;
            let clean_t = clean.to_tensor::<f32>();
            let degraded_t = degraded.to_tensor::<f32>();
            let mut chain_rng = trng::stream(
                cfg.seed,
                "restorer/chain",
                (step as u64) << 8 | batch.len() as u64,
            );
            let w0 = style_codes_for(
                cfg,
                &bank,
                diffuser.as_ref(),
                &sched,
                &degraded_t,
                &mut chain_rng,
            )?;
            let priors = if cfg.model_variant == ModelVariant::NoPrior {
                None
            } else {
                Some(no_grad(|| bank.generate(&w0))?.0)
            };
            let z: Tensor<f32> = trng::randn_tensor(&mut rng, &[cfg.code_dim, 1]);
            batch.push((clean_t, degraded_t, w0, priors, z));
        }

        // generator/mapping phase
        let mut adv_acc = Tensor::<f32>::zeros(&[1]);
        let mut lp_acc = Tensor::<f32>::zeros(&[1]);
        let mut id_acc = Tensor::<f32>::zeros(&[1]);
        let mut fakes = Vec::with_capacity(batch.len());
        for (clean_t, degraded_t, w0, priors, z) in &batch {
            let z_hat = net.mapping.forward(z)?;
            let (i_out, _) = net.forward(degraded_t, w0, &z_hat, priors.as_deref())?;
            adv_acc = adv_acc.add(&adversarial_g_loss(|x| disc.forward(x), &i_out)?)?;
            lp_acc = lp_acc.add(&perceptual.loss(&i_out, clean_t)?)?;
            id_acc = id_acc.add(&identity.loss(&i_out, clean_t)?)?;
            fakes.push(i_out.detach());
        }
        let inv_b = 1.0 / cfg.restorer_batch as f64;
        let g_adv = adv_acc.scale(inv_b);
        let g_lpips = lp_acc.scale(inv_b);
        let g_id = id_acc.scale(inv_b);
        let g_total = g_adv
            .add(&g_lpips.scale(cfg.restorer_lambda_lpips))?
            .add(&g_id.scale(cfg.restorer_lambda_id))?;
        if !g_total.all_finite() {
            return Err(non_finite_dump(
                out_dir, "restorer", step, cfg, &g_params, "generator loss",
            ));
        }
        backward(&g_total)?;
        opt_g.step(&g_params);
        d_params.zero_grads(); // adversarial term leaked grads into D

        // discriminator phase
        let mut d_acc = Tensor::<f32>::zeros(&[1]);
        let mut r1_acc = Tensor::<f32>::zeros(&[1]);
        for ((clean_t, ..), fake) in batch.iter().zip(&fakes) {
            let (d_loss, r1) =
                adversarial_d_loss(|x| disc.forward(x), fake, clean_t, cfg.r1_gamma)?;
            d_acc = d_acc.add(&d_loss)?;
            r1_acc = r1_acc.add(&r1)?;
        }
        let d_loss = d_acc.scale(inv_b);
        let r1 = r1_acc.scale(inv_b);
        if !d_loss.all_finite() {
            return Err(non_finite_dump(
                out_dir, "restorer", step, cfg, &d_params, "discriminator loss",
            ));
        }
        backward(&d_loss)?;
        opt_d.step(&d_params);
        g_params.zero_grads();

        let mut row = format!(
            "{step},{},{},{},{},{},{}",
            g_adv.item(),
            g_lpips.item(),
            g_id.item(),
            g_total.item(),
            d_loss.item(),
            r1.item()
        );
        if step % cfg.eval_every == 0 {
            let quick = eval_restorer_psnr_gain(
                cfg,
                &bank,
                diffuser.as_ref(),
                &net,
                &data,
                16.min(data.eval_clean.len()),
            )?;
            let _ = write!(row, ",{:.6}", quick.mean_out_psnr);
        } else {
            row.push(',');
        }
        csv.push(row);

        if step % cfg.checkpoint_every == 0 || step == cfg.restorer_steps {
            let mut ck = Checkpoint::new();
            encode_config(&mut ck, cfg, step);
            g_params.save_into(&mut ck);
            d_params.save_into(&mut ck);
            opt_g.save_into(&mut ck, "opt/g");
            opt_d.save_into(&mut ck, "opt/d");
            ck.write(&ckpt_path)?;
            csv.flush()?;
        }
    }
    csv.flush()?;

    if bank.params("bank").weight_hash() != bank_hash {
        return Err(CoreError::Training(
            "frozen feature bank changed during restorer training".into(),
        ));
    }
    if perceptual.params("perceptual").weight_hash() != perceptual_hash {
        return Err(CoreError::Training(
            "frozen perceptual backbone changed during restorer training".into(),
        ));
    }
    Ok(RestorerResult {
        net,
        discriminator: disc,
    })
}

pub fn restorer_ckpt_name(variant: ModelVariant) -> String {
    match variant {
        ModelVariant::Full => RESTORER_CKPT.to_string(),
        other => format!("restorer_{}.vspt", other.as_str()),
    }
}

pub fn load_restorer(
    cfg: &RunConfig,
    out_dir: &Path,
) -> Result<(RestorationNet<f32>, Discriminator<f32>)> {
    let path = out_dir.join(restorer_ckpt_name(cfg.model_variant));
    if !path.exists() {
        return Err(StageOrder(format!(
            "missing {} — run train-restorer first",
            path.display()
        )));
    }
    let ck = Checkpoint::read(&path)?;
    let (stored, _) = decode_config(&ck)?;
    check_dependency(cfg, &stored, "restorer")?;
    if stored.model_variant != cfg.model_variant {
        return Err(StageOrder(
            "restorer checkpoint has a different model variant".into(),
        ));
    }
    let net = RestorationNet::<f32>::new(cfg);
    let disc = Discriminator::<f32>::new(cfg.seed, cfg.resolution);
    let mut g_params = net.params("restorer");
    net.mapping.collect_params("mapping", &mut g_params);
    g_params.load_from(&ck)?;
    disc.params("discriminator").load_from(&ck)?;
    Ok((net, disc))
}

// ---------------------------------------------------------------------------
// Evaluation helpers
// ---------------------------------------------------------------------------

/// End-to-end restoration of one degraded image (the shared inference path).
pub fn restore_tensor(
    cfg: &RunConfig,
    bank: &FeatureBank<f32>,
    diffuser: Option<&CodeDiffuser<f32>>,
    net: &RestorationNet<f32>,
    degraded_t: &Tensor<f32>,
    sample_index: u64,
) -> Result<Tensor<f32>> {
    let sched = NoiseSchedule::linear(cfg.t_steps, cfg.beta_start, cfg.beta_end)?;
    no_grad(|| -> Result<Tensor<f32>> {
        let mut chain_rng = trng::stream(cfg.seed, "restore/chain", sample_index);
        let w0 = style_codes_for(cfg, bank, diffuser, &sched, degraded_t, &mut chain_rng)?;
        let priors = if cfg.model_variant == ModelVariant::NoPrior {
            None
        } else {
            Some(bank.generate(&w0)?.0)
        };
        let z: Tensor<f32> =
            trng::randn_tensor(&mut trng::stream(cfg.seed, "restore/z", sample_index), &[
                cfg.code_dim,
                1,
            ]);
        let z_hat = net.mapping.forward(&z)?;
        let (i_out, _) = net.forward(degraded_t, &w0, &z_hat, priors.as_deref())?;
        Ok(i_out)
    })
}

pub struct RestoreEval {
    pub gain_fraction: f64,
    pub mean_out_psnr: f64,
    pub mean_de_psnr: f64,
    pub mean_perceptual: f64,
}

/// PSNR gain statistics over the first `count` held-out pairs.
pub fn eval_restorer_psnr_gain(
    cfg: &RunConfig,
    bank: &FeatureBank<f32>,
    diffuser: Option<&CodeDiffuser<f32>>,
    net: &RestorationNet<f32>,
    data: &TrainingData,
    count: usize,
) -> Result<RestoreEval> {
    let perceptual = PerceptualNet::<f32>::new(cfg.perceptual_seed);
    let mut gains = 0usize;
    let mut out_sum = 0.0;
    let mut de_sum = 0.0;
    let mut lp_sum = 0.0;
    for i in 0..count {
        let clean = &data.eval_clean[i];
        let degraded = &data.eval_degraded[i];
        let degraded_t = degraded.to_tensor::<f32>();
        let out_t = restore_tensor(cfg, bank, diffuser, net, &degraded_t, i as u64)?;
        let out = Image::from_tensor(&out_t)?;
        let p_out = psnr(clean, &out).min(60.0);
        let p_de = psnr(clean, degraded).min(60.0);
        if p_out > p_de {
            gains += 1;
        }
        out_sum += p_out;
        de_sum += p_de;
        lp_sum += no_grad(|| perceptual.loss(&out_t, &clean.to_tensor::<f32>()))?
            .item() as f64;
    }
    Ok(RestoreEval {
        gain_fraction: gains as f64 / count as f64,
        mean_out_psnr: out_sum / count as f64,
        mean_de_psnr: de_sum / count as f64,
        mean_perceptual: lp_sum / count as f64,
    })
}

/// Per-step code MSE along the denoising trace, averaged over held-out
/// pairs: entry 0 is the w_T noise start, the last entry is w_0. Also
/// returns the mean MSE of the raw encoder codes for the same pairs.
pub fn eval_diffuser_trace(
    cfg: &RunConfig,
    bank: &FeatureBank<f32>,
    diffuser: &CodeDiffuser<f32>,
    data: &TrainingData,
    count: usize,
) -> Result<(Vec<f64>, f64)> {
    let sched = NoiseSchedule::linear(cfg.t_steps, cfg.beta_start, cfg.beta_end)?;
    let mut per_step = vec![0.0f64; cfg.t_steps + 1];
    let mut w_hat_mse = 0.0f64;
    no_grad(|| -> Result<()> {
        for i in 0..count {
            let clean_t = data.eval_clean[i].to_tensor::<f32>();
            let degraded_t = data.eval_degraded[i].to_tensor::<f32>();
            let w_clean = bank.encode_style(&clean_t)?;
            let w_hat = bank.encode_style(&degraded_t)?;
            let mut trace = Vec::new();
            let mut chain_rng = trng::stream(cfg.seed, "eval/chain", i as u64);
            let _ = sample(diffuser, &w_hat, &sched, &mut chain_rng, Some(&mut trace))?;
            for (s, w) in trace.iter().enumerate() {
                per_step[s] += vsp_tensor::mse(w, &w_clean)?.item() as f64;
            }
            w_hat_mse += vsp_tensor::mse(&w_hat, &w_clean)?.item() as f64;
        }
        Ok(())
    })?;
    for v in &mut per_step {
        *v /= count as f64;
    }
    Ok((per_step, w_hat_mse / count as f64))
}
