//! Finite-difference checks above the op level: composite losses, the
//! attention blocks, style convolutions, and whole-network probes in f64.
//! Together with the engine's own op suite this is what the `gradcheck`
//! command runs.

use vsp_tensor::gradcheck::{check_fn, check_fn_sampled, GradCheckReport};
use vsp_tensor::{rng as trng, Tensor, TensorError};

use crate::config::RunConfig;
use crate::diffuser::{CodeDiffuser, TaccBlock};
use crate::diffusion::{denoise_step, diffuse_marginal, diffuse_step, NoiseSchedule};
use crate::losses::{IdentityNet, PerceptualNet};
use crate::nn::Module;
use crate::restorer::{Discriminator, MappingNetwork, RestorationNet};
use crate::styleops::{modulate_demodulate, SmartLayer, StyleConv};

type TR = std::result::Result<Tensor<f64>, TensorError>;

fn wrap(e: crate::CoreError) -> TensorError {
    TensorError::invalid("core-suite", e.to_string())
}

fn small_cfg() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.resolution = 16;
    cfg.code_dim = 8;
    cfg.num_styles = 4;
    cfg.widths = vec![8, 8, 12, 12];
    cfg
}

fn readout(out: &Tensor<f64>, seed: u64) -> TR {
    let w = trng::randn_tensor::<f64>(&mut trng::stream(seed, "core-readout", 3), &out.shape());
    out.mul(&w)?.sum_all()
}

/// All params of a module as check inputs (they keep requires_grad).
fn param_tensors<M: Module<f64>>(m: &M) -> Vec<Tensor<f64>> {
    m.params("gc").iter().map(|(_, t)| t.clone()).collect()
}

pub fn core_suite() -> Vec<GradCheckReport> {
    let mut reports = Vec::new();
    let mut push = |r: std::result::Result<GradCheckReport, TensorError>| match r {
        Ok(rep) => reports.push(rep),
        Err(e) => panic!("core gradcheck failed to run: {e}"),
    };

    // schedule arithmetic end to end
    push((|| {
        let sched = NoiseSchedule::linear(4, 0.1, 0.99).map_err(wrap)?;
        let mut r = trng::stream(1, "sched", 0);
        let w0: Tensor<f64> = trng::randn_tensor(&mut r, &[4, 2]);
        let eps: Tensor<f64> = trng::randn_tensor(&mut r, &[4, 2]);
        let ebar: Tensor<f64> = trng::randn_tensor(&mut r, &[4, 2]);
        check_fn("schedule_ops", &[w0, eps, ebar], |ins| {
            let mut acc = Tensor::<f64>::zeros(&[1]);
            let sched = NoiseSchedule::linear(4, 0.1, 0.99).map_err(wrap)?;
            for t in 1..=4 {
                let wt = diffuse_marginal(&ins[0], t, &ins[1], &sched).map_err(wrap)?;
                let ws = diffuse_step(&ins[0], t, &ins[1], &sched).map_err(wrap)?;
                let dn =
                    denoise_step(&wt, &ins[1], t, &sched, Some(&ins[2])).map_err(wrap)?;
                acc = acc
                    .add(&readout(&wt, t as u64)?)?
                    .add(&readout(&ws, 10 + t as u64)?)?
                    .add(&readout(&dn, 20 + t as u64)?)?;
            }
            Ok(acc)
        })
    })());

    // composite losses
    push((|| {
        let mut r = trng::stream(2, "dl", 0);
        let a: Tensor<f64> = trng::randn_tensor(&mut r, &[8, 4]);
        let b: Tensor<f64> = trng::randn_tensor(&mut r, &[8, 4]);
        check_fn("loss_diffusion", &[a, b], |ins| {
            crate::losses::diffusion_loss(&ins[0], &ins[1]).map_err(wrap)
        })
    })());

    push((|| {
        let net = PerceptualNet::<f64>::new(101);
        let mut r = trng::stream(3, "lp", 0);
        let a = trng::randn_tensor(&mut r, &[3, 16, 16]).scale(0.3);
        let b = trng::randn_tensor(&mut r, &[3, 16, 16]).scale(0.3);
        check_fn("loss_perceptual", &[a, b], move |ins| {
            net.loss(&ins[0], &ins[1]).map_err(wrap)
        })
    })());

    push((|| {
        let net = IdentityNet::<f64>::new(102, 16);
        let mut r = trng::stream(4, "li", 0);
        let a = trng::randn_tensor(&mut r, &[3, 16, 16]).scale(0.3);
        let b = trng::randn_tensor(&mut r, &[3, 16, 16]).scale(0.3);
        check_fn("loss_identity", &[a, b], move |ins| {
            net.loss(&ins[0], &ins[1]).map_err(wrap)
        })
    })());

    // the full discriminator objective, r1 included, wrt critic weights
    push((|| {
        let mut r = trng::stream(5, "r1", 0);
        let kernel: Tensor<f64> = trng::randn_tensor(&mut r, &[2, 3, 3, 3]);
        let head: Tensor<f64> = trng::randn_tensor(&mut r, &[1, 2 * 4 * 4]);
        let real: Tensor<f64> = trng::randn_tensor(&mut r, &[3, 8, 8]);
        let fake: Tensor<f64> = trng::randn_tensor(&mut r, &[3, 8, 8]);
        vsp_tensor::gradcheck::check_fn_with(
            "loss_adversarial_r1",
            &[kernel, head],
            1e-4,
            move |ins| {
                let k = ins[0].clone();
                let h = ins[1].clone();
                let critic = move |x: &Tensor<f64>| -> crate::Result<Tensor<f64>> {
                    let f = x.conv2d(&k, 2, 1)?.leaky_relu(0.2);
                    Ok(h.matmul(&f.reshape(&[f.numel(), 1])?)?)
                };
                crate::losses::adversarial_d_loss(critic, &fake, &real, 10.0)
                    .map(|(loss, _)| loss)
                    .map_err(wrap)
            },
        )
    })());

    // one TACC block, all parameters and both inputs
    push((|| {
        let block = TaccBlock::<f64>::new(6, "gc", 8, 4);
        let mut r = trng::stream(6, "tacc", 0);
        let gamma: Tensor<f64> = trng::randn_tensor(&mut r, &[8, 4]);
        let w_hat: Tensor<f64> = trng::randn_tensor(&mut r, &[8, 4]);
        let mut inputs = vec![gamma, w_hat];
        inputs.extend(param_tensors(&block));
        check_fn("diffuser_tacc_block", &inputs, move |ins| {
            readout(&block.forward(&ins[0], &ins[1], 2, 4).map_err(wrap)?, 6)
        })
    })());

    // noise-prediction MSE through all four blocks, wrt every parameter
    push((|| {
        let diffuser = CodeDiffuser::<f64>::new(7, 8, 4, 4);
        let mut r = trng::stream(7, "pn", 0);
        let w_t: Tensor<f64> = trng::randn_tensor(&mut r, &[8, 4]);
        let w_hat: Tensor<f64> = trng::randn_tensor(&mut r, &[8, 4]);
        let target: Tensor<f64> = trng::randn_tensor(&mut r, &[8, 4]);
        let inputs = param_tensors(&diffuser);
        check_fn_sampled("diffuser_predict_mse", &inputs, 1e-3, 24, move |_| {
            use crate::diffusion::NoisePredictor;
            let eps_hat = diffuser.predict(&w_t, &w_hat, 3).map_err(wrap)?;
            vsp_tensor::mse(&eps_hat, &target)
        })
    })());

    // modulation/demodulation wrt kernel and style
    push((|| {
        let mut r = trng::stream(8, "md", 0);
        let k: Tensor<f64> = trng::randn_tensor(&mut r, &[3, 3, 3, 4]);
        let s_raw: Tensor<f64> = trng::randn_tensor(&mut r, &[4]);
        let s = Tensor::from_vec(
            &[4],
            s_raw
                .data()
                .iter()
                .map(|v| if v.abs() < 0.2 { v + 0.4 } else { *v })
                .collect(),
        )?;
        check_fn("styleops_mod_demod", &[k, s], |ins| {
            readout(&modulate_demodulate(&ins[0], &ins[1]).map_err(wrap)?, 8)
        })
    })());

    // style conv through features, prompt, and every parameter
    push((|| {
        let sc = StyleConv::<f64>::new(9, "gc", 4, 3, 8, 1);
        let mut r = trng::stream(9, "sc", 0);
        let feats: Tensor<f64> = trng::randn_tensor(&mut r, &[4, 6, 6]);
        let prompt: Tensor<f64> = trng::randn_tensor(&mut r, &[8, 1]);
        let mut inputs = vec![feats, prompt];
        inputs.extend(param_tensors(&sc));
        check_fn("styleops_style_conv", &inputs, move |ins| {
            readout(&sc.forward(&ins[0], &ins[1]).map_err(wrap)?, 9)
        })
    })());

    // the multi-dilation layer, parameters subsampled
    push((|| {
        let smart = SmartLayer::<f64>::new(10, "gc", 3, 4, 8);
        let mut r = trng::stream(10, "sm", 0);
        let feats: Tensor<f64> = trng::randn_tensor(&mut r, &[3, 9, 9]);
        let prompt: Tensor<f64> = trng::randn_tensor(&mut r, &[8, 1]);
        let mut inputs = vec![feats, prompt];
        inputs.extend(param_tensors(&smart));
        check_fn_sampled("styleops_smart_layer", &inputs, 1e-3, 16, move |ins| {
            readout(&smart.forward(&ins[0], &ins[1]).map_err(wrap)?, 10)
        })
    })());

    // mapping network, full
    push((|| {
        let m = MappingNetwork::<f64>::new(11, 8);
        let mut r = trng::stream(11, "mn", 0);
        let z: Tensor<f64> = trng::randn_tensor(&mut r, &[8, 1]);
        let mut inputs = vec![z];
        inputs.extend(param_tensors(&m));
        check_fn("restorer_mapping", &inputs, move |ins| {
            readout(&m.forward(&ins[0]).map_err(wrap)?, 11)
        })
    })());

    // whole restoration network at d=8, N=4, 16^2, parameters subsampled
    push((|| {
        let cfg = small_cfg();
        let net = RestorationNet::<f64>::new(&cfg);
        let mut r = trng::stream(12, "rn", 0);
        let img: Tensor<f64> = trng::randn_tensor(&mut r, &[3, 16, 16]).scale(0.4);
        let w0: Tensor<f64> = trng::randn_tensor(&mut r, &[8, 4]);
        let z: Tensor<f64> = trng::randn_tensor(&mut r, &[8, 1]);
        let target: Tensor<f64> = trng::randn_tensor(&mut r, &[3, 16, 16]).scale(0.4);
        let dec_slots = net.decoder.prior_slots();
        let priors: Vec<Tensor<f64>> = dec_slots
            .iter()
            .map(|&(c, side)| trng::randn_tensor(&mut r, &[c, side, side]))
            .collect();
        let mut inputs = vec![img, w0, z];
        let mut ps = net.params("gc");
        net.mapping.collect_params("gc/mapping", &mut ps);
        inputs.extend(ps.iter().map(|(_, t)| t.clone()));
        check_fn_sampled("restorer_whole_net", &inputs, 2e-5, 6, move |ins| {
            let z_hat = net.mapping.forward(&ins[2]).map_err(wrap)?;
            let (out, c) = net
                .forward(&ins[0], &ins[1], &z_hat, Some(&priors))
                .map_err(wrap)?;
            let probe = vsp_tensor::mse(&out, &target)?;
            probe.add(&c.mul(&c)?.sum_all()?.scale(0.05))
        })
    })());

    // discriminator logit wrt input and subsampled weights
    push((|| {
        let d = Discriminator::<f64>::new(13, 16);
        let mut r = trng::stream(13, "dn", 0);
        let img: Tensor<f64> = trng::randn_tensor(&mut r, &[3, 16, 16]).scale(0.4);
        let mut inputs = vec![img];
        inputs.extend(param_tensors(&d));
        check_fn_sampled("restorer_discriminator", &inputs, 1e-4, 12, move |ins| {
            Ok(d.forward(&ins[0]).map_err(wrap)?.sum_all()?)
        })
    })());

    // feature bank probe: reconstruction mse through encoder and generator
    push((|| {
        let cfg = small_cfg();
        let bank = crate::bank::FeatureBank::<f64>::new(&cfg);
        let mut r = trng::stream(14, "bk", 0);
        let img: Tensor<f64> = trng::randn_tensor(&mut r, &[3, 16, 16]).scale(0.4);
        let mut inputs = vec![img];
        inputs.extend(param_tensors(&bank));
        check_fn_sampled("bank_autoencoder", &inputs, 2e-5, 6, move |ins| {
            let codes = bank.encode_style(&ins[0]).map_err(wrap)?;
            let (_, recon) = bank.generate(&codes).map_err(wrap)?;
            vsp_tensor::mse(&recon, &ins[0])
        })
    })());

    // code path from w_hat through a sampled chain into the generator,
    // mirroring the diffuser's full-chain objective
    push((|| {
        let diffuser = CodeDiffuser::<f64>::new(15, 8, 4, 2);
        let sched = NoiseSchedule::linear(2, 0.1, 0.99).map_err(wrap)?;
        let mut r = trng::stream(15, "ch", 0);
        let w_hat: Tensor<f64> = trng::randn_tensor(&mut r, &[8, 4]);
        let noise0: Tensor<f64> = trng::randn_tensor(&mut r, &[8, 4]);
        let noise_bar: Tensor<f64> = trng::randn_tensor(&mut r, &[8, 4]);
        let inputs = param_tensors(&diffuser);
        check_fn_sampled("diffuser_full_chain", &inputs, 1e-4, 12, move |_| {
            use crate::diffusion::NoisePredictor;
            let mut w = noise0.clone();
            for t in (1..=2).rev() {
                let eps_hat = diffuser.predict(&w, &w_hat, t).map_err(wrap)?;
                let eb = if t > 1 { Some(&noise_bar) } else { None };
                w = denoise_step(&w, &eps_hat, t, &sched, eb).map_err(wrap)?;
            }
            readout(&w, 15)
        })
    })());

    reports
}

/// A gate-gradient sanity probe used by the CLI: the whole suite must pass.
pub fn run_all(n_op_seeds: u64) -> (Vec<GradCheckReport>, bool) {
    let mut reports = vsp_tensor::suite::op_suite(n_op_seeds);
    reports.extend(core_suite());
    let ok = reports.iter().all(|r| r.passed);
    (reports, ok)
}
