//! Adam with bias correction. Updates are elementwise over the parameter
//! set in construction order, so a step is bitwise deterministic given the
//! gradients.

use vsp_tensor::{Checkpoint, Scalar};

use crate::error::Result;
use crate::nn::ParamSet;

/// Moments are stored as f32 — exactly what the checkpoint format holds —
/// so resuming from a checkpoint reproduces the from-scratch run bitwise.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new<T: Scalar>(params: &ParamSet<T>, lr: f64, beta1: f64, beta2: f64) -> Self {
        let m = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        let v = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        Adam {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            step: 0,
            m,
            v,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one update from the accumulated grads, then clear them.
    /// Parameters without a gradient are left untouched.
    pub fn step<T: Scalar>(&mut self, params: &ParamSet<T>) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (idx, (_, t)) in params.iter().enumerate() {
            let Some(grad) = t.grad() else { continue };
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            t.update_data(|data| {
                for i in 0..data.len() {
                    let g = grad[i].to_f64();
                    m[i] = (b1 * m[i] as f64 + (1.0 - b1) * g) as f32;
                    v[i] = (b2 * v[i] as f64 + (1.0 - b2) * g * g) as f32;
                    let m_hat = m[i] as f64 / bc1;
                    let v_hat = v[i] as f64 / bc2;
                    let upd = lr * m_hat / (v_hat.sqrt() + eps);
                    data[i] = T::from_f64(data[i].to_f64() - upd);
                }
            });
            t.zero_grad();
        }
    }

    /// Serialize moments and step count under `prefix`.
    pub fn save_into(&self, ck: &mut Checkpoint, prefix: &str) {
        ck.insert_raw(
            &format!("{prefix}/step"),
            vec![1],
            vec![self.step as f32],
        );
        for (i, (m, v)) in self.m.iter().zip(&self.v).enumerate() {
            ck.insert_raw(&format!("{prefix}/m{i}"), vec![m.len()], m.clone());
            ck.insert_raw(&format!("{prefix}/v{i}"), vec![v.len()], v.clone());
        }
    }

    pub fn load_from(&mut self, ck: &Checkpoint, prefix: &str) -> Result<()> {
        let (_, step) = ck
            .get_raw(&format!("{prefix}/step"))
            .ok_or_else(|| crate::CoreError::Training("optimizer state missing".into()))?;
        self.step = step[0] as u64;
        for i in 0..self.m.len() {
            let (_, m) = ck
                .get_raw(&format!("{prefix}/m{i}"))
                .ok_or_else(|| crate::CoreError::Training(format!("missing moment m{i}")))?;
            let (_, v) = ck
                .get_raw(&format!("{prefix}/v{i}"))
                .ok_or_else(|| crate::CoreError::Training(format!("missing moment v{i}")))?;
            self.m[i] = m.to_vec();
            self.v[i] = v.to_vec();
        }
        Ok(())
    }
}
