use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

/// Linear warmup to `peak_lr` followed by inverse-square-root decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarmupSchedule {
    pub peak_lr: f32,
    pub warmup_steps: usize,
}

impl WarmupSchedule {
    pub fn new(peak_lr: f32, warmup_steps: usize) -> Self {
        WarmupSchedule {
            peak_lr,
            warmup_steps,
        }
    }

    pub fn constant(lr: f32) -> Self {
        Self::new(lr, 0)
    }

    /// Learning rate for the 1-based `step`.
    pub fn lr(&self, step: usize) -> f32 {
        let step = step.max(1) as f32;
        if self.warmup_steps == 0 {
            return self.peak_lr;
        }
        let w = self.warmup_steps as f32;
        self.peak_lr * (step / w).min((w / step).sqrt())
    }
}

#[derive(Debug, Clone)]
struct Moments {
    m: Vec<f32>,
    v: Vec<f32>,
}

/// Adam state: first and second moment buffers for each trainable parameter.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub schedule: WarmupSchedule,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    /// Global L2 clip on the gradient; `None` disables clipping.
    pub clip_norm: Option<f32>,
    step: usize,
    moments: HashMap<ParamId, Moments>,
}

impl OptimizerState {
    pub fn new(store: &ParamStore, schedule: WarmupSchedule) -> Self {
        let moments = store
            .iter()
            .filter(|(_, p)| !p.frozen)
            .map(|(id, p)| {
                let n = p.value.len();
                (
                    id,
                    Moments {
                        m: vec![0.0; n],
                        v: vec![0.0; n],
                    },
                )
            })
            .collect();
        OptimizerState {
            schedule,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            clip_norm: Some(5.0),
            step: 0,
            moments,
        }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn has_moments(&self, id: ParamId) -> bool {
        self.moments.contains_key(&id)
    }

    pub fn current_lr(&self) -> f32 {
        self.schedule.lr(self.step.max(1))
    }

    /// One Adam update of every non-frozen parameter; clears all gradients.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        let ids: Vec<ParamId> = store
            .iter()
            .filter(|(_, p)| !p.frozen)
            .map(|(id, _)| id)
            .collect();
        let mut sq = 0.0f64;
        for &id in &ids {
            let p = store.get(id);
            let g = p.grad.as_ref().ok_or_else(|| {
                Error::TrainingState(format!("missing gradient for parameter {}", p.name))
            })?;
            if !g.all_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite gradient in {}",
                    p.name
                )));
            }
            sq += g
                .data()
                .iter()
                .map(|&x| (x as f64) * (x as f64))
                .sum::<f64>();
            if !self.moments.contains_key(&id) {
                return Err(Error::TrainingState(format!(
                    "parameter {} unfrozen after optimizer creation",
                    p.name
                )));
            }
        }
        let norm = sq.sqrt() as f32;
        let clip = match self.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };

        self.step += 1;
        let t = self.step as i32;
        let lr = self.schedule.lr(self.step);
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for &id in &ids {
            let mom = self.moments.get_mut(&id).expect("checked above");
            let p = store.get_mut(id);
            let g = p.grad.take().expect("checked above");
            for (((w, &gr), m), v) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(mom.m.iter_mut())
                .zip(mom.v.iter_mut())
            {
                let gr = gr * clip;
                *m = self.beta1 * *m + (1.0 - self.beta1) * gr;
                *v = self.beta2 * *v + (1.0 - self.beta2) * gr * gr;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *w -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        store.zero_grads();
        Ok(())
    }
}
