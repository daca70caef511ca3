use std::f64::consts::PI;

use super::TrainConfig;
use crate::model::{ModelParams, ParamKind};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Linear warmup from 0 to `base_lr`, then cosine decay to 0 at `total_steps`.
pub fn lr_schedule(step: usize, total_steps: usize, cfg: &TrainConfig) -> f64 {
    let warmup = cfg.warmup_steps.min(total_steps);
    if step < warmup {
        return cfg.base_lr * step as f64 / warmup as f64;
    }
    let span = total_steps - warmup;
    if span == 0 {
        return cfg.base_lr;
    }
    let progress = (step.min(total_steps) - warmup) as f64 / span as f64;
    0.5 * cfg.base_lr * (1.0 + (PI * progress).cos())
}

/// Scales `grads` in place so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut ModelParams, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }
}

/// One AdamW update with decoupled weight decay on `Weight` tensors only.
pub fn adamw_step(params: &mut ModelParams, grads: &ModelParams, state: &mut AdamState, lr: f64, weight_decay: f64) {
    state.t += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(state.t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(state.t as i32);
    let kinds: Vec<ParamKind> = params.named_tensors().iter().map(|t| t.kind).collect();
    let g_all = grads.named_tensors();
    let m_all = state.m.tensors_mut();
    let v_all = state.v.tensors_mut();
    for ((((w, g), m), v), kind) in params.tensors_mut().into_iter().zip(g_all).zip(m_all).zip(v_all).zip(kinds) {
        let decay = if kind == ParamKind::Weight { lr * weight_decay } else { 0.0 };
        for (((w, &g), m), v) in w.data.iter_mut().zip(&g.tensor.data).zip(m.data.iter_mut()).zip(v.data.iter_mut()) {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            *w -= decay * *w;
            *w -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
        }
    }
}
