//! AdamW with decoupled weight decay and a one-cycle learning-rate schedule.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// One parameter group: values, gradient and whether weight decay applies.
pub struct Slot<'a> {
    pub values: &'a mut [f64],
    pub grad: &'a [f64],
    pub decay: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. Slots must be passed in the same order and with
    /// the same sizes on every call.
    pub fn step(&mut self, slots: &mut [Slot<'_>], lr: f64) {
        if self.m.is_empty() {
            self.m = slots.iter().map(|s| vec![0.0; s.values.len()]).collect();
            self.v = self.m.clone();
        }
        assert_eq!(self.m.len(), slots.len(), "optimizer slots changed");
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for ((slot, m), v) in slots.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            assert_eq!(slot.values.len(), slot.grad.len());
            let decay = if slot.decay { 1.0 - lr * c.weight_decay } else { 1.0 };
            for (((p, &g), m), v) in slot.values.iter_mut().zip(slot.grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *p *= decay;
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *p -= lr * mhat / (vhat.sqrt() + c.eps);
            }
        }
    }
}

pub const WARMUP_FRACTION: f64 = 0.3;
pub const INITIAL_DIV: f64 = 25.0;
pub const FINAL_DIV: f64 = 1e4;

fn cosine(start: f64, end: f64, pct: f64) -> f64 {
    end + (start - end) / 2.0 * (1.0 + (std::f64::consts::PI * pct).cos())
}

/// Learning rate at `step` of `total_steps`: cosine rise from
/// `max_lr/25` to `max_lr` over the first 30 %, then cosine decay to
/// `max_lr/1e4` at the last step.
pub fn one_cycle_lr(step: usize, total_steps: usize, max_lr: f64) -> f64 {
    let initial = max_lr / INITIAL_DIV;
    let last = total_steps.saturating_sub(1) as f64;
    let peak = WARMUP_FRACTION * total_steps as f64 - 1.0;
    let s = (step as f64).min(last);
    if peak <= 0.0 || last <= peak {
        // too few steps for a warmup phase
        return if last <= 0.0 { initial } else { cosine(max_lr, max_lr / FINAL_DIV, s / last) };
    }
    if s <= peak {
        cosine(initial, max_lr, s / peak)
    } else {
        cosine(max_lr, max_lr / FINAL_DIV, (s - peak) / (last - peak))
    }
}
