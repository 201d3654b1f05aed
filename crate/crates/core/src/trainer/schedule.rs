use std::f64::consts::PI;

use log::warn;

use super::config::OmegaForm;
use crate::error::{Error, Result};

/// EMA momentum for epoch `t` of `T`.
pub fn omega_schedule(t: usize, total: usize, omega_min: f64, omega_max: f64) -> Result<f64> {
    omega_schedule_with_form(t, total, omega_min, omega_max, OmegaForm::Corrected)
}

pub fn omega_schedule_with_form(t: usize, total: usize, omega_min: f64, omega_max: f64, form: OmegaForm) -> Result<f64> {
    if total == 0 {
        return Err(Error::Parameter("schedule length must be positive".into()));
    }
    if t > total {
        return Err(Error::Parameter(format!("epoch {t} beyond schedule length {total}")));
    }
    let phase = PI * t as f64 / total as f64;
    match form {
        OmegaForm::Corrected => Ok(omega_max - (1.0 - omega_min) * (phase.cos() + 1.0) / 2.0),
        OmegaForm::Printed => {
            let w = omega_max - (1.0 - omega_min) * (phase + 1.0).cos() / 2.0;
            if !(0.0..=1.0).contains(&w) {
                warn!("printed omega form gives {w} at epoch {t}; clamping");
            }
            Ok(w.clamp(0.0, 1.0))
        }
    }
}

/// Cosine decay from `lr0` at step 0 to 0 at `total_steps`.
pub fn lr_schedule(step: usize, total_steps: usize, lr0: f64) -> f64 {
    if total_steps == 0 {
        return lr0;
    }
    let s = step.min(total_steps) as f64 / total_steps as f64;
    lr0 * (1.0 + (PI * s).cos()) / 2.0
}

/// Teacher temperature: cosine ramp from `start` to `end` over `warmup` epochs, then `end`.
pub fn tau_t_schedule(epoch: usize, warmup: usize, start: f64, end: f64) -> f64 {
    if epoch >= warmup {
        return end;
    }
    let s = epoch as f64 / warmup as f64;
    end + (start - end) * (1.0 + (PI * s).cos()) / 2.0
}
