//! Random-walk Metropolis-Hastings for the joint model's covariance
//! parameters, with Robbins-Monro step-size adaptation during burn-in.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::std_normal;
use crate::error::Result;
use crate::model::{
    joint_intercept_density, joint_slope_density, ln_rho_prior, ln_sd_prior, JointParams,
    JointState,
};

/// Acceptance rate the adaptation steers each scalar kernel towards.
pub const TARGET_ACCEPTANCE: f64 = 0.44;

/// Unconstrained coordinate a parameter is proposed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    /// `u = ln(sd)`
    Log,
    /// `u = atanh(rho)`
    Atanh,
}

impl Transform {
    pub fn forward(self, x: f64) -> f64 {
        match self {
            Transform::Log => x.ln(),
            Transform::Atanh => x.atanh(),
        }
    }

    pub fn inverse(self, u: f64) -> f64 {
        match self {
            Transform::Log => u.exp(),
            Transform::Atanh => u.tanh(),
        }
    }

    /// `ln |dx/du|` at `x`.
    pub fn log_jacobian(self, x: f64) -> f64 {
        match self {
            Transform::Log => x.ln(),
            Transform::Atanh => (1.0 - x * x).ln(),
        }
    }
}

/// Log acceptance ratio of a move `current -> proposed` in transformed
/// space, given the log target at both points.
pub fn log_acceptance(
    transform: Transform,
    current: f64,
    proposed: f64,
    target_current: f64,
    target_proposed: f64,
) -> f64 {
    if target_proposed == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    (target_proposed + transform.log_jacobian(proposed))
        - (target_current + transform.log_jacobian(current))
}

/// Step size and acceptance counters for one scalar kernel.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdaptiveStep {
    pub log_step: f64,
    pub proposals: u64,
    pub accepted: u64,
}

impl AdaptiveStep {
    pub fn new(step: f64) -> Self {
        AdaptiveStep {
            log_step: step.ln(),
            proposals: 0,
            accepted: 0,
        }
    }

    pub fn step(&self) -> f64 {
        self.log_step.exp()
    }

    /// Robbins-Monro update after the `iteration`-th proposal (1-based).
    pub fn adapt(&mut self, iteration: usize, accepted: bool) {
        let gain = (iteration as f64).powf(-0.6);
        let a = if accepted { 1.0 } else { 0.0 };
        self.log_step += gain * (a - TARGET_ACCEPTANCE);
    }

    pub fn record(&mut self, accepted: bool) {
        self.proposals += 1;
        self.accepted += u64::from(accepted);
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposals == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.proposals as f64
        }
    }
}

/// The six covariance parameters of the joint model, in update order.
pub const COV_PARAMS: [(&str, Transform); 6] = [
    ("sigma0_I", Transform::Log),
    ("sigma0_A", Transform::Log),
    ("rho0", Transform::Atanh),
    ("sigma1_I", Transform::Log),
    ("sigma1_A", Transform::Log),
    ("rho1", Transform::Atanh),
];

fn slot(p: &mut JointParams, k: usize) -> &mut f64 {
    match k {
        0 => &mut p.sigma0_i,
        1 => &mut p.sigma0_a,
        2 => &mut p.rho0,
        3 => &mut p.sigma1_i,
        4 => &mut p.sigma1_a,
        _ => &mut p.rho1,
    }
}

/// Log target restricted to the terms that involve covariance parameter `k`:
/// the density of the effect pairs it governs plus its own prior.
pub fn cov_param_target(s: &JointState, k: usize) -> Result<f64> {
    let p = &s.params;
    let value = match k {
        0 => p.sigma0_i,
        1 => p.sigma0_a,
        2 => p.rho0,
        3 => p.sigma1_i,
        4 => p.sigma1_a,
        _ => p.rho1,
    };
    let prior = match COV_PARAMS[k].1 {
        Transform::Log => ln_sd_prior(value),
        Transform::Atanh => ln_rho_prior(value),
    };
    if prior == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    let dens = if k < 3 {
        joint_intercept_density(p, &s.effects)?
    } else {
        joint_slope_density(p, &s.effects)?
    };
    Ok(dens + prior)
}

/// One MH update of covariance parameter `k`. Returns whether the proposal
/// was accepted.
pub fn update_cov_param<R: Rng + ?Sized>(
    s: &mut JointState,
    k: usize,
    step: f64,
    rng: &mut R,
) -> Result<bool> {
    let transform = COV_PARAMS[k].1;
    let current = *slot(&mut s.params, k);
    let target_current = cov_param_target(s, k)?;
    let proposed = transform.inverse(transform.forward(current) + step * std_normal(rng));
    *slot(&mut s.params, k) = proposed;
    let target_proposed = cov_param_target(s, k)?;
    let log_alpha = log_acceptance(
        transform,
        current,
        proposed,
        target_current,
        target_proposed,
    );
    let accept = log_alpha >= 0.0 || rng.random::<f64>().ln() < log_alpha;
    if !accept {
        *slot(&mut s.params, k) = current;
    }
    Ok(accept)
}
