//! Actor-critic networks and the diagonal Gaussian policy over raw actions.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use crate::error::{Error, Result};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorCritic {
    pub actor: Mlp,
    /// Unclamped learnable log standard deviations, one per action dim.
    pub log_std: Vec<f64>,
    pub critic: Mlp,
}

impl ActorCritic {
    /// `hidden` lists the hidden layer widths shared by actor and critic.
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        act_dim: usize,
        hidden: &[usize],
        init_log_std: f64,
        rng: &mut R,
    ) -> Self {
        let sizes = |out: usize| {
            let mut s = vec![obs_dim];
            s.extend_from_slice(hidden);
            s.push(out);
            s
        };
        let actor = Mlp::new(&sizes(act_dim), 0.01, rng);
        let critic = Mlp::new(&sizes(1), 1.0, rng);
        Self {
            actor,
            log_std: vec![init_log_std; act_dim],
            critic,
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.actor.input_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.actor.output_dim()
    }

    pub fn clamped_log_std(&self) -> Vec<f64> {
        self.log_std
            .iter()
            .map(|s| s.clamp(LOG_STD_MIN, LOG_STD_MAX))
            .collect()
    }

    pub fn value(&self, state: &[f64]) -> Result<f64> {
        check_state(self, state)?;
        Ok(self.critic.forward(state)[0])
    }

    pub fn is_finite(&self) -> bool {
        self.actor.params().iter().all(|p| p.is_finite())
            && self.critic.params().iter().all(|p| p.is_finite())
            && self.log_std.iter().all(|p| p.is_finite())
    }
}

pub(crate) fn check_state(ac: &ActorCritic, state: &[f64]) -> Result<()> {
    if state.len() != ac.obs_dim() {
        return Err(Error::Misaligned {
            expected: ac.obs_dim(),
            actual: state.len(),
        });
    }
    if let Some(i) = state.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "state component {i} is {}",
            state[i]
        )));
    }
    Ok(())
}

/// Gaussian means and clamped log standard deviations for `state`.
pub fn actor_forward(ac: &ActorCritic, state: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_state(ac, state)?;
    Ok((ac.actor.forward(state), ac.clamped_log_std()))
}

pub fn gaussian_log_prob(y: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    y.iter()
        .zip(mean)
        .zip(log_std)
        .map(|((y, m), s)| {
            let z = (y - m) * (-s).exp();
            -0.5 * z * z - s - HALF_LN_2PI
        })
        .sum()
}

/// Draws raw actions `y` and returns them with their log-density.
pub fn sample_action<R: Rng + ?Sized>(
    ac: &ActorCritic,
    state: &[f64],
    rng: &mut R,
) -> Result<(Vec<f64>, f64)> {
    let (mean, log_std) = actor_forward(ac, state)?;
    let y: Vec<f64> = mean
        .iter()
        .zip(&log_std)
        .map(|(m, s)| {
            let eps: f64 = StandardNormal.sample(rng);
            m + s.exp() * eps
        })
        .collect();
    let lp = gaussian_log_prob(&y, &mean, &log_std);
    Ok((y, lp))
}
