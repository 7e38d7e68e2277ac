//! Discounted returns, advantages and the PPO actor/critic losses with
//! their analytic gradients.

use super::policy::{check_state, ActorCritic, LOG_STD_MAX, LOG_STD_MIN};
use crate::error::{Error, Result};
use crate::exec::Exec;

/// Samples per gradient task. Fixed so the summation order, and hence the
/// result, does not depend on the thread count.
const CHUNK: usize = 64;

const MAX_LOG_RATIO: f64 = 20.0;

/// `G_t = r_t + gamma * G_{t+1}`, with `bootstrap` standing in for the value
/// after the last step (0 for a finished episode).
pub fn compute_returns(rewards: &[f64], gamma: f64, bootstrap: f64) -> Result<Vec<f64>> {
    if rewards.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    let mut out = vec![0.0; rewards.len()];
    let mut g = bootstrap;
    for (o, r) in out.iter_mut().zip(rewards).rev() {
        g = r + gamma * g;
        *o = g;
    }
    Ok(out)
}

/// Discounted sum of TD errors `r_t + gamma V_{t+1} - V_t`.
pub fn compute_advantage(
    rewards: &[f64],
    values: &[f64],
    gamma: f64,
    bootstrap: f64,
) -> Result<Vec<f64>> {
    if rewards.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    if values.len() != rewards.len() {
        return Err(Error::Misaligned {
            expected: rewards.len(),
            actual: values.len(),
        });
    }
    let n = rewards.len();
    let mut out = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let next = if t + 1 < n { values[t + 1] } else { bootstrap };
        acc = rewards[t] + gamma * next - values[t] + gamma * acc;
        out[t] = acc;
    }
    Ok(out)
}

/// Shifts to zero mean and scales to unit standard deviation. A constant
/// batch is only centred.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    for a in adv.iter_mut() {
        *a = if sd > 1e-12 {
            (*a - mean) / sd
        } else {
            *a - mean
        };
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub states: &'a [Vec<f64>],
    pub actions: &'a [Vec<f64>],
    pub old_log_probs: &'a [f64],
    pub advantages: &'a [f64],
}

impl Batch<'_> {
    fn validate(&self, ac: &ActorCritic) -> Result<()> {
        let n = self.states.len();
        if n == 0 {
            return Err(Error::EmptyTrajectory);
        }
        for len in [
            self.actions.len(),
            self.old_log_probs.len(),
            self.advantages.len(),
        ] {
            if len != n {
                return Err(Error::Misaligned {
                    expected: n,
                    actual: len,
                });
            }
        }
        for (s, a) in self.states.iter().zip(self.actions) {
            check_state(ac, s)?;
            if a.len() != ac.act_dim() {
                return Err(Error::Misaligned {
                    expected: ac.act_dim(),
                    actual: a.len(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActorLoss {
    /// Negated surrogate, the quantity minimized.
    pub loss: f64,
    pub surrogate: f64,
    /// Unclipped surrogate `mean(g * A)`.
    pub unclipped: f64,
    /// Fraction of samples whose gradient was cut by the clip.
    pub clip_fraction: f64,
    pub grad_actor: Vec<f64>,
    pub grad_log_std: Vec<f64>,
}

struct ActorPartial {
    surrogate: f64,
    unclipped: f64,
    clipped: usize,
    grad_actor: Vec<f64>,
    grad_log_std: Vec<f64>,
}

/// Clipped PPO surrogate averaged over the batch and its gradient with
/// respect to the actor weights and log standard deviations.
pub fn actor_loss(ac: &ActorCritic, batch: Batch<'_>, clip: f64, exec: Exec) -> Result<ActorLoss> {
    batch.validate(ac)?;
    let n = batch.states.len();
    let log_std = ac.clamped_log_std();
    let chunks = n.div_ceil(CHUNK);
    let parts = exec.map_range(chunks, |c| {
        let mut p = ActorPartial {
            surrogate: 0.0,
            unclipped: 0.0,
            clipped: 0,
            grad_actor: vec![0.0; ac.actor.n_params()],
            grad_log_std: vec![0.0; ac.act_dim()],
        };
        for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
            let trace = ac.actor.forward_trace(&batch.states[i]);
            let mean = trace.output();
            let y = &batch.actions[i];
            let adv = batch.advantages[i];
            let mut lp = 0.0;
            for ((y, m), s) in y.iter().zip(mean).zip(&log_std) {
                let z = (y - m) * (-s).exp();
                lp += -0.5 * z * z - s;
            }
            lp -= 0.918_938_533_204_672_7 * y.len() as f64;
            let raw = lp - batch.old_log_probs[i];
            let log_ratio = raw.clamp(-MAX_LOG_RATIO, MAX_LOG_RATIO);
            let ratio = log_ratio.exp();
            let clipped_ratio = ratio.clamp(1.0 - clip, 1.0 + clip);
            let unclipped = ratio * adv;
            let clipped = clipped_ratio * adv;
            p.unclipped += unclipped;
            if clipped < unclipped {
                p.surrogate += clipped;
                p.clipped += 1;
                continue;
            }
            p.surrogate += unclipped;
            if raw != log_ratio {
                continue;
            }
            // d(-g A / n) / d log_prob
            let w = -unclipped / n as f64;
            let grad_mean: Vec<f64> = y
                .iter()
                .zip(mean)
                .zip(&log_std)
                .map(|((y, m), s)| w * (y - m) * (-2.0 * s).exp())
                .collect();
            for (k, ((y, m), s)) in y.iter().zip(mean).zip(&log_std).enumerate() {
                let z2 = ((y - m) * (-s).exp()).powi(2);
                if ac.log_std[k] > LOG_STD_MIN && ac.log_std[k] < LOG_STD_MAX {
                    p.grad_log_std[k] += w * (z2 - 1.0);
                }
            }
            ac.actor.backward(&trace, &grad_mean, &mut p.grad_actor);
        }
        p
    });
    let mut out = ActorLoss {
        loss: 0.0,
        surrogate: 0.0,
        unclipped: 0.0,
        clip_fraction: 0.0,
        grad_actor: vec![0.0; ac.actor.n_params()],
        grad_log_std: vec![0.0; ac.act_dim()],
    };
    let mut clipped = 0;
    for p in parts {
        out.surrogate += p.surrogate;
        out.unclipped += p.unclipped;
        clipped += p.clipped;
        add_into(&mut out.grad_actor, &p.grad_actor);
        add_into(&mut out.grad_log_std, &p.grad_log_std);
    }
    out.surrogate /= n as f64;
    out.unclipped /= n as f64;
    out.loss = -out.surrogate;
    out.clip_fraction = clipped as f64 / n as f64;
    if !out.loss.is_finite()
        || out
            .grad_actor
            .iter()
            .chain(&out.grad_log_std)
            .any(|g| !g.is_finite())
    {
        return Err(Error::NonFinite("actor loss or gradient".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticLoss {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// Mean squared error between critic values and `returns`.
pub fn critic_loss(
    ac: &ActorCritic,
    states: &[Vec<f64>],
    returns: &[f64],
    exec: Exec,
) -> Result<CriticLoss> {
    let n = states.len();
    if n == 0 {
        return Err(Error::EmptyTrajectory);
    }
    if returns.len() != n {
        return Err(Error::Misaligned {
            expected: n,
            actual: returns.len(),
        });
    }
    for s in states {
        check_state(ac, s)?;
    }
    let chunks = n.div_ceil(CHUNK);
    let parts = exec.map_range(chunks, |c| {
        let mut loss = 0.0;
        let mut grad = vec![0.0; ac.critic.n_params()];
        for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
            let trace = ac.critic.forward_trace(&states[i]);
            let err = trace.output()[0] - returns[i];
            loss += err * err;
            ac.critic
                .backward(&trace, &[2.0 * err / n as f64], &mut grad);
        }
        (loss, grad)
    });
    let mut out = CriticLoss {
        loss: 0.0,
        grad: vec![0.0; ac.critic.n_params()],
    };
    for (l, g) in parts {
        out.loss += l;
        add_into(&mut out.grad, &g);
    }
    out.loss /= n as f64;
    if !out.loss.is_finite() || out.grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("critic loss or gradient".into()));
    }
    Ok(out)
}

fn add_into(acc: &mut [f64], g: &[f64]) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::policy::{gaussian_log_prob, sample_action};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn returns_examples() {
        assert_eq!(compute_returns(&[2.5], 0.9, 0.0).unwrap(), vec![2.5]);
        assert_eq!(
            compute_returns(&[1.0, 1.0, 1.0], 0.5, 0.0).unwrap(),
            vec![1.75, 1.5, 1.0]
        );
        assert_eq!(
            compute_returns(&[1.0, -2.0, 3.0], 0.0, 7.0).unwrap(),
            vec![1.0, -2.0, 3.0]
        );
        assert_eq!(compute_returns(&[1.0], 0.5, 4.0).unwrap(), vec![3.0]);
        assert!(matches!(
            compute_returns(&[], 0.9, 0.0),
            Err(Error::EmptyTrajectory)
        ));
    }

    #[test]
    fn advantage_reduces_to_returns_with_zero_critic() {
        let r = [0.3, -1.2, 2.0, 0.7];
        let a = compute_advantage(&r, &[0.0; 4], 0.9, 0.0).unwrap();
        let g = compute_returns(&r, 0.9, 0.0).unwrap();
        for (x, y) in a.iter().zip(&g) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn perfect_critic_gives_zero_advantage() {
        let r = [0.3, -1.2, 2.0, 0.7];
        let g = compute_returns(&r, 1.0, 0.0).unwrap();
        let a = compute_advantage(&r, &g, 1.0, 0.0).unwrap();
        assert!(a.iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn advantage_matches_double_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let r: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let v: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let gamma: f64 = rng.random_range(0.0..1.0);
            let boot: f64 = rng.random_range(-1.0..1.0);
            let vext = [v[0], v[1], v[2], boot];
            let a = compute_advantage(&r, &v, gamma, boot).unwrap();
            for t in 0..3 {
                let direct: f64 = (0..3 - t)
                    .map(|i| {
                        gamma.powi(i as i32) * (r[t + i] + gamma * vext[t + i + 1] - vext[t + i])
                    })
                    .sum();
                assert!((a[t] - direct).abs() < 1e-12);
            }
        }
        assert!(matches!(
            compute_advantage(&[1.0, 2.0], &[0.0], 0.9, 0.0),
            Err(Error::Misaligned { .. })
        ));
    }

    #[test]
    fn normalization() {
        let mut a = vec![1.0, 2.0, 3.0, 4.0];
        normalize_advantages(&mut a);
        let mean: f64 = a.iter().sum::<f64>() / 4.0;
        let var: f64 = a.iter().map(|x| x * x).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-15 && (var - 1.0).abs() < 1e-12);
        let mut c = vec![5.0; 3];
        normalize_advantages(&mut c);
        assert_eq!(c, vec![0.0; 3]);
    }

    type Setup = (
        ActorCritic,
        Vec<Vec<f64>>,
        Vec<Vec<f64>>,
        Vec<f64>,
        Vec<f64>,
    );

    fn setup(seed: u64, n: usize) -> Setup {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ac = ActorCritic::new(4, 2, &[3], -0.3, &mut rng);
        let states: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let mut actions = Vec::new();
        let mut lps = Vec::new();
        for s in &states {
            let (y, lp) = sample_action(&ac, s, &mut rng).unwrap();
            actions.push(y);
            lps.push(lp);
        }
        let adv = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        (ac, states, actions, lps, adv)
    }

    #[test]
    fn ratio_one_gives_mean_advantage() {
        let (ac, s, a, lp, adv) = setup(1, 37);
        let batch = Batch {
            states: &s,
            actions: &a,
            old_log_probs: &lp,
            advantages: &adv,
        };
        let out = actor_loss(&ac, batch, 0.2, Exec::Sequential).unwrap();
        let mean = adv.iter().sum::<f64>() / adv.len() as f64;
        assert!((out.surrogate - mean).abs() < 1e-12);
        assert!((out.loss + mean).abs() < 1e-12);
        assert_eq!(out.surrogate, out.unclipped);
        assert_eq!(out.clip_fraction, 0.0);
    }

    #[test]
    fn clipped_sample_contributes_no_gradient() {
        let (ac, s, a, _, _) = setup(2, 1);
        let (mean, ls) = super::super::policy::actor_forward(&ac, &s[0]).unwrap();
        let lp = gaussian_log_prob(&a[0], &mean, &ls);
        // ratio = e^0.5 > 1.2 with positive advantage: clipped branch
        let old = [lp - 0.5];
        let adv = [1.0];
        let batch = Batch {
            states: &s,
            actions: &a,
            old_log_probs: &old,
            advantages: &adv,
        };
        let out = actor_loss(&ac, batch, 0.2, Exec::Sequential).unwrap();
        assert!((out.surrogate - 1.2).abs() < 1e-12);
        assert_eq!(out.clip_fraction, 1.0);
        assert!(out
            .grad_actor
            .iter()
            .chain(&out.grad_log_std)
            .all(|g| *g == 0.0));
    }

    #[test]
    fn critic_zero_when_exact() {
        let (ac, s, ..) = setup(3, 10);
        let g: Vec<f64> = s.iter().map(|x| ac.value(x).unwrap()).collect();
        let out = critic_loss(&ac, &s, &g, Exec::Sequential).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn critic_constant_hand_case() {
        let (mut ac, s, ..) = setup(4, 4);
        ac.critic.params_mut().iter_mut().for_each(|p| *p = 0.0);
        let n = ac.critic.n_params();
        ac.critic.params_mut()[n - 1] = 1.0; // output bias: V = 1 everywhere
        let g = [0.0, 1.0, 2.0, 3.0];
        let out = critic_loss(&ac, &s, &g, Exec::Sequential).unwrap();
        // (1 + 0 + 1 + 4) / 4
        assert_eq!(out.loss, 1.5);
        // d/d bias = 2 * mean(V - G) = 2 * (1 - 1.5)
        assert_eq!(out.grad[n - 1], -1.0);
    }

    #[test]
    fn parallel_matches_sequential_bitwise() {
        let (ac, s, a, lp, adv) = setup(6, 300);
        let old: Vec<f64> = lp.iter().map(|l| l + 0.05).collect();
        let batch = Batch {
            states: &s,
            actions: &a,
            old_log_probs: &old,
            advantages: &adv,
        };
        assert_eq!(
            actor_loss(&ac, batch, 0.2, Exec::Sequential).unwrap(),
            actor_loss(&ac, batch, 0.2, Exec::Parallel).unwrap()
        );
        assert_eq!(
            critic_loss(&ac, &s, &adv, Exec::Sequential).unwrap(),
            critic_loss(&ac, &s, &adv, Exec::Parallel).unwrap()
        );
    }
}
