//! Central finite-difference checks of the hand-written actor and critic
//! gradients on random small networks.

use coinfer::agent::{
    actor_forward, actor_loss, critic_loss, gaussian_log_prob, ActorCritic, Batch,
};
use coinfer::exec::Exec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const CLIP: f64 = 0.2;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

struct Case {
    net: ActorCritic,
    states: Vec<Vec<f64>>,
    actions: Vec<Vec<f64>>,
    old: Vec<f64>,
    adv: Vec<f64>,
    returns: Vec<f64>,
}

fn random_case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let obs = rng.random_range(2..6);
    let act = rng.random_range(1..4);
    let hidden: Vec<usize> = (0..rng.random_range(1..3))
        .map(|_| rng.random_range(2..7))
        .collect();
    let mut net = ActorCritic::new(obs, act, &hidden, 0.0, &mut rng);
    // Larger output weights than the default init so every path carries signal.
    for p in net.actor.params_mut() {
        *p = rng.random_range(-1.0..1.0);
    }
    net.log_std = (0..act).map(|_| rng.random_range(-1.0..0.5)).collect();
    let n = 12;
    let mut case = Case {
        net,
        states: vec![],
        actions: vec![],
        old: vec![],
        adv: vec![],
        returns: vec![],
    };
    while case.states.len() < n {
        let s: Vec<f64> = (0..obs).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..act).map(|_| rng.random_range(-1.5..1.5)).collect();
        let (m, ls) = actor_forward(&case.net, &s).unwrap();
        let lp = gaussian_log_prob(&y, &m, &ls);
        let shift: f64 = rng.random_range(-0.4..0.4);
        let ratio = shift.exp();
        // Stay away from the clip kinks where the loss is not differentiable.
        if (ratio - (1.0 - CLIP)).abs() < 0.02 || (ratio - (1.0 + CLIP)).abs() < 0.02 {
            continue;
        }
        case.states.push(s);
        case.actions.push(y);
        case.old.push(lp - shift);
        case.adv.push(rng.random_range(-1.0..1.0));
        case.returns.push(rng.random_range(-2.0..2.0));
    }
    case
}

fn actor_value(net: &ActorCritic, c: &Case) -> f64 {
    let batch = Batch {
        states: &c.states,
        actions: &c.actions,
        old_log_probs: &c.old,
        advantages: &c.adv,
    };
    actor_loss(net, batch, CLIP, Exec::Sequential).unwrap().loss
}

#[test]
fn actor_and_critic_gradients_match_finite_differences() {
    let mut checked = 0;
    for seed in 0..20 {
        let c = random_case(seed);
        let batch = Batch {
            states: &c.states,
            actions: &c.actions,
            old_log_probs: &c.old,
            advantages: &c.adv,
        };
        let a = actor_loss(&c.net, batch, CLIP, Exec::Sequential).unwrap();
        for i in 0..c.net.actor.n_params() {
            let mut p = c.net.clone();
            p.actor.params_mut()[i] += H;
            let mut m = c.net.clone();
            m.actor.params_mut()[i] -= H;
            let fd = (actor_value(&p, &c) - actor_value(&m, &c)) / (2.0 * H);
            let e = rel_err(a.grad_actor[i], fd);
            assert!(
                e < 1e-4,
                "seed {seed} actor param {i}: {} vs {fd}",
                a.grad_actor[i]
            );
            checked += 1;
        }
        for k in 0..c.net.act_dim() {
            let mut p = c.net.clone();
            p.log_std[k] += H;
            let mut m = c.net.clone();
            m.log_std[k] -= H;
            let fd = (actor_value(&p, &c) - actor_value(&m, &c)) / (2.0 * H);
            assert!(
                rel_err(a.grad_log_std[k], fd) < 1e-4,
                "seed {seed} log_std {k}"
            );
            checked += 1;
        }

        let cl = critic_loss(&c.net, &c.states, &c.returns, Exec::Sequential).unwrap();
        for i in 0..c.net.critic.n_params() {
            let mut p = c.net.clone();
            p.critic.params_mut()[i] += H;
            let mut m = c.net.clone();
            m.critic.params_mut()[i] -= H;
            let lp = critic_loss(&p, &c.states, &c.returns, Exec::Sequential)
                .unwrap()
                .loss;
            let lm = critic_loss(&m, &c.states, &c.returns, Exec::Sequential)
                .unwrap()
                .loss;
            let fd = (lp - lm) / (2.0 * H);
            assert!(
                rel_err(cl.grad[i], fd) < 1e-4,
                "seed {seed} critic param {i}: {} vs {fd}",
                cl.grad[i]
            );
            checked += 1;
        }
    }
    assert!(checked > 500);
}

#[test]
fn clip_is_inert_right_after_sync() {
    let c = random_case(99);
    let mut old = Vec::new();
    for (s, y) in c.states.iter().zip(&c.actions) {
        let (m, ls) = actor_forward(&c.net, s).unwrap();
        old.push(gaussian_log_prob(y, &m, &ls));
    }
    let batch = Batch {
        states: &c.states,
        actions: &c.actions,
        old_log_probs: &old,
        advantages: &c.adv,
    };
    let a = actor_loss(&c.net, batch, CLIP, Exec::Sequential).unwrap();
    assert_eq!(a.surrogate, a.unclipped);
    assert_eq!(a.clip_fraction, 0.0);
}
