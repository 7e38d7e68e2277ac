//! Experiment orchestration: training LyMDO and the joint PPO baseline,
//! running heuristic baselines, evaluation sweeps over arrival rates and
//! checkpoints.

mod metrics;

pub use metrics::{
    emit_episodes, emit_metrics, emit_summary, metrics_header, moving_average, read_metrics,
    EpisodeRecord, EvalSummary, MetricsRow, MetricsWriter, QueueTrace, SweepPoint, UeRow,
    UeSummary, MOVING_AVERAGE_WINDOW,
};

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{PpoAgent, PpoHyper, Transition};
use crate::allocators::{allocate_all, fit_to_budget};
use crate::environment::{map_action, Environment, SlotState, System, SystemConfig};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::system_model::Allocation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    /// PPO chooses cuts, convex solvers allocate resources.
    Lymdo,
    /// PPO chooses cuts and all resources directly.
    PpoJoint,
    /// Every UE runs its whole model locally.
    Local,
    /// Every UE offloads its whole model.
    Edge,
    /// Uniformly random cut per UE and slot.
    Random,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::Lymdo,
        PolicyKind::PpoJoint,
        PolicyKind::Local,
        PolicyKind::Edge,
        PolicyKind::Random,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Lymdo => "lymdo",
            PolicyKind::PpoJoint => "ppo-joint",
            PolicyKind::Local => "local",
            PolicyKind::Edge => "edge",
            PolicyKind::Random => "random",
        }
    }

    pub fn is_learned(self) -> bool {
        matches!(self, PolicyKind::Lymdo | PolicyKind::PpoJoint)
    }

    /// Actor output dimension for `n_ues` UEs; 0 for fixed policies.
    pub fn action_dim(self, n_ues: usize) -> usize {
        match self {
            PolicyKind::Lymdo => n_ues,
            PolicyKind::PpoJoint => 4 * n_ues,
            _ => 0,
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown policy {s:?}")))
    }
}

pub const DEFAULT_LAMBDA_SWEEP: [f64; 5] = [0.5, 1.0, 1.5, 2.0, 2.5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub scenario: String,
    pub config: SystemConfig,
    pub policy: PolicyKind,
    /// Training episodes, or evaluation episodes per sweep point.
    pub episodes: usize,
    pub slots_per_episode: usize,
    pub lambda_sweep: Vec<f64>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub ppo: PpoHyper,
}

impl ExperimentSpec {
    pub fn new(scenario: impl Into<String>, config: SystemConfig, policy: PolicyKind) -> Self {
        Self {
            scenario: scenario.into(),
            policy,
            episodes: 400,
            slots_per_episode: config.slots_per_episode,
            lambda_sweep: DEFAULT_LAMBDA_SWEEP.to_vec(),
            seeds: vec![config.seed],
            out_dir: PathBuf::from("out"),
            ppo: PpoHyper::default(),
            config,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::Config("episodes must be at least 1".into()));
        }
        if self.slots_per_episode == 0 {
            return Err(Error::Config("slots_per_episode must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must be non-empty".into()));
        }
        if self
            .lambda_sweep
            .iter()
            .any(|l| !(*l > 0.0 && l.is_finite()))
        {
            return Err(Error::Config("sweep arrival rates must be positive".into()));
        }
        self.ppo.validate()?;
        self.system_config().validate()
    }

    /// The system configuration with this spec's episode length.
    pub fn system_config(&self) -> SystemConfig {
        SystemConfig {
            slots_per_episode: self.slots_per_episode,
            ..self.config.clone()
        }
    }
}

// Independent streams derived from one user seed.
fn agent_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

fn cut_seed(seed: u64) -> u64 {
    seed ^ 0xc2b2_ae3d_27d4_eb4f
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Maps a joint action `[cut outputs, bandwidth, device CPU, edge CPU]`
/// (each block `N` long) onto a feasible decision. Bandwidth and edge CPU
/// scores are squashed by a sigmoid and renormalized over the UEs that
/// need the resource; device CPU is `f_max * sigmoid`.
pub fn joint_decision(system: &System, raw: &[f64]) -> Result<(Vec<usize>, Allocation)> {
    let n = system.n_ues();
    if raw.len() != 4 * n {
        return Err(Error::Misaligned {
            expected: 4 * n,
            actual: raw.len(),
        });
    }
    let cuts = map_action(&raw[..n], &system.layer_counts());
    let cfg = &system.config;
    let mut alloc = Allocation::zeros(n);
    let share =
        |scores: &[f64], active: &dyn Fn(usize) -> Result<bool>, total: f64| -> Result<Vec<f64>> {
            let mut s = vec![0.0; n];
            for i in 0..n {
                if active(i)? {
                    s[i] = sigmoid(scores[i]).max(1e-12);
                }
            }
            let sum: f64 = s.iter().sum();
            if sum > 0.0 {
                s.iter_mut().for_each(|v| *v = total * *v / sum);
                fit_to_budget(&mut s, total);
            }
            Ok(s)
        };
    alloc.alpha = share(
        &raw[n..2 * n],
        &|i| Ok(system.ues[i].profile.payload_bytes(cuts[i])? > 0),
        1.0,
    )?;
    alloc.f_es = share(
        &raw[3 * n..],
        &|i| Ok(system.ues[i].edge_cycles(cuts[i])? > 0.0),
        cfg.f_max_es_hz,
    )?;
    for i in 0..n {
        if system.ues[i].local_cycles(cuts[i])? > 0.0 {
            alloc.f_ue[i] = cfg.f_max_ue_hz * sigmoid(raw[2 * n + i]);
        }
    }
    Ok((cuts, alloc))
}

/// Cuts from the policy, resources from the convex allocators.
fn convex_decision(
    system: &System,
    state: &SlotState,
    cuts: Vec<usize>,
) -> Result<(Vec<usize>, Allocation)> {
    let prob = system.alloc_problem(state, &cuts)?;
    Ok((cuts, allocate_all(&prob).allocation))
}

/// Decision for one slot. `raw` is the actor output for learned policies
/// and ignored otherwise; `cut_rng` drives the random baseline only.
pub fn decide(
    kind: PolicyKind,
    system: &System,
    state: &SlotState,
    raw: &[f64],
    cut_rng: &mut ChaCha8Rng,
) -> Result<(Vec<usize>, Allocation)> {
    let layers = system.layer_counts();
    match kind {
        PolicyKind::Lymdo => {
            if raw.len() != layers.len() {
                return Err(Error::Misaligned {
                    expected: layers.len(),
                    actual: raw.len(),
                });
            }
            convex_decision(system, state, map_action(raw, &layers))
        }
        PolicyKind::PpoJoint => joint_decision(system, raw),
        PolicyKind::Local => convex_decision(system, state, layers),
        PolicyKind::Edge => convex_decision(system, state, vec![0; layers.len()]),
        PolicyKind::Random => {
            let cuts = layers
                .iter()
                .map(|&l| cut_rng.random_range(0..=l))
                .collect();
            convex_decision(system, state, cuts)
        }
    }
}

#[derive(Default)]
struct EpisodeAcc {
    slots: usize,
    reward: f64,
    delay: f64,
    energy: f64,
    memory: f64,
    infeasible: usize,
    ue_slots: usize,
}

impl EpisodeAcc {
    fn add(&mut self, m: &crate::environment::SlotMetrics) {
        self.slots += 1;
        self.reward += m.reward;
        for u in &m.ues {
            self.delay += u.effective_delay;
            self.energy += u.energy.total();
            self.memory += u.memory;
            self.infeasible += (!u.feasible) as usize;
            self.ue_slots += 1;
        }
    }

    fn record(&self, episode: usize, updates: u64) -> EpisodeRecord {
        let k = self.ue_slots.max(1) as f64;
        EpisodeRecord {
            episode,
            reward: self.reward / self.slots.max(1) as f64,
            mean_delay: self.delay / k,
            mean_energy: self.energy / k,
            mean_memory: self.memory / k,
            infeasible_fraction: self.infeasible as f64 / k,
            updates,
        }
    }
}

pub struct TrainOutcome {
    pub agent: PpoAgent,
    pub episodes: Vec<EpisodeRecord>,
}

/// Trains a learned policy: observe, sample an action, allocate, step,
/// store, and run a PPO update whenever the memory fills. `sink` receives
/// every slot's metrics.
pub fn train(
    spec: &ExperimentSpec,
    seed: u64,
    exec: Exec,
    sink: &mut dyn FnMut(&MetricsRow) -> Result<()>,
) -> Result<TrainOutcome> {
    spec.validate()?;
    if !spec.policy.is_learned() {
        return Err(Error::Config(format!(
            "policy {} is not trainable",
            spec.policy
        )));
    }
    let system = Arc::new(System::new(spec.system_config())?);
    let n = system.n_ues();
    let mut env = Environment::new(system.clone(), seed);
    let mut agent = PpoAgent::new(
        4 * n,
        spec.policy.action_dim(n),
        spec.ppo.clone(),
        agent_seed(seed),
    )?;
    let mut cut_rng = ChaCha8Rng::seed_from_u64(cut_seed(seed));
    let mut records = Vec::with_capacity(spec.episodes);

    for episode in 0..spec.episodes {
        if episode > 0 {
            env.reset();
        }
        let mut acc = EpisodeAcc::default();
        loop {
            let state = env.state().clone();
            let obs = state.observation(&system);
            let d = agent.act(&obs)?;
            let (cuts, alloc) = decide(spec.policy, &system, &state, &d.action, &mut cut_rng)?;
            let slot = env.slot();
            let out = env.step(&cuts, &alloc)?;
            sink(&MetricsRow::new(
                spec.policy,
                seed,
                None,
                episode,
                slot,
                &out.metrics,
            ))?;
            acc.add(&out.metrics);
            agent.store(Transition {
                state: obs,
                action: d.action,
                log_prob: d.log_prob,
                reward: out.reward,
                value: d.value,
                done: out.done,
            });
            if agent.memory_full() {
                let bootstrap = if out.done {
                    0.0
                } else {
                    agent.value(&out.next_state.observation(&system))?
                };
                let stats = agent.update(bootstrap, exec)?;
                log::debug!(
                    "update {}: actor {:.4} critic {:.4e} clip {:.3}",
                    agent.updates(),
                    stats.actor_loss,
                    stats.critic_loss,
                    stats.clip_fraction
                );
            }
            if out.done {
                break;
            }
        }
        let rec = acc.record(episode, agent.updates());
        if (episode + 1) % 10 == 0 || episode + 1 == spec.episodes {
            log::info!(
                "{} seed {seed} episode {}/{}: reward {:.4} delay {:.4} energy {:.4} memory {:.2}",
                spec.policy,
                episode + 1,
                spec.episodes,
                rec.reward,
                rec.mean_delay,
                rec.mean_energy,
                rec.mean_memory
            );
        }
        records.push(rec);
    }
    Ok(TrainOutcome {
        agent,
        episodes: records,
    })
}

/// Evaluation of one arrival rate and seed.
pub struct PointRun {
    pub point: SweepPoint,
    pub rows: Vec<MetricsRow>,
    /// Queue backlogs of the first episode, including the state after the
    /// last slot.
    pub trace: QueueTrace,
}

/// Plays `episodes` episodes at a fixed arrival rate, or with rates drawn
/// from the configured range when `lambda` is `None`. Learned policies act
/// with their mean action.
pub fn evaluate_point(
    kind: PolicyKind,
    agent: Option<&PpoAgent>,
    config: &SystemConfig,
    lambda: Option<f64>,
    seed: u64,
    episodes: usize,
    keep_rows: bool,
) -> Result<PointRun> {
    let config = match lambda {
        Some(l) => config.with_fixed_lambda(l),
        None => config.clone(),
    };
    let system = Arc::new(System::new(config)?);
    let n = system.n_ues();
    if kind.is_learned() {
        let agent =
            agent.ok_or_else(|| Error::Config(format!("policy {kind} needs a trained agent")))?;
        if agent.obs_dim() != 4 * n || agent.act_dim() != kind.action_dim(n) {
            return Err(Error::Checkpoint(format!(
                "agent dimensions {}x{} do not match {n} UEs for {kind}",
                agent.obs_dim(),
                agent.act_dim()
            )));
        }
    }
    let mut env = Environment::new(system.clone(), seed);
    let mut cut_rng = ChaCha8Rng::seed_from_u64(cut_seed(seed));
    let k = system.config.slots_per_episode;
    let mut rows = Vec::new();
    let mut trace = QueueTrace {
        policy: kind,
        lambda,
        seed,
        q_energy: Vec::new(),
        q_memory: Vec::new(),
    };
    let mut total = EpisodeAcc::default();
    let mut ue_delay = vec![0.0; n];
    let mut ue_energy = vec![0.0; n];
    let mut ue_memory = vec![0.0; n];
    let mut ue_feasible = vec![0usize; n];
    let mut final_qe = vec![0.0; n];
    let mut final_qm = vec![0.0; n];
    let mut diverging = 0;

    for episode in 0..episodes {
        if episode > 0 {
            env.reset();
        }
        let mut qe_hist: Vec<Vec<f64>> = Vec::with_capacity(k + 1);
        let mut qm_hist: Vec<Vec<f64>> = Vec::with_capacity(k + 1);
        loop {
            let state = env.state().clone();
            qe_hist.push(state.q_energy.clone());
            qm_hist.push(state.q_memory.clone());
            let raw = match agent {
                Some(a) if kind.is_learned() => a.act_deterministic(&state.observation(&system))?,
                _ => Vec::new(),
            };
            let (cuts, alloc) = decide(kind, &system, &state, &raw, &mut cut_rng)?;
            let slot = env.slot();
            let out = env.step(&cuts, &alloc)?;
            total.add(&out.metrics);
            for (i, u) in out.metrics.ues.iter().enumerate() {
                ue_delay[i] += u.effective_delay;
                ue_energy[i] += u.energy.total();
                ue_memory[i] += u.memory;
                ue_feasible[i] += u.feasible as usize;
            }
            if keep_rows {
                rows.push(MetricsRow::new(
                    kind,
                    seed,
                    lambda,
                    episode,
                    slot,
                    &out.metrics,
                ));
            }
            if out.done {
                qe_hist.push(out.next_state.q_energy.clone());
                qm_hist.push(out.next_state.q_memory.clone());
                break;
            }
        }
        let last = qe_hist.len() - 1;
        for i in 0..n {
            final_qe[i] += qe_hist[last][i];
            final_qm[i] += qm_hist[last][i];
            for hist in [&qe_hist, &qm_hist] {
                let half: Vec<f64> = hist[last / 2..].iter().map(|q| q[i]).collect();
                if half.len() > 1 && half.windows(2).all(|w| w[1] > w[0]) {
                    diverging += 1;
                }
            }
        }
        if episode == 0 {
            trace.q_energy = qe_hist;
            trace.q_memory = qm_hist;
        }
    }

    let slots = total.slots.max(1) as f64;
    let ep = episodes.max(1) as f64;
    let budgets_e = system.energy_budgets();
    let budgets_m = system.memory_budgets();
    let ues: Vec<UeSummary> = (0..n)
        .map(|i| UeSummary {
            mean_delay: ue_delay[i] / slots,
            mean_energy: ue_energy[i] / slots,
            mean_memory: ue_memory[i] / slots,
            energy_budget: budgets_e[i],
            memory_budget: budgets_m[i],
            final_q_energy: final_qe[i] / ep,
            final_q_memory: final_qm[i] / ep,
            feasible_fraction: ue_feasible[i] as f64 / slots,
        })
        .collect();
    let rec = total.record(0, 0);
    let point = SweepPoint {
        policy: kind,
        lambda,
        seed,
        episodes,
        mean_reward: rec.reward,
        mean_delay: rec.mean_delay,
        mean_energy: rec.mean_energy,
        mean_memory: rec.mean_memory,
        final_q_energy: ues.iter().map(|u| u.final_q_energy).sum::<f64>() / n as f64,
        final_q_memory: ues.iter().map(|u| u.final_q_memory).sum::<f64>() / n as f64,
        diverging_queues: diverging,
        ues,
    };
    Ok(PointRun { point, rows, trace })
}

pub struct EvalRun {
    pub summary: EvalSummary,
    /// Per-slot rows in sweep order (arrival rate, then seed), when kept.
    pub rows: Vec<MetricsRow>,
}

/// Evaluates `spec.policy` at every sweep arrival rate and seed. The
/// queue trace is taken from the largest arrival rate and first seed.
pub fn evaluate(
    spec: &ExperimentSpec,
    agent: Option<&PpoAgent>,
    exec: Exec,
    keep_rows: bool,
) -> Result<EvalRun> {
    spec.validate()?;
    let config = spec.system_config();
    let jobs: Vec<(f64, u64)> = spec
        .lambda_sweep
        .iter()
        .flat_map(|&l| spec.seeds.iter().map(move |&s| (l, s)))
        .collect();
    let results = exec.map(jobs, |(lambda, seed)| {
        evaluate_point(
            spec.policy,
            agent,
            &config,
            Some(lambda),
            seed,
            spec.episodes,
            keep_rows,
        )
    });
    let mut points = Vec::with_capacity(results.len());
    let mut rows = Vec::new();
    let mut traces = Vec::new();
    for r in results {
        let r = r?;
        points.push(r.point);
        rows.extend(r.rows);
        traces.push(r.trace);
    }
    let lmax = spec
        .lambda_sweep
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let queue_trace = traces
        .into_iter()
        .find(|t| t.lambda == Some(lmax) && t.seed == spec.seeds[0]);
    Ok(EvalRun {
        summary: EvalSummary {
            points,
            queue_trace,
        },
        rows,
    })
}

/// Runs a fixed (non-learned) policy over the sweep.
pub fn run_baseline(spec: &ExperimentSpec, exec: Exec, keep_rows: bool) -> Result<EvalRun> {
    if spec.policy.is_learned() {
        return Err(Error::Config(format!(
            "{} is a learned policy; train it first",
            spec.policy
        )));
    }
    evaluate(spec, None, exec, keep_rows)
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub policy: PolicyKind,
    pub scenario: String,
    pub seed: u64,
    pub episodes_trained: usize,
    pub config: SystemConfig,
    pub agent: PpoAgent,
}

impl Checkpoint {
    pub fn new(spec: &ExperimentSpec, seed: u64, agent: PpoAgent) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            policy: spec.policy,
            scenario: spec.scenario.clone(),
            seed,
            episodes_trained: spec.episodes,
            config: spec.system_config(),
            agent,
        }
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let ck: Checkpoint =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        if !ck.policy.is_learned() {
            return Err(Error::Checkpoint(format!(
                "policy {} has no parameters",
                ck.policy
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }
}
