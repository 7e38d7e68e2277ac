//! Per-slot metric rows, episode and sweep summaries, and their CSV/JSON
//! persistence.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PolicyKind;
use crate::environment::SlotMetrics;
use crate::error::{Error, Result};

/// Per-UE part of a [`MetricsRow`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UeRow {
    pub cut: usize,
    pub lambda: f64,
    pub gain: f64,
    pub alpha: f64,
    pub f_ue: f64,
    pub f_es: f64,
    /// Effective end-to-end delay (penalty delay when infeasible).
    pub t_e2e: f64,
    pub energy: f64,
    pub memory: f64,
    pub q_energy: f64,
    pub q_memory: f64,
    pub feasible: bool,
}

const UE_COLUMNS: [&str; 12] = [
    "cut", "lambda", "gain", "alpha", "f_ue", "f_es", "t_e2e", "energy", "memory", "q_energy",
    "q_memory", "feasible",
];

/// One slot of one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub policy: PolicyKind,
    pub seed: u64,
    /// Fixed arrival rate of an evaluation point; `None` while training
    /// over the configured range.
    pub sweep_lambda: Option<f64>,
    pub episode: usize,
    pub slot: usize,
    pub reward: f64,
    pub mean_delay: f64,
    pub ues: Vec<UeRow>,
}

impl MetricsRow {
    pub fn new(
        policy: PolicyKind,
        seed: u64,
        sweep_lambda: Option<f64>,
        episode: usize,
        slot: usize,
        m: &SlotMetrics,
    ) -> Self {
        Self {
            policy,
            seed,
            sweep_lambda,
            episode,
            slot,
            reward: m.reward,
            mean_delay: m.mean_delay(),
            ues: m
                .ues
                .iter()
                .map(|u| UeRow {
                    cut: u.cut,
                    lambda: u.arrival_rate,
                    gain: u.gain,
                    alpha: u.alpha,
                    f_ue: u.f_ue,
                    f_es: u.f_es,
                    t_e2e: u.effective_delay,
                    energy: u.energy.total(),
                    memory: u.memory,
                    q_energy: u.q_energy,
                    q_memory: u.q_memory,
                    feasible: u.feasible,
                })
                .collect(),
        }
    }

    /// `-(sum Q E + W C + V T)` recomputed from the row's own fields.
    pub fn reconstructed_reward(&self, v_weight: f64) -> f64 {
        -self
            .ues
            .iter()
            .map(|u| u.q_energy * u.energy + u.q_memory * u.memory + v_weight * u.t_e2e)
            .sum::<f64>()
    }
}

pub fn metrics_header(n_ues: usize) -> Vec<String> {
    let mut h: Vec<String> = [
        "policy",
        "seed",
        "sweep_lambda",
        "episode",
        "slot",
        "reward",
        "mean_delay",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for i in 0..n_ues {
        h.extend(UE_COLUMNS.iter().map(|c| format!("{c}_{i}")));
    }
    h
}

fn row_record(r: &MetricsRow) -> Vec<String> {
    let mut rec = vec![
        r.policy.to_string(),
        r.seed.to_string(),
        r.sweep_lambda.map(|l| l.to_string()).unwrap_or_default(),
        r.episode.to_string(),
        r.slot.to_string(),
        r.reward.to_string(),
        r.mean_delay.to_string(),
    ];
    for u in &r.ues {
        rec.extend([
            u.cut.to_string(),
            u.lambda.to_string(),
            u.gain.to_string(),
            u.alpha.to_string(),
            u.f_ue.to_string(),
            u.f_es.to_string(),
            u.t_e2e.to_string(),
            u.energy.to_string(),
            u.memory.to_string(),
            u.q_energy.to_string(),
            u.q_memory.to_string(),
            (u.feasible as u8).to_string(),
        ]);
    }
    rec
}

/// Streams metric rows to a CSV file.
pub struct MetricsWriter {
    writer: csv::Writer<BufWriter<File>>,
    path: std::path::PathBuf,
    n_ues: usize,
}

impl MetricsWriter {
    /// Creates the file and writes the header.
    pub fn create(path: impl AsRef<Path>, n_ues: usize) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut writer = csv::Writer::from_writer(BufWriter::new(file));
        writer
            .write_record(metrics_header(n_ues))
            .map_err(|e| csv_err(&path, e))?;
        Ok(Self {
            writer,
            path,
            n_ues,
        })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        if row.ues.len() != self.n_ues {
            return Err(Error::Misaligned {
                expected: self.n_ues,
                actual: row.ues.len(),
            });
        }
        self.writer
            .write_record(row_record(row))
            .map_err(|e| csv_err(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

/// Writes `rows` as CSV; an empty slice produces a header-only file.
pub fn emit_metrics(rows: &[MetricsRow], n_ues: usize, path: impl AsRef<Path>) -> Result<()> {
    let mut w = MetricsWriter::create(path, n_ues)?;
    for r in rows {
        w.write(r)?;
    }
    w.finish()
}

/// Parses a file written by [`emit_metrics`] or [`MetricsWriter`].
pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    let fixed = 7;
    if header.len() < fixed || (header.len() - fixed) % UE_COLUMNS.len() != 0 {
        return Err(parse_err(path, "unexpected metrics header"));
    }
    let n_ues = (header.len() - fixed) / UE_COLUMNS.len();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let f = |i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .map_err(|_| parse_err(path, &format!("bad number {:?}", &rec[i])))
        };
        let u = |i: usize| -> Result<usize> {
            rec[i]
                .parse()
                .map_err(|_| parse_err(path, &format!("bad integer {:?}", &rec[i])))
        };
        let policy: PolicyKind = rec[0].parse()?;
        let seed = rec[1].parse().map_err(|_| parse_err(path, "bad seed"))?;
        let sweep_lambda = if rec[2].is_empty() { None } else { Some(f(2)?) };
        let mut ues = Vec::with_capacity(n_ues);
        for k in 0..n_ues {
            let b = fixed + k * UE_COLUMNS.len();
            ues.push(UeRow {
                cut: u(b)?,
                lambda: f(b + 1)?,
                gain: f(b + 2)?,
                alpha: f(b + 3)?,
                f_ue: f(b + 4)?,
                f_es: f(b + 5)?,
                t_e2e: f(b + 6)?,
                energy: f(b + 7)?,
                memory: f(b + 8)?,
                q_energy: f(b + 9)?,
                q_memory: f(b + 10)?,
                feasible: &rec[b + 11] == "1",
            });
        }
        rows.push(MetricsRow {
            policy,
            seed,
            sweep_lambda,
            episode: u(3)?,
            slot: u(4)?,
            reward: f(5)?,
            mean_delay: f(6)?,
            ues,
        });
    }
    Ok(rows)
}

fn parse_err(path: &Path, msg: &str) -> Error {
    Error::Parse {
        layer: None,
        message: format!("{}: {msg}", path.display()),
    }
}

/// Per-episode aggregates of a training or evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    /// Mean per-slot reward.
    pub reward: f64,
    pub mean_delay: f64,
    pub mean_energy: f64,
    pub mean_memory: f64,
    pub infeasible_fraction: f64,
    /// PPO updates performed so far.
    pub updates: u64,
}

/// Trailing moving average; early entries average what is available.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (i, v) in values.iter().enumerate() {
        sum += v;
        if i >= window {
            sum -= values[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

pub const MOVING_AVERAGE_WINDOW: usize = 20;

pub fn emit_episodes(records: &[EpisodeRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ma = moving_average(
        &records.iter().map(|r| r.reward).collect::<Vec<_>>(),
        MOVING_AVERAGE_WINDOW,
    );
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record([
        "episode",
        "reward",
        "reward_ma20",
        "mean_delay",
        "mean_energy",
        "mean_memory",
        "infeasible_fraction",
        "updates",
    ])
    .map_err(|e| csv_err(path, e))?;
    for (r, m) in records.iter().zip(&ma) {
        w.write_record([
            r.episode.to_string(),
            r.reward.to_string(),
            m.to_string(),
            r.mean_delay.to_string(),
            r.mean_energy.to_string(),
            r.mean_memory.to_string(),
            r.infeasible_fraction.to_string(),
            r.updates.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Per-UE evaluation aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UeSummary {
    pub mean_delay: f64,
    pub mean_energy: f64,
    pub mean_memory: f64,
    pub energy_budget: f64,
    pub memory_budget: f64,
    /// Queue backlogs after the last slot, averaged over episodes.
    pub final_q_energy: f64,
    pub final_q_memory: f64,
    pub feasible_fraction: f64,
}

/// Aggregates of one (policy, arrival rate, seed) evaluation point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub policy: PolicyKind,
    /// `None` when rates were drawn from the configured range.
    pub lambda: Option<f64>,
    pub seed: u64,
    pub episodes: usize,
    pub mean_reward: f64,
    pub mean_delay: f64,
    pub mean_energy: f64,
    pub mean_memory: f64,
    pub final_q_energy: f64,
    pub final_q_memory: f64,
    /// Episode-UE-queue triples whose backlog rose at every slot of the
    /// episode's second half.
    pub diverging_queues: usize,
    pub ues: Vec<UeSummary>,
}

/// Queue backlogs per slot, one entry per UE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueTrace {
    pub policy: PolicyKind,
    pub lambda: Option<f64>,
    pub seed: u64,
    pub q_energy: Vec<Vec<f64>>,
    pub q_memory: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub points: Vec<SweepPoint>,
    pub queue_trace: Option<QueueTrace>,
}

pub fn emit_summary(summary: &EvalSummary, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let json_path = dir.join("summary.json");
    let text = serde_json::to_string_pretty(summary).expect("summary serializes");
    std::fs::write(&json_path, text + "\n").map_err(|e| Error::io(&json_path, e))?;

    let csv_path = dir.join("summary.csv");
    let file = File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let n = summary.points.first().map_or(0, |p| p.ues.len());
    let mut header: Vec<String> = [
        "policy",
        "lambda",
        "seed",
        "episodes",
        "mean_reward",
        "mean_delay",
        "mean_energy",
        "mean_memory",
        "final_q_energy",
        "final_q_memory",
        "diverging_queues",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for i in 0..n {
        for c in [
            "delay",
            "energy",
            "memory",
            "final_q_energy",
            "final_q_memory",
            "feasible_fraction",
        ] {
            header.push(format!("{c}_{i}"));
        }
    }
    w.write_record(&header).map_err(|e| csv_err(&csv_path, e))?;
    for p in &summary.points {
        let mut rec = vec![
            p.policy.to_string(),
            p.lambda.map(|l| l.to_string()).unwrap_or_default(),
            p.seed.to_string(),
            p.episodes.to_string(),
            p.mean_reward.to_string(),
            p.mean_delay.to_string(),
            p.mean_energy.to_string(),
            p.mean_memory.to_string(),
            p.final_q_energy.to_string(),
            p.final_q_memory.to_string(),
            p.diverging_queues.to_string(),
        ];
        for u in &p.ues {
            rec.extend([
                u.mean_delay.to_string(),
                u.mean_energy.to_string(),
                u.mean_memory.to_string(),
                u.final_q_energy.to_string(),
                u.final_q_memory.to_string(),
                u.feasible_fraction.to_string(),
            ]);
        }
        w.write_record(&rec).map_err(|e| csv_err(&csv_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;

    if let Some(t) = &summary.queue_trace {
        let path = dir.join("queue_trace.csv");
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        let n = t.q_energy.first().map_or(0, Vec::len);
        let mut head = vec!["slot".to_string()];
        head.extend((0..n).map(|i| format!("q_energy_{i}")));
        head.extend((0..n).map(|i| format!("q_memory_{i}")));
        let io = |e| Error::io(&path, e);
        writeln!(w, "{}", head.join(",")).map_err(io)?;
        for (s, (qe, qm)) in t.q_energy.iter().zip(&t.q_memory).enumerate() {
            let vals: Vec<String> = qe.iter().chain(qm).map(f64::to_string).collect();
            writeln!(w, "{s},{}", vals.join(",")).map_err(io)?;
        }
        w.flush().map_err(io)?;
    }
    Ok(())
}
