//! Per-slot cost model: delays, device energy, memory footprint and the
//! drift-plus-penalty objective.
//!
//! Everything here is a pure function. Units are SI unless stated: seconds,
//! joules, hertz, cycles, watts; payloads and memory in bytes.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::environment::VirtualQueues;
use crate::error::{Error, Result};
use crate::profiles::DnnProfile;

/// Bandwidth share below which the uplink rate is taken as its limit, 0.
pub const MIN_BANDWIDTH_SHARE: f64 = 1e-12;

/// Static description of one user device.
#[derive(Debug, Clone, PartialEq)]
pub struct UeSpec {
    pub profile: Arc<DnnProfile>,
    pub tx_power_w: f64,
    /// Per-slot energy budget `e_n`.
    pub energy_budget_j: f64,
    /// Long-term memory cost budget `epsilon_n`.
    pub memory_budget_bytes: f64,
    pub mem_weight_ue: f64,
    pub mem_weight_es: f64,
    pub cycles_per_mac: f64,
    /// Effective switched capacitance.
    pub kappa: f64,
}

impl UeSpec {
    /// CPU cycles per task executed on the device for `cut`.
    pub fn local_cycles(&self, cut: usize) -> Result<f64> {
        Ok(self.cycles_per_mac * self.profile.local_macs(cut)? as f64)
    }

    /// CPU cycles per task executed on the edge server for `cut`.
    pub fn edge_cycles(&self, cut: usize) -> Result<f64> {
        Ok(self.cycles_per_mac * self.profile.edge_macs(cut)? as f64)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tx_power_w", self.tx_power_w),
            ("energy_budget_j", self.energy_budget_j),
            ("memory_budget_bytes", self.memory_budget_bytes),
            ("cycles_per_mac", self.cycles_per_mac),
            ("kappa", self.kappa),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("mem_weight_ue", self.mem_weight_ue),
            ("mem_weight_es", self.mem_weight_es),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadioEnv {
    pub bandwidth_hz: f64,
    pub noise_psd_w_per_hz: f64,
}

/// Resource decision for one slot, one entry per UE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub alpha: Vec<f64>,
    pub f_ue: Vec<f64>,
    pub f_es: Vec<f64>,
}

impl Allocation {
    pub fn zeros(n: usize) -> Self {
        Self {
            alpha: vec![0.0; n],
            f_ue: vec![0.0; n],
            f_es: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    /// Checks the per-slot resource constraints (bandwidth simplex, edge CPU
    /// budget, device CPU box) with the given absolute slack on the sums.
    pub fn check(&self, f_max_ue: f64, f_max_es: f64, sum_tol: f64) -> Result<()> {
        let n = self.alpha.len();
        if self.f_ue.len() != n || self.f_es.len() != n {
            return Err(Error::Allocation("vector lengths differ".into()));
        }
        let all = self.alpha.iter().chain(&self.f_ue).chain(&self.f_es);
        if all.clone().any(|x| !x.is_finite()) {
            return Err(Error::Allocation("non-finite entry".into()));
        }
        if self.alpha.iter().any(|&a| !(0.0..=1.0).contains(&a)) {
            return Err(Error::Allocation("alpha outside [0, 1]".into()));
        }
        let alpha_sum: f64 = self.alpha.iter().sum();
        if alpha_sum > 1.0 + sum_tol {
            return Err(Error::Allocation(format!("sum of alpha = {alpha_sum}")));
        }
        if self.f_es.iter().any(|&f| f < 0.0) {
            return Err(Error::Allocation("negative edge frequency".into()));
        }
        let es_sum: f64 = self.f_es.iter().sum();
        if es_sum > f_max_es * (1.0 + sum_tol) {
            return Err(Error::Allocation(format!(
                "edge frequencies sum to {es_sum}"
            )));
        }
        if self.f_ue.iter().any(|&f| f < 0.0 || f > f_max_ue) {
            return Err(Error::Allocation(
                "device frequency outside [0, f_max_ue]".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DelayBreakdown {
    pub t_ue: f64,
    pub t_trans: f64,
    pub t_es: f64,
    pub t_e2e: f64,
}

impl DelayBreakdown {
    pub fn new(t_ue: f64, t_trans: f64, t_es: f64) -> Self {
        Self {
            t_ue,
            t_trans,
            t_es,
            t_e2e: t_ue + t_trans + t_es,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub computation: f64,
    pub transmission: f64,
}

impl EnergyBreakdown {
    pub fn total(&self) -> f64 {
        self.computation + self.transmission
    }
}

/// Mean sojourn time of the device's M/D/1 task queue.
///
/// `local_cycles` may be 0 (nothing runs locally), in which case the delay
/// is 0. Otherwise the service rate `f_ue / local_cycles` must exceed the
/// arrival rate.
pub fn local_sojourn(arrival_rate: f64, f_ue: f64, local_cycles: f64) -> Result<f64> {
    if local_cycles == 0.0 {
        return Ok(0.0);
    }
    let mu = f_ue / local_cycles;
    if !(mu > arrival_rate) {
        return Err(Error::Unstable {
            arrival_rate,
            service_rate: mu,
        });
    }
    let util = arrival_rate / mu;
    Ok(1.0 / mu + arrival_rate / (2.0 * mu * mu * (1.0 - util)))
}

/// Achievable uplink rate in bit/s for bandwidth share `alpha`.
pub fn uplink_rate(alpha: f64, radio: &RadioEnv, tx_power_w: f64, gain: f64) -> f64 {
    if alpha < MIN_BANDWIDTH_SHARE {
        return 0.0;
    }
    let band = alpha * radio.bandwidth_hz;
    let snr = tx_power_w * gain / (band * radio.noise_psd_w_per_hz);
    band * snr.ln_1p() / std::f64::consts::LN_2
}

/// Uplink time for `payload_bytes`.
pub fn trans_delay(
    payload_bytes: f64,
    alpha: f64,
    radio: &RadioEnv,
    tx_power_w: f64,
    gain: f64,
) -> Result<f64> {
    if payload_bytes == 0.0 {
        return Ok(0.0);
    }
    let rate = uplink_rate(alpha, radio, tx_power_w, gain);
    if !(rate > 0.0) {
        return Err(Error::InfeasibleTransmission);
    }
    Ok(8.0 * payload_bytes / rate)
}

/// Edge processing time; queueing at the edge is ignored.
pub fn edge_sojourn(edge_cycles: f64, f_es: f64) -> Result<f64> {
    if edge_cycles == 0.0 {
        return Ok(0.0);
    }
    if !(f_es > 0.0) {
        return Err(Error::ZeroEdgeFrequency);
    }
    Ok(edge_cycles / f_es)
}

/// Device energy over one slot of `slot_s` seconds.
pub fn energy(
    ue: &UeSpec,
    cut: usize,
    f_ue: f64,
    arrival_rate: f64,
    trans_delay: f64,
    slot_s: f64,
) -> Result<EnergyBreakdown> {
    let cycles = ue.local_cycles(cut)?;
    Ok(EnergyBreakdown {
        computation: ue.kappa * f_ue * f_ue * cycles * arrival_rate * slot_s,
        transmission: ue.tx_power_w * trans_delay * arrival_rate * slot_s,
    })
}

/// Weighted memory footprint in bytes: parameters plus peak activation on
/// each side of the cut.
///
/// The device-side activation peak covers layers `1..=cut`; at `cut = 0` the
/// device only buffers the raw input, so layer 0 counts there.
pub fn memory_cost(ue: &UeSpec, cut: usize) -> Result<f64> {
    let p = &ue.profile;
    let l = p.layer_count();
    let ue_act = if cut == 0 {
        p.peak_activation(0, 0)?
    } else {
        p.peak_activation(1, cut)?
    };
    let es_act = p.peak_activation(cut + 1, l)?;
    let ue_side = (p.local_param_bytes(cut)? + ue_act) as f64;
    let es_side = (p.edge_param_bytes(cut)? + es_act) as f64;
    Ok(ue.mem_weight_ue * ue_side + ue.mem_weight_es * es_side)
}

/// Per-UE quantities entering the per-slot objective, in the same units as
/// the virtual queues (energy in joules, memory in the configured unit).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UeCost {
    pub energy: f64,
    pub memory: f64,
    pub delay: f64,
}

/// `sum_n (Q_n E_n + W_n C_n) + V sum_n T_n`.
pub fn slot_objective(queues: &VirtualQueues, costs: &[UeCost], v: f64) -> f64 {
    debug_assert_eq!(queues.energy.len(), costs.len());
    let backlog: f64 = costs
        .iter()
        .zip(queues.energy.iter().zip(&queues.memory))
        .map(|(c, (q, w))| q * c.energy + w * c.memory)
        .sum();
    let delay: f64 = costs.iter().map(|c| c.delay).sum();
    backlog + v * delay
}

/// The agent's reward is the negated per-slot objective.
pub fn reward(queues: &VirtualQueues, costs: &[UeCost], v: f64) -> f64 {
    -slot_objective(queues, costs, v)
}
