//! Exact per-slot resource allocation for fixed partition cuts.
//!
//! With the cuts fixed the per-slot objective separates into three convex
//! problems:
//!
//! * device CPU frequency per UE, a 1-D problem on the stable interval,
//!   solved by Fibonacci search;
//! * edge CPU split, `min V sum d_n / f_n` s.t. `sum f_n <= F`, with closed
//!   form `f_n = F sqrt(d_n) / sum sqrt(d_m)`;
//! * bandwidth split, `min sum w_n psi_n / R_n(alpha_n)` on the simplex,
//!   solved from the KKT conditions by nested bisection on the multiplier.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::system_model::{Allocation, MIN_BANDWIDTH_SHARE};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverTolerances {
    /// Final Fibonacci interval as a fraction of `f_max_ue`.
    pub local_rel: f64,
    /// `|sum alpha - 1|` at which the multiplier search stops.
    pub bandwidth_sum: f64,
    /// Relative derivative match in the per-UE inner search.
    pub bandwidth_inner: f64,
}

impl Default for SolverTolerances {
    fn default() -> Self {
        Self {
            local_rel: 1e-6,
            bandwidth_sum: 1e-9,
            bandwidth_inner: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UeAllocInput {
    pub q_energy: f64,
    pub q_memory: f64,
    pub arrival_rate: f64,
    pub gain: f64,
    pub tx_power_w: f64,
    pub kappa: f64,
    /// Cycles per task on the device.
    pub local_cycles: f64,
    /// Cycles per task on the edge server.
    pub edge_cycles: f64,
    /// Uplink bytes per task.
    pub payload_bytes: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocProblem {
    pub ues: Vec<UeAllocInput>,
    pub v_weight: f64,
    pub bandwidth_hz: f64,
    pub noise_psd_w_per_hz: f64,
    pub f_max_ue_hz: f64,
    pub f_max_es_hz: f64,
    #[serde(default = "one")]
    pub slot_duration_s: f64,
    #[serde(default)]
    pub tol: SolverTolerances,
}

fn one() -> f64 {
    1.0
}

impl AllocProblem {
    pub fn validate(&self) -> Result<()> {
        for (i, u) in self.ues.iter().enumerate() {
            let fields = [
                u.q_energy,
                u.q_memory,
                u.arrival_rate,
                u.gain,
                u.tx_power_w,
                u.kappa,
                u.local_cycles,
                u.edge_cycles,
                u.payload_bytes,
            ];
            if fields.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(Error::Config(format!(
                    "UE {i}: inputs must be finite and non-negative"
                )));
            }
            if u.payload_bytes > 0.0 && !(u.gain > 0.0 && u.tx_power_w > 0.0) {
                return Err(Error::Config(format!(
                    "UE {i}: transmitting UE needs positive gain and power"
                )));
            }
        }
        let globals = [
            self.v_weight,
            self.bandwidth_hz,
            self.noise_psd_w_per_hz,
            self.f_max_ue_hz,
            self.f_max_es_hz,
            self.slot_duration_s,
        ];
        if globals.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(Error::Config(
                "global allocation parameters must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Minimizes a unimodal `f` over `[lo, hi]` by Fibonacci search, stopping
/// once the bracket is shorter than `tol`. Returns `(x, f(x))`.
pub fn fibonacci_minimize(f: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> (f64, f64) {
    assert!(hi >= lo && tol > 0.0);
    let span = hi - lo;
    if span <= tol {
        let x = 0.5 * (lo + hi);
        return (x, f(x));
    }
    let mut fib = vec![1.0f64, 1.0];
    while *fib.last().unwrap() < span / tol {
        let k = fib.len();
        fib.push(fib[k - 1] + fib[k - 2]);
    }
    let n = fib.len() - 1;
    let (mut a, mut b) = (lo, hi);
    let mut x1 = a + fib[n - 2] / fib[n] * (b - a);
    let mut x2 = a + fib[n - 1] / fib[n] * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for k in 1..n - 1 {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = a + fib[n - k - 2] / fib[n - k] * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + fib[n - k - 1] / fib[n - k] * (b - a);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Device-CPU objective of UE `i` at frequency `f`:
/// `Q kappa f^2 d lambda tau + V (d / f + d^2 lambda / (2 (f^2 - f d lambda)))`.
/// Infinite outside the stable region.
pub fn local_cpu_objective(prob: &AllocProblem, i: usize, f: f64) -> f64 {
    let u = &prob.ues[i];
    let d = u.local_cycles;
    if d == 0.0 {
        return 0.0;
    }
    let lam = u.arrival_rate;
    let denom = f * f - f * d * lam;
    if !(f > 0.0 && denom > 0.0) {
        return f64::INFINITY;
    }
    let energy = u.q_energy * u.kappa * f * f * d * lam * prob.slot_duration_s;
    let delay = d / f + d * d * lam / (2.0 * denom);
    energy + prob.v_weight * delay
}

/// Optimal device CPU frequency for UE `i`; 0 when nothing runs locally.
///
/// Fails with [`Error::Unstable`] when even `f_max_ue` cannot serve the
/// arrival rate.
pub fn solve_local_cpu(prob: &AllocProblem, i: usize) -> Result<f64> {
    let u = &prob.ues[i];
    let d = u.local_cycles;
    if d == 0.0 {
        return Ok(0.0);
    }
    let fmax = prob.f_max_ue_hz;
    let lo = d * u.arrival_rate * (1.0 + 1e-6);
    if lo >= fmax {
        return Err(Error::Unstable {
            arrival_rate: u.arrival_rate,
            service_rate: fmax / d,
        });
    }
    let obj = |f: f64| local_cpu_objective(prob, i, f);
    let (x, fx) = fibonacci_minimize(obj, lo, fmax, prob.tol.local_rel * fmax);
    // The objective is monotone when the energy weight vanishes; take the cap exactly then.
    if obj(fmax) <= fx {
        Ok(fmax)
    } else {
        Ok(x)
    }
}

/// `V sum d_n / f_n` over UEs with edge work.
pub fn edge_cpu_objective(prob: &AllocProblem, f_es: &[f64]) -> f64 {
    prob.ues
        .iter()
        .zip(f_es)
        .filter(|(u, _)| u.edge_cycles > 0.0)
        .map(|(u, f)| {
            if *f > 0.0 {
                prob.v_weight * u.edge_cycles / f
            } else {
                f64::INFINITY
            }
        })
        .sum()
}

/// Closed-form edge CPU split, proportional to `sqrt(d_es)`.
pub fn solve_edge_cpu(prob: &AllocProblem) -> Vec<f64> {
    let roots: Vec<f64> = prob.ues.iter().map(|u| u.edge_cycles.sqrt()).collect();
    let total: f64 = roots.iter().sum();
    if total == 0.0 {
        return vec![0.0; prob.ues.len()];
    }
    let mut f: Vec<f64> = roots.iter().map(|r| prob.f_max_es_hz * r / total).collect();
    fit_to_budget(&mut f, prob.f_max_es_hz);
    f
}

/// Removes floating-point overshoot so that `sum(v) <= total` holds exactly
/// as computed, taking the excess from the largest entry.
pub fn fit_to_budget(v: &mut [f64], total: f64) {
    for _ in 0..8 {
        let excess = v.iter().sum::<f64>() - total;
        if excess <= 0.0 {
            return;
        }
        let Some(k) = (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b])) else {
            return;
        };
        v[k] = (v[k] - excess.max(v[k] * f64::EPSILON)).max(0.0);
    }
}

/// Weighted uplink time of one UE as a function of its bandwidth share.
#[derive(Debug, Clone, Copy)]
struct UplinkTerm {
    /// `(Q p lambda tau + V) * 8 psi / W`.
    scale: f64,
    /// Full-band SNR `p h / (W N0)`.
    snr: f64,
}

impl UplinkTerm {
    fn new(prob: &AllocProblem, u: &UeAllocInput) -> Self {
        let weight =
            u.q_energy * u.tx_power_w * u.arrival_rate * prob.slot_duration_s + prob.v_weight;
        Self {
            scale: weight * 8.0 * u.payload_bytes / prob.bandwidth_hz,
            snr: u.tx_power_w * u.gain / (prob.bandwidth_hz * prob.noise_psd_w_per_hz),
        }
    }

    /// Spectral efficiency times share, `alpha log2(1 + snr / alpha)`.
    fn rate(&self, alpha: f64) -> f64 {
        if alpha < MIN_BANDWIDTH_SHARE {
            return 0.0;
        }
        alpha * (self.snr / alpha).ln_1p() / std::f64::consts::LN_2
    }

    fn value(&self, alpha: f64) -> f64 {
        let r = self.rate(alpha);
        if r > 0.0 {
            self.scale / r
        } else {
            f64::INFINITY
        }
    }

    /// `-d value / d alpha`, positive and decreasing in `alpha`.
    fn neg_slope(&self, alpha: f64) -> f64 {
        let r = self.rate(alpha);
        if r <= 0.0 {
            return f64::INFINITY;
        }
        let x = self.snr / alpha;
        // ln(1+x) - x/(1+x), series form for small x to avoid cancellation
        let dr = if x < 1e-4 {
            x * x * (0.5 - x * (2.0 / 3.0 - 0.75 * x))
        } else {
            x.ln_1p() - x / (1.0 + x)
        } / std::f64::consts::LN_2;
        self.scale * dr / (r * r)
    }

    /// Share at which `neg_slope` equals `u`, capped at 1.
    fn share_at(&self, u: f64, rel_tol: f64) -> f64 {
        if self.neg_slope(1.0) >= u {
            return 1.0;
        }
        let (mut lo, mut hi) = (MIN_BANDWIDTH_SHARE, 1.0);
        for _ in 0..200 {
            let mid = (lo * hi).sqrt();
            let g = self.neg_slope(mid);
            if (g / u - 1.0).abs() <= rel_tol {
                return mid;
            }
            if g > u {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi / lo - 1.0 < 1e-15 {
                break;
            }
        }
        (lo * hi).sqrt()
    }
}

/// `sum (Q p lambda tau + V) 8 psi / R(alpha)` over transmitting UEs.
pub fn bandwidth_objective(prob: &AllocProblem, alpha: &[f64]) -> f64 {
    prob.ues
        .iter()
        .zip(alpha)
        .filter(|(u, _)| u.payload_bytes > 0.0)
        .map(|(u, &a)| UplinkTerm::new(prob, u).value(a))
        .sum()
}

/// Per-UE marginal value `-d objective / d alpha_n` at `alpha`.
pub fn bandwidth_marginals(prob: &AllocProblem, alpha: &[f64]) -> Vec<f64> {
    prob.ues
        .iter()
        .zip(alpha)
        .map(|(u, &a)| {
            if u.payload_bytes > 0.0 {
                UplinkTerm::new(prob, u).neg_slope(a)
            } else {
                0.0
            }
        })
        .collect()
}

/// Optimal bandwidth shares. Transmitting UEs split the whole band with
/// equalized marginals; the rest get 0.
pub fn solve_bandwidth(prob: &AllocProblem) -> Vec<f64> {
    let n = prob.ues.len();
    let active: Vec<usize> = (0..n)
        .filter(|&i| prob.ues[i].payload_bytes > 0.0)
        .collect();
    let mut alpha = vec![0.0; n];
    match active.len() {
        0 => return alpha,
        1 => {
            alpha[active[0]] = 1.0;
            return alpha;
        }
        _ => {}
    }
    let terms: Vec<UplinkTerm> = active
        .iter()
        .map(|&i| UplinkTerm::new(prob, &prob.ues[i]))
        .collect();
    let inner = prob.tol.bandwidth_inner;
    let shares = |u: f64| -> Vec<f64> { terms.iter().map(|t| t.share_at(u, inner)).collect() };

    let m = active.len() as f64;
    // Every share is >= its value at u_lo (one of them is 1) and <= 1/m at u_hi.
    let mut u_lo = terms
        .iter()
        .map(|t| t.neg_slope(1.0))
        .fold(f64::INFINITY, f64::min);
    let mut u_hi = terms
        .iter()
        .map(|t| t.neg_slope(1.0 / m))
        .fold(0.0, f64::max);
    let mut best = shares(u_hi);
    for _ in 0..300 {
        let u = (u_lo * u_hi).sqrt();
        let s = shares(u);
        let sum: f64 = s.iter().sum();
        best = s;
        if (sum - 1.0).abs() <= prob.tol.bandwidth_sum {
            break;
        }
        if sum > 1.0 {
            u_lo = u;
        } else {
            u_hi = u;
        }
        if u_hi / u_lo - 1.0 < 1e-15 {
            break;
        }
    }
    let sum: f64 = best.iter().sum();
    for (k, &i) in active.iter().enumerate() {
        alpha[i] = if sum > 1.0 { best[k] / sum } else { best[k] };
    }
    alpha
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AllocOutcome {
    pub allocation: Allocation,
    /// Per UE: false when the local queue cannot be stabilized at `f_max_ue`.
    /// Such UEs get `f_max_ue` and are charged the penalty delay downstream.
    pub local_stable: Vec<bool>,
}

/// Solves the three subproblems and assembles the allocation.
pub fn allocate_all(prob: &AllocProblem) -> AllocOutcome {
    let n = prob.ues.len();
    let mut f_ue = vec![0.0; n];
    let mut local_stable = vec![true; n];
    for (i, f) in f_ue.iter_mut().enumerate() {
        match solve_local_cpu(prob, i) {
            Ok(x) => *f = x,
            Err(_) => {
                *f = prob.f_max_ue_hz;
                local_stable[i] = false;
            }
        }
    }
    AllocOutcome {
        allocation: Allocation {
            alpha: solve_bandwidth(prob),
            f_ue,
            f_es: solve_edge_cpu(prob),
        },
        local_stable,
    }
}

/// Sum of the three subproblem objectives.
pub fn total_objective(prob: &AllocProblem, alloc: &Allocation) -> f64 {
    let local: f64 = (0..prob.ues.len())
        .map(|i| local_cpu_objective(prob, i, alloc.f_ue[i]))
        .sum();
    local + edge_cpu_objective(prob, &alloc.f_es) + bandwidth_objective(prob, &alloc.alpha)
}
