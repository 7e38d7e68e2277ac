//! Discrete-event simulation of a single-server FIFO queue with Poisson
//! arrivals and deterministic service (M/D/1).
//!
//! Used as an independent check of the closed-form local sojourn delay and
//! by the `simulate-queue` command.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq)]
enum EventKind {
    Arrival,
    Departure,
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// Min-heap on time; departures first on ties.
impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then_with(|| {
            let rank = |k: EventKind| (k == EventKind::Departure) as u8;
            rank(self.kind).cmp(&rank(other.kind))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Md1Stats {
    pub arrival_rate: f64,
    pub service_time: f64,
    pub served: u64,
    pub mean_sojourn: f64,
    pub mean_wait: f64,
}

/// Simulates `arrivals` customers and reports the mean sojourn over all of them.
pub fn simulate_md1(arrival_rate: f64, service_time: f64, arrivals: u64, seed: u64) -> Md1Stats {
    assert!(arrival_rate > 0.0 && service_time > 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gap = Exp::new(arrival_rate).expect("positive rate");

    let mut events = BinaryHeap::new();
    let mut waiting: VecDeque<f64> = VecDeque::new();
    let mut in_service: Option<f64> = None;
    let mut generated = 0u64;
    let mut served = 0u64;
    let mut sojourn_sum = 0.0;
    let mut wait_sum = 0.0;

    if arrivals > 0 {
        events.push(Event {
            time: gap.sample(&mut rng),
            kind: EventKind::Arrival,
        });
        generated = 1;
    }

    while let Some(ev) = events.pop() {
        match ev.kind {
            EventKind::Arrival => {
                if generated < arrivals {
                    events.push(Event {
                        time: ev.time + gap.sample(&mut rng),
                        kind: EventKind::Arrival,
                    });
                    generated += 1;
                }
                if in_service.is_none() {
                    in_service = Some(ev.time);
                    events.push(Event {
                        time: ev.time + service_time,
                        kind: EventKind::Departure,
                    });
                } else {
                    waiting.push_back(ev.time);
                }
            }
            EventKind::Departure => {
                let arrived = in_service.take().expect("departure without customer");
                let wait = ev.time - service_time - arrived;
                wait_sum += wait;
                sojourn_sum += ev.time - arrived;
                served += 1;
                if let Some(next) = waiting.pop_front() {
                    in_service = Some(next);
                    events.push(Event {
                        time: ev.time + service_time,
                        kind: EventKind::Departure,
                    });
                }
            }
        }
    }

    let n = served.max(1) as f64;
    Md1Stats {
        arrival_rate,
        service_time,
        served,
        mean_sojourn: sojourn_sum / n,
        mean_wait: wait_sum / n,
    }
}
