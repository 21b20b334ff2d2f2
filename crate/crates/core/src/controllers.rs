//! Baseline signal controllers: a demand-proportional fixed-time plan and
//! Max-Pressure.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{Metrics, Network, SimError, Simulation, DECISION_INTERVAL, NUM_PHASES};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("intersection {0} has an empty plan")]
    Empty(usize),
    #[error("intersection {intersection}: phase {phase} has zero green time")]
    ZeroDuration { intersection: usize, phase: usize },
    #[error("intersection {intersection}: phase {phase} out of range")]
    InvalidPhase { intersection: usize, phase: usize },
    #[error("intersection {intersection}: phase {phase} never gets green")]
    MissingPhase { intersection: usize, phase: usize },
    #[error("cycle of {cycle} s cannot give every phase one {slot} s slot")]
    CycleTooShort { cycle: u64, slot: u64 },
}

/// Chooses one phase per intersection at each decision point.
pub trait Controller {
    fn name(&self) -> &str;
    fn act(&mut self, sim: &Simulation) -> Vec<usize>;
    /// Called before a fresh episode.
    fn reset(&mut self) {}
}

/// Cyclic green sequence per intersection: `(phase, seconds)` in order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedTimePlan {
    pub intersections: Vec<Vec<(usize, u64)>>,
}

impl FixedTimePlan {
    pub fn new(intersections: Vec<Vec<(usize, u64)>>, num_phases: usize) -> Result<Self, PlanError> {
        for (i, seq) in intersections.iter().enumerate() {
            if seq.is_empty() {
                return Err(PlanError::Empty(i));
            }
            for &(phase, secs) in seq {
                if phase >= num_phases {
                    return Err(PlanError::InvalidPhase { intersection: i, phase });
                }
                if secs == 0 {
                    return Err(PlanError::ZeroDuration { intersection: i, phase });
                }
            }
            if let Some(phase) = (0..num_phases).find(|p| !seq.iter().any(|(q, _)| q == p)) {
                return Err(PlanError::MissingPhase { intersection: i, phase });
            }
        }
        Ok(Self { intersections })
    }

    /// Green split proportional to nominal phase demand over a `cycle`
    /// quantized to `slot` seconds. Every phase keeps at least one slot;
    /// the remaining slots go by largest remainder, ties to the lower phase.
    pub fn from_demand(net: &Network, cycle: u64, slot: u64) -> Result<Self, PlanError> {
        let slots = (cycle / slot) as usize;
        if slot == 0 || slots < NUM_PHASES {
            return Err(PlanError::CycleTooShort { cycle, slot });
        }
        let plans = net
            .phase_demand()
            .iter()
            .map(|demand| {
                let spare = slots - NUM_PHASES;
                let total: f64 = demand.iter().sum();
                let share: Vec<f64> = if total > 0.0 {
                    demand.iter().map(|d| d / total * spare as f64).collect()
                } else {
                    vec![spare as f64 / NUM_PHASES as f64; NUM_PHASES]
                };
                let mut count: Vec<usize> = share.iter().map(|s| s.floor() as usize).collect();
                let mut order: Vec<usize> = (0..NUM_PHASES).collect();
                order.sort_by(|&a, &b| (share[b] - share[b].floor()).total_cmp(&(share[a] - share[a].floor())).then(a.cmp(&b)));
                let left = spare - count.iter().sum::<usize>();
                for &p in order.iter().take(left) {
                    count[p] += 1;
                }
                count.iter().enumerate().map(|(p, c)| (p, (c + 1) as u64 * slot)).collect()
            })
            .collect();
        Self::new(plans, NUM_PHASES)
    }

    pub fn cycle_length(&self, intersection: usize) -> u64 {
        self.intersections[intersection].iter().map(|(_, s)| s).sum()
    }
}

/// Phase of every intersection at `clock` seconds.
pub fn fixed_time_act(plan: &FixedTimePlan, clock: u64) -> Vec<usize> {
    plan.intersections
        .iter()
        .map(|seq| {
            let cycle: u64 = seq.iter().map(|(_, s)| s).sum();
            let mut t = clock % cycle;
            for &(phase, secs) in seq {
                if t < secs {
                    return phase;
                }
                t -= secs;
            }
            unreachable!("position within cycle is always covered")
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct MovementQueue {
    pub upstream: f64,
    pub downstream: f64,
}

/// Σ over `movements` of upstream minus downstream queue.
pub fn pressure(movements: &[usize], queues: &[MovementQueue]) -> f64 {
    movements.iter().map(|&m| queues[m].upstream - queues[m].downstream).sum()
}

/// Argmax-pressure phase per intersection; ties go to the lowest index.
pub fn max_pressure_act(phases: &[Vec<usize>], queues: &[Vec<MovementQueue>]) -> Vec<usize> {
    queues
        .iter()
        .map(|q| {
            let mut best = 0;
            let mut best_p = f64::NEG_INFINITY;
            for (k, ms) in phases.iter().enumerate() {
                let p = pressure(ms, q);
                if p > best_p {
                    best = k;
                    best_p = p;
                }
            }
            best
        })
        .collect()
}

/// Per-movement queues: the lane's own queue upstream, the mean queue of
/// the lanes it feeds downstream (0 at the boundary).
pub fn movement_queues(sim: &Simulation) -> Vec<Vec<MovementQueue>> {
    let net = &sim.network;
    let lanes = &sim.state.lanes;
    (0..net.num_intersections())
        .map(|i| {
            net.intersection_lanes(i)
                .map(|lane| {
                    let out = net.outgoing_lanes(lane);
                    let downstream = if out.is_empty() {
                        0.0
                    } else {
                        out.iter().map(|&l| lanes[l].queue.len() as f64).sum::<f64>() / out.len() as f64
                    };
                    MovementQueue {
                        upstream: lanes[lane].queue.len() as f64,
                        downstream,
                    }
                })
                .collect()
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct FixedTime {
    pub plan: FixedTimePlan,
}

impl FixedTime {
    /// 60 s cycle in decision-interval slots.
    pub fn for_network(net: &Network) -> Result<Self, PlanError> {
        Ok(Self {
            plan: FixedTimePlan::from_demand(net, 60, DECISION_INTERVAL)?,
        })
    }
}

impl Controller for FixedTime {
    fn name(&self) -> &str {
        "fixed-time"
    }

    fn act(&mut self, sim: &Simulation) -> Vec<usize> {
        fixed_time_act(&self.plan, sim.clock())
    }
}

#[derive(Clone, Debug, Default)]
pub struct MaxPressure;

impl Controller for MaxPressure {
    fn name(&self) -> &str {
        "max-pressure"
    }

    fn act(&mut self, sim: &Simulation) -> Vec<usize> {
        max_pressure_act(&sim.network.phases, &movement_queues(sim))
    }
}

/// Runs `controller` for `duration` seconds, deciding every interval.
pub fn run_episode<C: Controller + ?Sized>(controller: &mut C, sim: &mut Simulation, duration: u64) -> Result<Metrics, SimError> {
    controller.reset();
    let end = sim.clock() + duration;
    while sim.clock() < end {
        let actions = controller.act(sim);
        let dt = DECISION_INTERVAL.min(end - sim.clock());
        sim.step(&actions, dt)?;
    }
    Ok(sim.metrics())
}
