//! Point-queue traffic simulation on a signalized grid.
//!
//! Every intersection has four approaches (W, E, S, N, named by where the
//! traffic comes from) with one lane per movement (through, left, right),
//! so 12 incoming lanes and four phases. A vehicle entering a lane travels
//! the link at free-flow speed, then waits in the lane's vertical queue
//! until its movement is green and the next lane has room.

mod scenario;

use std::collections::VecDeque;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cps::{CpsGraph, GraphError};

pub use scenario::{Demand, FlowPreset, Heading, Scenario, StraightFlow, SCENARIO_VERSION};

pub const LANES_PER_INTERSECTION: usize = 12;
pub const NUM_PHASES: usize = 4;
pub const FREE_FLOW_SPEED: f64 = 10.0;
pub const SATURATION_FLOW: f64 = 0.5;
pub const JAM_SPACING: f64 = 7.5;
pub const DECISION_INTERVAL: u64 = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("grid needs at least one row and one column")]
    EmptyGrid,
    #[error("unknown flow preset {0:?}")]
    UnknownPreset(String),
    #[error("invalid phase {phase} at intersection {intersection} (expected 0..{phases})")]
    InvalidPhase { intersection: usize, phase: usize, phases: usize },
    #[error("expected {expected} actions, got {got}")]
    ActionCount { expected: usize, got: usize },
    #[error("invalid flow: {0}")]
    InvalidFlow(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Approach {
    West,
    East,
    South,
    North,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Turn {
    Through,
    Left,
    Right,
}

impl Approach {
    pub const ALL: [Approach; 4] = [Approach::West, Approach::East, Approach::South, Approach::North];

    pub fn index(self) -> usize {
        self as usize
    }

    /// `(drow, dcol)` of the direction of travel for traffic from this side;
    /// rows grow northwards.
    fn travel(self) -> (isize, isize) {
        match self {
            Approach::West => (0, 1),
            Approach::East => (0, -1),
            Approach::South => (1, 0),
            Approach::North => (-1, 0),
        }
    }

    /// The approach a vehicle uses at the next intersection after leaving
    /// this one with the given turn.
    pub fn after(self, turn: Turn) -> Approach {
        use Approach::*;
        match (self, turn) {
            (a, Turn::Through) => a,
            (West, Turn::Left) | (East, Turn::Right) => South,
            (West, Turn::Right) | (East, Turn::Left) => North,
            (South, Turn::Left) | (North, Turn::Right) => East,
            (South, Turn::Right) | (North, Turn::Left) => West,
        }
    }
}

impl Turn {
    pub const ALL: [Turn; 3] = [Turn::Through, Turn::Left, Turn::Right];
}

/// Movement index within an intersection: `approach * 3 + turn`.
pub fn movement_index(approach: Approach, turn: Turn) -> usize {
    approach.index() * 3 + turn as usize
}

/// Movements green in each phase: EW through+right, EW left, NS
/// through+right, NS left.
pub fn phase_movements() -> [Vec<usize>; NUM_PHASES] {
    use Approach::*;
    let m = movement_index;
    [
        vec![m(West, Turn::Through), m(West, Turn::Right), m(East, Turn::Through), m(East, Turn::Right)],
        vec![m(West, Turn::Left), m(East, Turn::Left)],
        vec![m(South, Turn::Through), m(South, Turn::Right), m(North, Turn::Through), m(North, Turn::Right)],
        vec![m(South, Turn::Left), m(North, Turn::Left)],
    ]
}

pub type LaneId = usize;
pub type VehicleId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LaneInfo {
    pub intersection: usize,
    pub approach: Approach,
    pub turn: Turn,
    /// Intersection the movement leads into; `None` for the boundary sink.
    pub downstream: Option<usize>,
    /// Upstream intersection; `None` when the lane is fed by a boundary source.
    pub upstream: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    /// Lanes in travel order; consecutive lanes must connect.
    pub route: Vec<LaneId>,
    /// Vehicles per hour.
    pub rate: f64,
}

#[derive(Clone, Debug)]
pub struct Network {
    pub rows: usize,
    pub cols: usize,
    pub lane_length: f64,
    pub graph: Arc<CpsGraph>,
    pub lanes: Vec<LaneInfo>,
    pub flows: Vec<FlowSpec>,
    pub phases: [Vec<usize>; NUM_PHASES],
    /// Seconds to traverse a lane at free-flow speed.
    pub travel_ticks: u64,
    /// Maximum vehicles on a lane (in flight plus queued).
    pub capacity: usize,
    in_phase: [[bool; LANES_PER_INTERSECTION]; NUM_PHASES],
}

impl Network {
    pub fn new(rows: usize, cols: usize, lane_length: f64, flows: Vec<FlowSpec>) -> Result<Self, SimError> {
        if rows == 0 || cols == 0 {
            return Err(SimError::EmptyGrid);
        }
        if !(lane_length > 0.0) {
            return Err(SimError::InvalidScenario(format!("lane length {lane_length} must be positive")));
        }
        let graph = Arc::new(CpsGraph::grid(rows, cols, lane_length)?);
        let mut lanes = Vec::with_capacity(rows * cols * LANES_PER_INTERSECTION);
        for id in 0..rows * cols {
            let (r, c) = ((id / cols) as isize, (id % cols) as isize);
            let at = |dr: isize, dc: isize| {
                let (nr, nc) = (r + dr, c + dc);
                (nr >= 0 && nc >= 0 && nr < rows as isize && nc < cols as isize).then(|| nr as usize * cols + nc as usize)
            };
            for approach in Approach::ALL {
                let (dr, dc) = approach.travel();
                let upstream = at(-dr, -dc);
                for turn in Turn::ALL {
                    let (or, oc) = approach.after(turn).travel();
                    lanes.push(LaneInfo {
                        intersection: id,
                        approach,
                        turn,
                        downstream: at(or, oc),
                        upstream,
                    });
                }
            }
        }
        let phases = phase_movements();
        let mut in_phase = [[false; LANES_PER_INTERSECTION]; NUM_PHASES];
        for (p, ms) in phases.iter().enumerate() {
            for &m in ms {
                in_phase[p][m] = true;
            }
        }
        let net = Self {
            rows,
            cols,
            lane_length,
            graph,
            lanes,
            flows,
            phases,
            travel_ticks: (lane_length / FREE_FLOW_SPEED).ceil() as u64,
            capacity: ((lane_length / JAM_SPACING).floor() as usize).max(1),
            in_phase,
        };
        for (k, f) in net.flows.iter().enumerate() {
            net.validate_flow(k, f)?;
        }
        Ok(net)
    }

    fn validate_flow(&self, k: usize, flow: &FlowSpec) -> Result<(), SimError> {
        let fail = |m: String| Err(SimError::InvalidFlow(format!("flow {k}: {m}")));
        if !(flow.rate >= 0.0) || !flow.rate.is_finite() {
            return fail(format!("rate {} must be finite and non-negative", flow.rate));
        }
        let Some(&first) = flow.route.first() else {
            return fail("empty route".into());
        };
        if flow.route.iter().any(|&l| l >= self.lanes.len()) {
            return fail("route references an unknown lane".into());
        }
        if self.lanes[first].upstream.is_some() {
            return fail(format!("route starts on lane {first}, which is not fed by the boundary"));
        }
        for w in flow.route.windows(2) {
            if self.next_lane_ok(w[0], w[1]).is_none() {
                return fail(format!("lane {} does not lead into lane {}", w[0], w[1]));
            }
        }
        let last = *flow.route.last().unwrap();
        if self.lanes[last].downstream.is_some() {
            return fail(format!("route ends on lane {last}, which does not exit the network"));
        }
        Ok(())
    }

    fn next_lane_ok(&self, from: LaneId, to: LaneId) -> Option<()> {
        let a = self.lanes[from];
        let b = self.lanes[to];
        (a.downstream == Some(b.intersection) && a.approach.after(a.turn) == b.approach).then_some(())
    }

    pub fn num_intersections(&self) -> usize {
        self.rows * self.cols
    }

    pub fn lane(&self, intersection: usize, approach: Approach, turn: Turn) -> LaneId {
        intersection * LANES_PER_INTERSECTION + movement_index(approach, turn)
    }

    pub fn intersection_lanes(&self, i: usize) -> std::ops::Range<LaneId> {
        i * LANES_PER_INTERSECTION..(i + 1) * LANES_PER_INTERSECTION
    }

    pub fn is_green(&self, phase: usize, lane: LaneId) -> bool {
        self.in_phase[phase][lane % LANES_PER_INTERSECTION]
    }

    /// Lanes a vehicle on `lane` may continue into (empty at the boundary).
    pub fn outgoing_lanes(&self, lane: LaneId) -> Vec<LaneId> {
        let info = self.lanes[lane];
        match info.downstream {
            None => Vec::new(),
            Some(j) => {
                let approach = info.approach.after(info.turn);
                Turn::ALL.iter().map(|&t| self.lane(j, approach, t)).collect()
            }
        }
    }

    /// Sum of nominal flow rates using each phase at each intersection.
    pub fn phase_demand(&self) -> Vec<[f64; NUM_PHASES]> {
        let mut demand = vec![[0.0; NUM_PHASES]; self.num_intersections()];
        for f in &self.flows {
            for &lane in &f.route {
                let i = self.lanes[lane].intersection;
                for (p, d) in demand[i].iter_mut().enumerate() {
                    if self.is_green(p, lane) {
                        *d += f.rate;
                    }
                }
            }
        }
        demand
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vehicle {
    pub flow: usize,
    /// Position within the flow's route.
    pub hop: usize,
    /// Seconds.
    pub entry: f64,
    pub exit: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LaneState {
    /// `(vehicle, tick at which it reaches the queue tail)`, FIFO.
    pub in_flight: VecDeque<(VehicleId, u64)>,
    pub queue: VecDeque<VehicleId>,
    pub credit: f64,
}

impl LaneState {
    pub fn count(&self) -> usize {
        self.in_flight.len() + self.queue.len()
    }
}

#[derive(Clone, Debug)]
struct Source {
    rng: ChaCha8Rng,
    next_arrival: f64,
    /// Generated vehicles waiting for room on the first lane.
    waiting: VecDeque<VehicleId>,
}

/// Dynamic state of one simulation run.
#[derive(Clone, Debug)]
pub struct SimState {
    /// Seconds since the start.
    pub clock: u64,
    pub lanes: Vec<LaneState>,
    pub vehicles: Vec<Vehicle>,
    pub phases: Vec<usize>,
    sources: Vec<Source>,
    exited: usize,
    queue_integral: f64,
}

/// Per-intersection observation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LocalState {
    pub cur_time: u64,
    pub num_in: Vec<usize>,
    pub num_que: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    /// Seconds.
    pub avg_travel_time: f64,
    /// Vehicles per lane.
    pub avg_queue: f64,
    pub entered: usize,
    pub exited: usize,
}

fn flow_rng(seed: u64, flow: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(flow as u64 + 1);
    rng
}

fn draw_gap(rng: &mut ChaCha8Rng, rate_per_hour: f64) -> f64 {
    if rate_per_hour <= 0.0 {
        return f64::INFINITY;
    }
    Exp::new(rate_per_hour / 3600.0).expect("positive rate").sample(rng)
}

/// A network together with its evolving state.
#[derive(Clone, Debug)]
pub struct Simulation {
    pub network: Arc<Network>,
    pub state: SimState,
}

impl Simulation {
    pub fn new(network: Arc<Network>, seed: u64) -> Self {
        let sources = network
            .flows
            .iter()
            .enumerate()
            .map(|(k, f)| {
                let mut rng = flow_rng(seed, k);
                let next_arrival = draw_gap(&mut rng, f.rate);
                Source {
                    rng,
                    next_arrival,
                    waiting: VecDeque::new(),
                }
            })
            .collect();
        let state = SimState {
            clock: 0,
            lanes: vec![LaneState::default(); network.lanes.len()],
            vehicles: Vec::new(),
            phases: vec![0; network.num_intersections()],
            sources,
            exited: 0,
            queue_integral: 0.0,
        };
        Self { network, state }
    }

    pub fn clock(&self) -> u64 {
        self.state.clock
    }

    pub fn entered(&self) -> usize {
        self.state.vehicles.len()
    }

    pub fn exited(&self) -> usize {
        self.state.exited
    }

    /// Vehicles on lanes or waiting at a boundary source.
    pub fn in_network(&self) -> usize {
        let on_lanes: usize = self.state.lanes.iter().map(LaneState::count).sum();
        let waiting: usize = self.state.sources.iter().map(|s| s.waiting.len()).sum();
        on_lanes + waiting
    }

    /// Holds `actions` (one phase per intersection) for `duration` seconds.
    pub fn step(&mut self, actions: &[usize], duration: u64) -> Result<(), SimError> {
        self.set_phases(actions)?;
        for _ in 0..duration {
            self.tick();
        }
        Ok(())
    }

    pub fn set_phases(&mut self, actions: &[usize]) -> Result<(), SimError> {
        let n = self.network.num_intersections();
        if actions.len() != n {
            return Err(SimError::ActionCount { expected: n, got: actions.len() });
        }
        if let Some((i, &p)) = actions.iter().enumerate().find(|(_, &p)| p >= NUM_PHASES) {
            return Err(SimError::InvalidPhase {
                intersection: i,
                phase: p,
                phases: NUM_PHASES,
            });
        }
        self.state.phases.copy_from_slice(actions);
        Ok(())
    }

    /// One second of dynamics: arrivals, link traversal, discharge.
    pub fn tick(&mut self) {
        let net = self.network.clone();
        let st = &mut self.state;
        let now = st.clock;
        let travel = net.travel_ticks;

        for (k, flow) in net.flows.iter().enumerate() {
            let src = &mut st.sources[k];
            while src.next_arrival < (now + 1) as f64 {
                let id = st.vehicles.len();
                st.vehicles.push(Vehicle {
                    flow: k,
                    hop: 0,
                    entry: now as f64,
                    exit: None,
                });
                src.waiting.push_back(id);
                src.next_arrival += draw_gap(&mut src.rng, flow.rate);
            }
            let first = flow.route[0];
            while !src.waiting.is_empty() && st.lanes[first].count() < net.capacity {
                let id = src.waiting.pop_front().unwrap();
                st.lanes[first].in_flight.push_back((id, now + travel));
            }
        }

        for lane in &mut st.lanes {
            while lane.in_flight.front().is_some_and(|&(_, t)| t <= now) {
                let (id, _) = lane.in_flight.pop_front().unwrap();
                lane.queue.push_back(id);
            }
        }

        for lane_id in 0..st.lanes.len() {
            let phase = st.phases[net.lanes[lane_id].intersection];
            if !net.is_green(phase, lane_id) {
                st.lanes[lane_id].credit = 0.0;
                continue;
            }
            let lane = &mut st.lanes[lane_id];
            lane.credit = (lane.credit + SATURATION_FLOW).min(1.0);
            while st.lanes[lane_id].credit >= 1.0 {
                let Some(&id) = st.lanes[lane_id].queue.front() else { break };
                let v = &st.vehicles[id];
                let route = &net.flows[v.flow].route;
                match route.get(v.hop + 1) {
                    Some(&next) => {
                        if st.lanes[next].count() >= net.capacity {
                            break;
                        }
                        st.lanes[next].in_flight.push_back((id, now + travel));
                        st.vehicles[id].hop += 1;
                    }
                    None => {
                        st.vehicles[id].exit = Some(now as f64);
                        st.exited += 1;
                    }
                }
                let lane = &mut st.lanes[lane_id];
                lane.queue.pop_front();
                lane.credit -= 1.0;
            }
        }

        st.queue_integral += st.lanes.iter().map(|l| l.queue.len()).sum::<usize>() as f64;
        st.clock += 1;
    }

    pub fn observe(&self, i: usize) -> LocalState {
        let lanes = &self.state.lanes[self.network.intersection_lanes(i)];
        LocalState {
            cur_time: self.state.clock,
            num_in: lanes.iter().map(LaneState::count).collect(),
            num_que: lanes.iter().map(|l| l.queue.len()).collect(),
        }
    }

    /// Travel time is credited up to the current clock for vehicles still
    /// inside; queue length is time-averaged over all lanes.
    pub fn metrics(&self) -> Metrics {
        let horizon = self.state.clock as f64;
        let vs = &self.state.vehicles;
        let avg_travel_time = if vs.is_empty() {
            0.0
        } else {
            vs.iter().map(|v| v.exit.unwrap_or(horizon) - v.entry).sum::<f64>() / vs.len() as f64
        };
        let avg_queue = if self.state.clock == 0 {
            0.0
        } else {
            self.state.queue_integral / (horizon * self.state.lanes.len() as f64)
        };
        Metrics {
            avg_travel_time,
            avg_queue,
            entered: vs.len(),
            exited: self.state.exited,
        }
    }

    /// Places a vehicle of `flow` directly into the queue of its first lane.
    pub fn inject_queued(&mut self, flow: usize) -> VehicleId {
        let id = self.inject(flow);
        let lane = self.network.flows[flow].route[0];
        self.state.lanes[lane].queue.push_back(id);
        id
    }

    /// Places a vehicle of `flow` at the start of its first lane.
    pub fn inject_in_flight(&mut self, flow: usize) -> VehicleId {
        let id = self.inject(flow);
        let lane = self.network.flows[flow].route[0];
        let arrival = self.state.clock + self.network.travel_ticks;
        self.state.lanes[lane].in_flight.push_back((id, arrival));
        id
    }

    fn inject(&mut self, flow: usize) -> VehicleId {
        let id = self.state.vehicles.len();
        self.state.vehicles.push(Vehicle {
            flow,
            hop: 0,
            entry: self.state.clock as f64,
            exit: None,
        });
        id
    }
}

/// Builds a `rows × cols` grid with straight-through flows from `preset`.
pub fn build_grid(rows: usize, cols: usize, lane_length: f64, preset: FlowPreset, seed: u64) -> Result<Simulation, SimError> {
    let flows = scenario::straight_flows(rows, cols, &preset.flows(rows, cols))?;
    let net = Network::new(rows, cols, lane_length, flows)?;
    Ok(Simulation::new(Arc::new(net), seed))
}

#[cfg(test)]
mod tests;
