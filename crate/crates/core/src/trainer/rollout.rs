use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::TrainError;
use crate::controllers::Controller;
use crate::encoder::{Dept, Frame, TokenHistory};
use crate::numerics::{ParamStore, Tensor};
use crate::sim::{LocalState, Metrics, Network, Simulation, DECISION_INTERVAL, LANES_PER_INTERSECTION};

/// `numIn` and `numQue` for each incoming lane, interleaved.
pub const FEATURES_PER_NODE: usize = 2 * LANES_PER_INTERSECTION;
pub const FEATURE_SCALE: f64 = 0.1;

pub fn node_features(obs: &LocalState) -> Vec<f64> {
    obs.num_in
        .iter()
        .zip(&obs.num_que)
        .flat_map(|(&n, &q)| [n as f64 * FEATURE_SCALE, q as f64 * FEATURE_SCALE])
        .collect()
}

/// Current observation of every intersection, tagged with the phases that
/// were in effect while it built up.
pub fn observe_frame(sim: &Simulation) -> Frame {
    Frame {
        features: (0..sim.network.num_intersections()).map(|i| node_features(&sim.observe(i))).collect(),
        actions: sim.state.phases.clone(),
    }
}

/// `r_i = −Σ numQue` over intersection `i`'s incoming lanes.
pub fn node_rewards(sim: &Simulation) -> Vec<f64> {
    (0..sim.network.num_intersections())
        .map(|i| -(sim.observe(i).num_que.iter().sum::<usize>() as f64))
        .collect()
}

/// Row-wise argmax, ties to the lowest index.
pub fn greedy_actions(q: &Tensor) -> Vec<usize> {
    (0..q.rows())
        .map(|i| {
            let row = q.row(i);
            let mut best = 0;
            for (a, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = a;
                }
            }
            best
        })
        .collect()
}

/// One simulated round: observations `frames[0..=len]`, the joint action
/// and per-node reward of each decision step, and the round's metrics.
#[derive(Clone, Debug)]
pub struct Episode {
    pub frames: Vec<Frame>,
    pub actions: Vec<Vec<usize>>,
    pub rewards: Vec<Vec<f64>>,
    pub metrics: Metrics,
    /// The teacher chose the actions.
    pub demonstration: bool,
}

/// Materialized replay sample.
#[derive(Clone, Debug)]
pub struct Transition {
    pub state: TokenHistory,
    pub action: Vec<usize>,
    pub reward: Vec<f64>,
    pub next_state: TokenHistory,
    pub terminal: bool,
    pub demonstration: bool,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Token inputs for the state at decision `t`.
    pub fn history(&self, t: usize, t_max: usize) -> TokenHistory {
        let n = self.frames[0].features.len();
        let d = self.frames[0].features.first().map_or(0, Vec::len);
        TokenHistory::from_frames((0..=t).rev().map(|k| &self.frames[k]), n, d, t_max)
            .expect("episode frames share one shape")
    }

    pub fn transition(&self, t: usize, t_max: usize) -> Transition {
        Transition {
            state: self.history(t, t_max),
            action: self.actions[t].clone(),
            reward: self.rewards[t].clone(),
            next_state: self.history(t + 1, t_max),
            terminal: t + 1 == self.len(),
            demonstration: self.demonstration,
        }
    }
}

/// Who picks the actions during a round.
pub enum Behavior<'a> {
    Teacher(&'a mut dyn Controller),
    /// ε-greedy over DePT's Q-values, independently per node.
    Dept {
        model: &'a Dept,
        store: &'a ParamStore,
        epsilon: f64,
        rng: &'a mut ChaCha8Rng,
    },
}

fn epsilon_greedy(q: &Tensor, epsilon: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let greedy = greedy_actions(q);
    if epsilon <= 0.0 {
        return greedy;
    }
    greedy
        .into_iter()
        .map(|a| if rng.random::<f64>() < epsilon { rng.random_range(0..q.cols()) } else { a })
        .collect()
}

/// Runs `duration` seconds, one decision per interval.
pub fn collect_round(behavior: Behavior<'_>, sim: &mut Simulation, duration: u64, t_max: usize) -> Result<Episode, TrainError> {
    let steps = (duration / DECISION_INTERVAL) as usize;
    let mut frames = vec![observe_frame(sim)];
    let mut actions = Vec::with_capacity(steps);
    let mut rewards = Vec::with_capacity(steps);
    let mut behavior = behavior;
    let demonstration = matches!(behavior, Behavior::Teacher(_));
    if let Behavior::Teacher(c) = &mut behavior {
        c.reset();
    }
    for t in 0..steps {
        let a = match &mut behavior {
            Behavior::Teacher(c) => c.act(sim),
            Behavior::Dept { model, store, epsilon, rng } => {
                let n = sim.network.num_intersections();
                let d = frames[0].features[0].len();
                let h = TokenHistory::from_frames(frames[..=t].iter().rev(), n, d, t_max)?;
                let q = model.q_values(store, &h)?;
                epsilon_greedy(&q, *epsilon, rng)
            }
        };
        sim.step(&a, DECISION_INTERVAL)?;
        rewards.push(node_rewards(sim));
        actions.push(a);
        frames.push(observe_frame(sim));
    }
    Ok(Episode {
        frames,
        actions,
        rewards,
        metrics: sim.metrics(),
        demonstration,
    })
}

/// Greedy DePT behind the common controller interface.
pub struct DeptController<'a> {
    pub model: &'a Dept,
    pub store: &'a ParamStore,
    frames: VecDeque<Frame>,
}

impl<'a> DeptController<'a> {
    pub fn new(model: &'a Dept, store: &'a ParamStore, network: &Network) -> Result<Self, TrainError> {
        let n = network.num_intersections();
        if n != model.num_nodes() || model.config.feature_dim != FEATURES_PER_NODE {
            return Err(TrainError::Config(format!(
                "model built for {} nodes × {} features cannot drive a {n}-intersection network",
                model.num_nodes(),
                model.config.feature_dim
            )));
        }
        Ok(Self {
            model,
            store,
            frames: VecDeque::new(),
        })
    }
}

impl Controller for DeptController<'_> {
    fn name(&self) -> &str {
        "dept"
    }

    fn act(&mut self, sim: &Simulation) -> Vec<usize> {
        let t_max = self.model.config.t_max;
        self.frames.push_front(observe_frame(sim));
        self.frames.truncate(t_max);
        let n = sim.network.num_intersections();
        let h = TokenHistory::from_frames(self.frames.iter(), n, FEATURES_PER_NODE, t_max).expect("frames match the network");
        let q = self.model.q_values(self.store, &h).expect("shapes checked at construction");
        greedy_actions(&q)
    }

    fn reset(&mut self) {
        self.frames.clear();
    }
}
