//! Two-stage training: imitation of a Max-Pressure teacher, then
//! Double-DQN with experience replay.

mod checkpoint;
mod replay;
mod rollout;
mod update;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::{PrefitConfig, PrefitReport};
use crate::controllers::{run_episode, MaxPressure, PlanError};
use crate::encoder::{Dept, EncoderConfig, EncoderError, PriorMode};
use crate::numerics::{Adam, NumericsError, OptimizerConfig, ParamStore};
use crate::sim::{Metrics, Scenario, SimError, Simulation, DECISION_INTERVAL, FREE_FLOW_SPEED, NUM_PHASES};

pub use checkpoint::{Checkpoint, NamedTensor, CHECKPOINT_VERSION};
pub use replay::ReplayBuffer;
pub use rollout::{
    collect_round, greedy_actions, node_features, node_rewards, observe_frame, Behavior, DeptController, Episode, Transition,
    FEATURES_PER_NODE, FEATURE_SCALE,
};
pub use update::{ddqn_targets, ddqn_update, il_update, DdqnParams, Workers};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite Double-DQN target at node {node}: {detail}")]
    NonFiniteTarget { node: usize, detail: String },
    #[error("non-finite loss {0}")]
    NonFiniteLoss(f64),
    #[error("training diverged in round {round}: {reason}")]
    Diverged {
        round: usize,
        reason: String,
        checkpoint: Box<Checkpoint>,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

/// Which parts of the prior are enabled and whether they are pre-fitted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationFlags {
    pub pre_fit: bool,
    pub cone_decay: bool,
    pub priors: bool,
}

impl AblationFlags {
    pub const FULL: Self = Self {
        pre_fit: true,
        cone_decay: true,
        priors: true,
    };
    pub const NO_PRE_FIT: Self = Self {
        pre_fit: false,
        cone_decay: true,
        priors: true,
    };
    pub const NO_CONE: Self = Self {
        pre_fit: true,
        cone_decay: false,
        priors: true,
    };
    /// Plain transformer encoder.
    pub const TTE: Self = Self {
        pre_fit: false,
        cone_decay: false,
        priors: false,
    };

    pub fn validate(&self) -> Result<(), TrainError> {
        if !self.priors && self.cone_decay {
            return Err(TrainError::Config("cone decay needs the priors enabled".into()));
        }
        Ok(())
    }

    pub fn prior_mode(&self) -> PriorMode {
        match (self.priors, self.cone_decay) {
            (false, _) => PriorMode::Off,
            (true, false) => PriorMode::NoCone,
            (true, true) => PriorMode::Full,
        }
    }
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self::FULL
    }
}

impl FromStr for AblationFlags {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Self::FULL),
            "no-pre-fit" => Ok(Self::NO_PRE_FIT),
            "no-cone" => Ok(Self::NO_CONE),
            "tte" => Ok(Self::TTE),
            _ => Err(TrainError::Config(format!("unknown ablation {s:?} (full, no-pre-fit, no-cone, tte)"))),
        }
    }
}

impl fmt::Display for AblationFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match *self {
            Self::FULL => "full",
            Self::NO_PRE_FIT => "no-pre-fit",
            Self::NO_CONE => "no-cone",
            Self::TTE => "tte",
            _ => "custom",
        };
        f.write_str(name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSchedule {
    pub total_rounds: usize,
    pub il_rounds: usize,
    /// Simulated seconds per round.
    pub round_duration: u64,
    /// Gradient updates after each round.
    pub updates_per_round: usize,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Updates between target-network syncs.
    pub target_sync: usize,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub il_learning_rate: f64,
    pub rl_learning_rate: f64,
    /// Multiplies rewards before they enter the TD target.
    pub reward_scale: f64,
    pub huber_delta: f64,
    /// Weight of the behavior-cloning term on teacher transitions during RL.
    pub demo_weight: f64,
    pub grad_clip: f64,
    /// Greedy evaluation after every round (drives the learning curve).
    pub evaluate_each_round: bool,
    pub workers: usize,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            total_rounds: 40,
            il_rounds: 20,
            round_duration: 1800,
            updates_per_round: 25,
            batch_size: 64,
            replay_capacity: 50_000,
            target_sync: 50,
            gamma: 0.9,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            il_learning_rate: 1e-3,
            rl_learning_rate: 1e-4,
            reward_scale: 0.1,
            huber_delta: 1.0,
            demo_weight: 1.0,
            grad_clip: 10.0,
            evaluate_each_round: true,
            workers: 1,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: String| Err(TrainError::Config(m));
        if self.il_rounds > self.total_rounds {
            return fail(format!("{} IL rounds exceed {} total rounds", self.il_rounds, self.total_rounds));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return fail(format!("discount {} outside [0, 1]", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=1.0).contains(&self.epsilon_end) {
            return fail("exploration rates must lie in [0, 1]".into());
        }
        if self.batch_size == 0 || self.target_sync == 0 || self.round_duration < DECISION_INTERVAL {
            return fail("batch size, target sync and round duration must be positive".into());
        }
        if self.il_learning_rate < 0.0 || self.rl_learning_rate < 0.0 || self.demo_weight < 0.0 {
            return fail("learning rates and the demonstration weight must be non-negative".into());
        }
        Ok(())
    }

    pub fn rl_rounds(&self) -> usize {
        self.total_rounds - self.il_rounds
    }

    /// Linear anneal across the RL rounds.
    pub fn epsilon(&self, round: usize) -> f64 {
        if round < self.il_rounds {
            return 0.0;
        }
        let k = (round - self.il_rounds) as f64;
        let span = (self.rl_rounds().max(2) - 1) as f64;
        let frac = (k / span).min(1.0);
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub encoder: EncoderConfig,
    pub schedule: TrainSchedule,
    pub ablation: AblationFlags,
    pub prefit: PrefitConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig {
                t_max: 4,
                feature_dim: FEATURES_PER_NODE,
                num_actions: NUM_PHASES,
                ..EncoderConfig::default()
            },
            schedule: TrainSchedule::default(),
            ablation: AblationFlags::FULL,
            prefit: PrefitConfig::default(),
        }
    }
}

/// Mean speed in meters per decision step.
pub fn mean_speed() -> f64 {
    FREE_FLOW_SPEED * DECISION_INTERVAL as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "il")]
    Imitation,
    #[serde(rename = "rl")]
    Reinforcement,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Imitation => "il",
            Stage::Reinforcement => "rl",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// 1-based round number.
    pub round: usize,
    pub stage: Stage,
    pub loss: f64,
    /// Greedy evaluation after the round's updates (NaN when disabled).
    pub avg_travel_time: f64,
    pub avg_queue: f64,
    pub epsilon: f64,
    /// Metrics of the round's own rollout.
    pub rollout: Metrics,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: Dept,
    pub store: ParamStore,
    pub checkpoint: Checkpoint,
    pub curve: Vec<CurvePoint>,
    pub prefit: Option<PrefitReport>,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Simulation seed of training round `round`.
pub fn round_seed(seed: u64, round: usize) -> u64 {
    splitmix(splitmix(seed) ^ round as u64)
}

/// Simulation seed of the fixed evaluation episode.
pub fn eval_seed(seed: u64) -> u64 {
    splitmix(seed ^ 0x00E7_A15E_ED00)
}

/// Builds a fresh model for `config` on the scenario's network, pre-fitting
/// the priors when the ablation flags ask for it.
pub fn build_model(
    config: &TrainConfig,
    scenario: &Scenario,
    rng: &mut ChaCha8Rng,
) -> Result<(Dept, ParamStore, Option<PrefitReport>), TrainError> {
    config.ablation.validate()?;
    let network = scenario.network()?;
    let encoder = EncoderConfig {
        prior_mode: config.ablation.prior_mode(),
        ..config.encoder.clone()
    };
    let prefit = (config.ablation.pre_fit && config.ablation.priors).then_some(&config.prefit);
    let mut store = ParamStore::new();
    let (model, report) = Dept::new(&mut store, encoder, Arc::clone(&network.graph), mean_speed(), prefit, rng)?;
    Ok((model, store, report))
}

/// Greedy rollout of a trained model.
pub fn evaluate(model: &Dept, store: &ParamStore, scenario: &Scenario, seed: u64, duration: u64) -> Result<Metrics, TrainError> {
    let mut sim = Simulation::new(scenario.network()?, seed);
    let mut controller = DeptController::new(model, store, &sim.network)?;
    Ok(run_episode(&mut controller, &mut sim, duration)?)
}

/// Runs the full schedule and returns the trained model with its curve.
/// `on_round` sees every curve point as soon as it is available.
pub fn train_with<F: FnMut(&CurvePoint)>(
    config: &TrainConfig,
    scenario: &Scenario,
    seed: u64,
    mut on_round: F,
) -> Result<TrainOutcome, TrainError> {
    let schedule = &config.schedule;
    schedule.validate()?;
    if config.encoder.feature_dim != FEATURES_PER_NODE || config.encoder.num_actions != NUM_PHASES {
        return Err(TrainError::Config(format!(
            "encoder needs feature_dim {FEATURES_PER_NODE} and {NUM_PHASES} actions for this simulator"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (model, mut store, prefit) = build_model(config, scenario, &mut rng)?;
    let network = scenario.network()?;
    let t_max = model.config.t_max;
    let workers = Workers::new(schedule.workers)?;
    let mut replay = ReplayBuffer::new(schedule.replay_capacity, t_max);
    let mut target = store.clone();
    let mut adam = Adam::new(OptimizerConfig::with_learning_rate(schedule.il_learning_rate), &store)?;
    let mut teacher = MaxPressure;
    let ddqn = DdqnParams {
        gamma: schedule.gamma,
        reward_scale: schedule.reward_scale,
        huber_delta: schedule.huber_delta,
        grad_clip: schedule.grad_clip,
        demo_weight: schedule.demo_weight,
    };
    let mut rl_updates = 0usize;
    let mut curve = Vec::with_capacity(schedule.total_rounds);
    let snapshot = |store: &ParamStore, rounds: usize| {
        Checkpoint::capture(store, scenario, &model.config, config.ablation, mean_speed(), seed, rounds)
    };

    for round in 0..schedule.total_rounds {
        let stage = if round < schedule.il_rounds { Stage::Imitation } else { Stage::Reinforcement };
        if round == schedule.il_rounds {
            target.copy_values_from(&store);
            adam = Adam::new(OptimizerConfig::with_learning_rate(schedule.rl_learning_rate), &store)?;
        }
        let epsilon = schedule.epsilon(round);
        let mut sim = Simulation::new(Arc::clone(&network), round_seed(seed, round));
        let episode = match stage {
            Stage::Imitation => collect_round(Behavior::Teacher(&mut teacher), &mut sim, schedule.round_duration, t_max)?,
            Stage::Reinforcement => collect_round(
                Behavior::Dept {
                    model: &model,
                    store: &store,
                    epsilon,
                    rng: &mut rng,
                },
                &mut sim,
                schedule.round_duration,
                t_max,
            )?,
        };
        let rollout = episode.metrics;
        replay.push_episode(Arc::new(episode));

        let mut loss_sum = 0.0;
        for _ in 0..schedule.updates_per_round {
            let batch = replay.sample(&mut rng, schedule.batch_size);
            let result = match stage {
                Stage::Imitation => il_update(&model, &mut store, &mut adam, &workers, &batch, schedule.grad_clip),
                Stage::Reinforcement => ddqn_update(&model, &mut store, &target, &mut adam, &workers, &batch, ddqn),
            };
            let loss = match result {
                Ok(l) => l,
                Err(e @ (TrainError::NonFiniteLoss(_) | TrainError::NonFiniteTarget { .. } | TrainError::Numerics(_))) => {
                    return Err(TrainError::Diverged {
                        round: round + 1,
                        reason: e.to_string(),
                        checkpoint: Box::new(snapshot(&store, round)),
                    });
                }
                Err(e) => return Err(e),
            };
            loss_sum += loss;
            if stage == Stage::Reinforcement {
                rl_updates += 1;
                if rl_updates % schedule.target_sync == 0 {
                    target.copy_values_from(&store);
                }
            }
        }
        let loss = if schedule.updates_per_round > 0 {
            loss_sum / schedule.updates_per_round as f64
        } else {
            0.0
        };

        let (avg_travel_time, avg_queue) = if schedule.evaluate_each_round {
            let m = evaluate(&model, &store, scenario, eval_seed(seed), schedule.round_duration)?;
            (m.avg_travel_time, m.avg_queue)
        } else {
            (f64::NAN, f64::NAN)
        };
        let point = CurvePoint {
            round: round + 1,
            stage,
            loss,
            avg_travel_time,
            avg_queue,
            epsilon,
            rollout,
        };
        on_round(&point);
        curve.push(point);
    }

    let checkpoint = snapshot(&store, schedule.total_rounds);
    Ok(TrainOutcome {
        model,
        store,
        checkpoint,
        curve,
        prefit,
    })
}

pub fn train(config: &TrainConfig, scenario: &Scenario, seed: u64) -> Result<TrainOutcome, TrainError> {
    train_with(config, scenario, seed, |_| {})
}
