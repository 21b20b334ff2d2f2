use std::sync::Arc;

use rayon::prelude::*;
use rayon::ThreadPool;

use super::rollout::Transition;
use super::TrainError;
use crate::encoder::Dept;
use crate::numerics::{Adam, Gradients, Graph, ParamStore, Tensor, Var};

/// Optional worker pool for per-sample forward/backward passes. Gradients
/// are accumulated in sample order, so results do not depend on it.
pub struct Workers {
    pool: Option<ThreadPool>,
}

impl Workers {
    pub fn new(threads: usize) -> Result<Self, TrainError> {
        let pool = if threads > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| TrainError::Config(format!("cannot start {threads} workers: {e}")))?;
            Some(pool)
        } else {
            None
        };
        Ok(Self { pool })
    }

    pub fn map<T, U, F>(&self, items: &[T], f: F) -> Vec<U>
    where
        T: Sync,
        U: Send,
        F: Fn(&T) -> U + Sync + Send,
    {
        match &self.pool {
            Some(pool) => pool.install(|| items.par_iter().map(&f).collect()),
            None => items.iter().map(f).collect(),
        }
    }
}

/// Sums per-sample gradients of `loss(sample) / batch` into `store`, then
/// clips and applies one Adam step. Returns the mean loss.
fn apply_batch<T, F>(
    store: &mut ParamStore,
    adam: &mut Adam,
    workers: &Workers,
    samples: &[T],
    grad_clip: f64,
    loss: F,
) -> Result<f64, TrainError>
where
    T: Sync,
    F: Fn(&mut Graph, &T) -> Result<Var, TrainError> + Sync + Send,
{
    if samples.is_empty() {
        return Ok(0.0);
    }
    let scale = 1.0 / samples.len() as f64;
    let results: Vec<Result<(Gradients, f64), TrainError>> = {
        let store = &*store;
        workers.map(samples, |s| {
            let mut g = Graph::new(store);
            let l = loss(&mut g, s)?;
            let value = g.value(l).item();
            let l = g.scale(l, scale);
            Ok((g.backward(l)?, value))
        })
    };
    let mut total = 0.0;
    for r in results {
        let (grads, value) = r?;
        store.accumulate(&grads);
        total += value;
    }
    let mean = total * scale;
    if !mean.is_finite() {
        store.zero_grad();
        return Err(TrainError::NonFiniteLoss(mean));
    }
    if grad_clip > 0.0 {
        store.clip_grad_norm(grad_clip);
    }
    adam.step(store)?;
    Ok(mean)
}

/// Behavior cloning: cross-entropy between `softmax(Q(s))` per node and
/// the teacher's phases.
pub fn il_update(
    model: &Dept,
    store: &mut ParamStore,
    adam: &mut Adam,
    workers: &Workers,
    batch: &[Transition],
    grad_clip: f64,
) -> Result<f64, TrainError> {
    apply_batch(store, adam, workers, batch, grad_clip, |g, tr| {
        let q = model.forward(g, &tr.state)?;
        Ok(g.cross_entropy(q, &tr.action)?)
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DdqnParams {
    pub gamma: f64,
    pub reward_scale: f64,
    pub huber_delta: f64,
    pub grad_clip: f64,
    /// Weight of the behavior-cloning term on teacher transitions.
    pub demo_weight: f64,
}

/// `y_i = s·r_i + γ·Q_target(s′)[i, argmax_a Q_online(s′)[i, a]]`, where
/// `next` holds `(Q_online(s′), Q_target(s′))`; `None` marks a terminal step
/// with `y_i = s·r_i`.
pub fn ddqn_targets(next: Option<(&Tensor, &Tensor)>, reward: &[f64], gamma: f64, reward_scale: f64) -> Result<Vec<f64>, TrainError> {
    (0..reward.len())
        .map(|i| {
            let r = reward[i] * reward_scale;
            let y = match next {
                None => r,
                Some((online, target)) => {
                    let row = online.row(i);
                    let mut best = 0;
                    for (a, &v) in row.iter().enumerate() {
                        if v > row[best] {
                            best = a;
                        }
                    }
                    r + gamma * target.get(i, best)
                }
            };
            if y.is_finite() {
                Ok(y)
            } else {
                let detail = match next {
                    None => format!("reward {}", reward[i]),
                    Some((o, t)) => format!("reward {}, online {:?}, target {:?}", reward[i], o.row(i), t.row(i)),
                };
                Err(TrainError::NonFiniteTarget { node: i, detail })
            }
        })
        .collect()
}

/// One Double-DQN step on `batch`; returns the mean loss. Teacher
/// transitions add `demo_weight` times the cross-entropy towards the
/// teacher's phases, which keeps the greedy policy anchored to the
/// demonstrations while the values are still being fitted.
pub fn ddqn_update(
    model: &Dept,
    online: &mut ParamStore,
    target: &ParamStore,
    adam: &mut Adam,
    workers: &Workers,
    batch: &[Transition],
    params: DdqnParams,
) -> Result<f64, TrainError> {
    let targets: Vec<Result<Vec<f64>, TrainError>> = {
        let online = &*online;
        workers.map(batch, |tr| {
            if tr.terminal {
                return ddqn_targets(None, &tr.reward, params.gamma, params.reward_scale);
            }
            let qo = model.q_values(online, &tr.next_state)?;
            let qt = model.q_values(target, &tr.next_state)?;
            ddqn_targets(Some((&qo, &qt)), &tr.reward, params.gamma, params.reward_scale)
        })
    };
    let targets = targets.into_iter().collect::<Result<Vec<_>, _>>()?;
    let samples: Vec<(&Transition, Vec<f64>)> = batch.iter().zip(targets).collect();
    apply_batch(online, adam, workers, &samples, params.grad_clip, |g, (tr, y)| {
        let q = model.forward(g, &tr.state)?;
        let actions = g.value(q).cols();
        let idx: Vec<usize> = tr.action.iter().enumerate().map(|(i, &a)| i * actions + a).collect();
        let chosen = g.gather(q, Arc::new(idx), tr.action.len(), 1)?;
        let y = g.input(Tensor::column(y.clone()));
        let td = g.huber(chosen, y, params.huber_delta)?;
        if tr.demonstration && params.demo_weight > 0.0 {
            let ce = g.cross_entropy(q, &tr.action)?;
            let ce = g.scale(ce, params.demo_weight);
            return Ok(g.add(td, ce)?);
        }
        Ok(td)
    })
}
