use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{PriorParams, PriorScale, ScalarNet, SpeedNet};
use crate::numerics::{Adam, Graph, OptimizerConfig, ParamStore, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrefitConfig {
    /// `v̄` in meters per decision step.
    pub mean_speed: f64,
    /// Curvature `k` of the `−k x²` target.
    pub curvature: f64,
    /// Decay nets are fitted on `[−range, range]`.
    pub deviation_range: f64,
    /// Standard deviation of the speed labels and the speed LUT.
    pub label_noise: f64,
    /// Standard deviation of the attention LUT around zero. Kept well below
    /// the cone separation between neighboring deviations.
    pub attn_lut_std: f64,
    pub grid_points: usize,
    /// Adam iterations allowed per decay net.
    pub iterations: usize,
    pub learning_rate: f64,
    /// Target grid MSE for the decay nets.
    pub tolerance: f64,
    pub speed_samples: usize,
    pub speed_iterations: usize,
}

impl Default for PrefitConfig {
    fn default() -> Self {
        Self {
            // 10 m/s free flow over a 10 s decision step
            mean_speed: 100.0,
            curvature: 0.5,
            deviation_range: 3.0,
            label_noise: 0.1,
            attn_lut_std: 0.01,
            grid_points: 121,
            iterations: 6000,
            learning_rate: 1e-2,
            tolerance: 1e-4,
            speed_samples: 2048,
            speed_iterations: 200,
        }
    }
}

impl PrefitConfig {
    pub fn target(&self, x: f64) -> f64 {
        -self.curvature * x * x
    }

    pub fn grid(&self) -> Vec<f64> {
        let n = self.grid_points.max(2);
        let r = self.deviation_range;
        (0..n).map(|k| -r + 2.0 * r * k as f64 / (n - 1) as f64).collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PrefitReport {
    pub gamma_mse: Vec<f64>,
    pub sigma_mse: Vec<f64>,
    pub nu_origin_mean: Vec<f64>,
    pub nu_dest_mean: Vec<f64>,
    /// False if any decay net ran out of iterations above tolerance.
    pub converged: bool,
    pub elapsed: Duration,
}

impl PrefitReport {
    pub fn worst_decay_mse(&self) -> f64 {
        self.gamma_mse.iter().chain(&self.sigma_mse).cloned().fold(0.0, f64::max)
    }
}

fn grid_mse(net: &ScalarNet, store: &ParamStore, xs: &[f64], ys: &[f64]) -> f64 {
    let pred = net.eval_many(store, xs);
    pred.iter().zip(ys).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / xs.len() as f64
}

/// Full-batch Adam on the `−k x²` grid. Returns the final grid MSE.
fn fit_decay_net(store: &mut ParamStore, net: &ScalarNet, config: &PrefitConfig) -> f64 {
    let xs = config.grid();
    let ys: Vec<f64> = xs.iter().map(|&x| config.target(x)).collect();
    let x_t = Tensor::column(xs.clone());
    let y_t = Tensor::column(ys.clone());

    // a private store keeps the optimizer state local to this net
    let ids = net.param_ids();
    let mut local = ParamStore::new();
    for &id in &ids {
        local.add(store.get(id).name.clone(), store.value(id).clone());
    }
    let local_net = remap(net, &ids);
    let mut adam = Adam::new(OptimizerConfig::with_learning_rate(config.learning_rate), &local)
        .expect("valid prefit optimizer");
    let decay_at = config.iterations * 3 / 4;
    for it in 0..config.iterations {
        if it == decay_at {
            adam.config.learning_rate *= 0.1;
        }
        let (loss, grads) = {
            let mut g = Graph::new(&local);
            let x = g.input(x_t.clone());
            let y = g.input(y_t.clone());
            let pred = local_net.forward(&mut g, x).expect("fixed shapes");
            let loss = g.mse(pred, y).expect("fixed shapes");
            let value = g.value(loss).item();
            (value, g.backward(loss).expect("scalar loss"))
        };
        if loss < config.tolerance && it > 100 {
            break;
        }
        local.accumulate(&grads);
        adam.step(&mut local).expect("finite prefit gradients");
    }
    for (k, &id) in ids.iter().enumerate() {
        let v = local.value(crate::numerics::ParamId(k)).clone();
        *store.value_mut(id) = v;
    }
    grid_mse(net, store, &xs, &ys)
}

fn remap(net: &ScalarNet, ids: &[crate::numerics::ParamId]) -> ScalarNet {
    use crate::numerics::ParamId;
    let pos = |id: ParamId| ParamId(ids.iter().position(|&x| x == id).expect("own param"));
    let mut out = net.clone();
    for layer in out.layers.iter_mut() {
        *layer = (pos(layer.0), pos(layer.1));
    }
    out
}

/// Regresses a linear speed net onto `N(v̄, noise)` labels drawn for
/// random unit-scale embeddings. Returns the mean prediction on a fresh
/// held-out draw.
fn fit_speed_net<R: Rng + ?Sized>(
    store: &mut ParamStore,
    net: &SpeedNet,
    d_model: usize,
    config: &PrefitConfig,
    rng: &mut R,
) -> f64 {
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let labels = Normal::new(config.mean_speed, config.label_noise).expect("finite noise");
    let n = config.speed_samples.max(1);
    let xs = Tensor::matrix(n, d_model, (0..n * d_model).map(|_| unit.sample(rng)).collect());
    let ys: Vec<f64> = (0..n).map(|_| labels.sample(rng)).collect();
    let mean_label = ys.iter().sum::<f64>() / n as f64;
    let y_t = Tensor::column(ys);

    let mut local = ParamStore::new();
    let w = local.add("w", store.value(net.weight()).map(|v| v * 0.01));
    let b = local.add("b", Tensor::scalar(mean_label));
    let mut adam = Adam::new(OptimizerConfig::with_learning_rate(1e-3), &local).expect("valid optimizer");
    for _ in 0..config.speed_iterations {
        let grads = {
            let mut g = Graph::new(&local);
            let x = g.input(xs.clone());
            let y = g.input(y_t.clone());
            let (wv, bv) = (g.param(w), g.param(b));
            let pred = g.affine(x, wv, bv).expect("fixed shapes");
            let loss = g.mse(pred, y).expect("fixed shapes");
            g.backward(loss).expect("scalar loss")
        };
        local.accumulate(&grads);
        adam.step(&mut local).expect("finite gradients");
    }
    *store.value_mut(net.weight()) = local.value(w).clone();
    *store.value_mut(net.bias()) = local.value(b).clone();

    let held_out: Vec<f64> = (0..n)
        .map(|_| {
            let phi: Vec<f64> = (0..d_model).map(|_| unit.sample(rng)).collect();
            net.eval(store, &phi)
        })
        .collect();
    held_out.iter().sum::<f64>() / n as f64
}

impl PriorParams {
    /// Builds prior parameters and pre-fits every (block, head)
    /// independently: decay nets to `−k x²`, speed nets to noisy mean-speed
    /// labels, the attention LUT around 0 and the speed LUT around `v̄`.
    #[allow(clippy::too_many_arguments)]
    pub fn prefitted<R: Rng + ?Sized>(
        store: &mut ParamStore,
        num_nodes: usize,
        d_model: usize,
        blocks: usize,
        heads: usize,
        t_max: usize,
        config: &PrefitConfig,
        rng: &mut R,
    ) -> (Self, PrefitReport) {
        let scale = PriorScale {
            mean_speed: config.mean_speed,
            t_max,
        };
        let params = Self::random(store, num_nodes, d_model, blocks, heads, scale, rng);
        let report = params.prefit(store, d_model, config, rng);
        (params, report)
    }

    /// Re-initializes and fits the components of an existing parameter set.
    pub fn prefit<R: Rng + ?Sized>(
        &self,
        store: &mut ParamStore,
        d_model: usize,
        config: &PrefitConfig,
        rng: &mut R,
    ) -> PrefitReport {
        let start = Instant::now();
        let mut report = PrefitReport {
            converged: true,
            ..Default::default()
        };
        let attn_init = Normal::new(0.0, config.attn_lut_std).expect("finite noise");
        let speed_init = Normal::new(config.mean_speed, config.label_noise).expect("finite noise");
        for head in self.heads() {
            let gm = fit_decay_net(store, &head.gamma, config);
            let sm = fit_decay_net(store, &head.sigma, config);
            if gm > config.tolerance * 10.0 || sm > config.tolerance * 10.0 {
                report.converged = false;
            }
            report.gamma_mse.push(gm);
            report.sigma_mse.push(sm);

            for v in store.value_mut(head.attn_lut).data_mut() {
                *v = attn_init.sample(rng);
            }
            for v in store.value_mut(head.speed_lut).data_mut() {
                *v = speed_init.sample(rng);
            }
            report.nu_origin_mean.push(fit_speed_net(store, &head.nu_origin, d_model, config, rng));
            report.nu_dest_mean.push(fit_speed_net(store, &head.nu_dest, d_model, config, rng));
        }
        report.elapsed = start.elapsed();
        report
    }
}
