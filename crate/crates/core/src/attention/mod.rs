//! The physical attention prior: causal deviation, cone and time decay,
//! node-pair lookup tables, speed estimation, and pre-fitting.
//!
//! For a query token `(i, τ)` and a visible key token `(j, ρ)` (`ρ ≥ τ`,
//! so the key is the older one) the prior logit is
//!
//! ```text
//! a_D = γ(ε / (v̄ T)) + σ((ρ − τ) / T) + λ_attn[i, j]
//! ε   = (ρ − τ) · v̂ − ‖u_i − u_j‖
//! v̂   = softplus((ν_o(φ_key) + ν_d(φ_query) + λ_v[i, j]) / 3)
//! ```
//!
//! where `T` is the history length and `v̄` the mean propagation speed in
//! meters per decision step. Both decay nets therefore see inputs in units
//! of the history horizon, and pre-fitting shapes them to `−k x²`.

mod prefit;

pub use prefit::{PrefitConfig, PrefitReport};

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cps::CpsGraph;
use crate::numerics::{Graph, Mask, NumericsError, ParamId, ParamStore, Tensor, Var};

/// Hidden width of the γ and σ networks.
pub const DECAY_HIDDEN: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PriorError {
    #[error("propagation speed must be positive, got {0}")]
    NonPositiveSpeed(f64),
    #[error("key lag {key_lag} is in the future of query lag {query_lag}")]
    MaskedPair { query_lag: usize, key_lag: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// `ε = (ρ − τ) · v − d`. Zero when a flow at speed `v` leaving the key's
/// node at the key's time exactly reaches the query's node at the query's
/// time; negative when it has not arrived yet.
pub fn causal_deviation(query_lag: usize, key_lag: usize, speed: f64, distance: f64) -> Result<f64, PriorError> {
    if key_lag < query_lag {
        return Err(PriorError::MaskedPair { query_lag, key_lag });
    }
    if !(speed > 0.0) {
        return Err(PriorError::NonPositiveSpeed(speed));
    }
    Ok((key_lag - query_lag) as f64 * speed - distance)
}

/// Unit conversions shared by every head.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorScale {
    /// `v̄`, meters per decision step.
    pub mean_speed: f64,
    pub t_max: usize,
}

impl PriorScale {
    /// Meters corresponding to one unit of the normalized deviation.
    pub fn deviation_unit(&self) -> f64 {
        self.mean_speed * self.t_max as f64
    }

    pub fn normalize_deviation(&self, eps: f64) -> f64 {
        eps / self.deviation_unit()
    }

    pub fn normalize_lag(&self, lag_gap: usize) -> f64 {
        lag_gap as f64 / self.t_max as f64
    }
}

/// Scalar-to-scalar network `1 → H → H → 1` with GELU activations.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScalarNet {
    layers: [(ParamId, ParamId); 3],
}

impl ScalarNet {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, rng: &mut R) -> Self {
        let h = DECAY_HIDDEN;
        let dims = [(1, h), (h, h), (h, 1)];
        let mut layer = |k: usize| {
            let (fan_in, fan_out) = dims[k];
            let w = store.add_normal(format!("{name}.w{k}"), fan_in, fan_out, 0.0, (1.0 / fan_in as f64).sqrt(), rng);
            let b = if k == 0 {
                store.add_normal(format!("{name}.b{k}"), 1, fan_out, 0.0, 1.0, rng)
            } else {
                store.add(format!("{name}.b{k}"), Tensor::zeros(1, fan_out))
            };
            (w, b)
        };
        let layers = [layer(0), layer(1), layer(2)];
        Self { layers }
    }

    /// Applies the network row-wise to an `n × 1` column.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var, NumericsError> {
        let mut h = x;
        for (k, &(w, b)) in self.layers.iter().enumerate() {
            let (wv, bv) = (g.param(w), g.param(b));
            h = g.affine(h, wv, bv)?;
            if k + 1 < self.layers.len() {
                h = g.gelu(h);
            }
        }
        Ok(h)
    }

    pub fn eval_many(&self, store: &ParamStore, xs: &[f64]) -> Vec<f64> {
        let mut g = Graph::new(store);
        let x = g.input(Tensor::column(xs.to_vec()));
        let y = self.forward(&mut g, x).expect("scalar net shapes are fixed");
        g.value(y).data().to_vec()
    }

    pub fn eval(&self, store: &ParamStore, x: f64) -> f64 {
        self.eval_many(store, &[x])[0]
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }
}

/// Linear map from a token embedding to a scalar speed component.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpeedNet {
    weight: ParamId,
    bias: ParamId,
}

impl SpeedNet {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d_model: usize, rng: &mut R) -> Self {
        let weight = store.add_normal(format!("{name}.w"), d_model, 1, 0.0, (1.0 / d_model as f64).sqrt(), rng);
        let bias = store.add(format!("{name}.b"), Tensor::zeros(1, 1));
        Self { weight, bias }
    }

    pub fn forward(&self, g: &mut Graph, embeddings: Var) -> Result<Var, NumericsError> {
        let (w, b) = (g.param(self.weight), g.param(self.bias));
        g.affine(embeddings, w, b)
    }

    pub fn eval(&self, store: &ParamStore, embedding: &[f64]) -> f64 {
        let w = store.value(self.weight).data();
        let b = store.value(self.bias).item();
        b + w.iter().zip(embedding).map(|(a, x)| a * x).sum::<f64>()
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.weight, self.bias]
    }

    pub(crate) fn weight(&self) -> ParamId {
        self.weight
    }

    pub(crate) fn bias(&self) -> ParamId {
        self.bias
    }
}

/// Prior components owned by one (block, head).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PriorHead {
    pub gamma: ScalarNet,
    pub sigma: ScalarNet,
    /// `|V| × |V|` additive attention bias.
    pub attn_lut: ParamId,
    /// `|V| × |V|` speed component.
    pub speed_lut: ParamId,
    pub nu_origin: SpeedNet,
    pub nu_dest: SpeedNet,
}

impl PriorHead {
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.gamma.param_ids();
        ids.extend(self.sigma.param_ids());
        ids.extend([self.attn_lut, self.speed_lut]);
        ids.extend(self.nu_origin.param_ids());
        ids.extend(self.nu_dest.param_ids());
        ids
    }

    /// `v̂` for a query token embedding `phi_query` at node `i` and a key
    /// embedding `phi_key` at node `j`.
    pub fn estimate_speed(&self, store: &ParamStore, phi_query: &[f64], phi_key: &[f64], i: usize, j: usize) -> f64 {
        crate::numerics::softplus(self.speed_preactivation(store, phi_query, phi_key, i, j))
    }

    pub fn speed_preactivation(&self, store: &ParamStore, phi_query: &[f64], phi_key: &[f64], i: usize, j: usize) -> f64 {
        let lut = store.value(self.speed_lut);
        let o = self.nu_origin.eval(store, phi_key);
        let d = self.nu_dest.eval(store, phi_query);
        (o + d + lut.get(i, j)) / 3.0
    }

    /// γ at a normalized deviation.
    pub fn cone_decay(&self, store: &ParamStore, normalized_eps: f64) -> f64 {
        self.gamma.eval(store, normalized_eps)
    }

    /// σ at a normalized lag gap.
    pub fn time_decay(&self, store: &ParamStore, normalized_gap: f64) -> f64 {
        self.sigma.eval(store, normalized_gap)
    }
}

/// One query/key token with its embedding.
#[derive(Clone, Copy, Debug)]
pub struct TokenRef<'a> {
    pub node: usize,
    pub lag: usize,
    pub embedding: &'a [f64],
}

/// Decomposed prior logit for one token pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PriorScore {
    pub cone: f64,
    pub time: f64,
    pub lut: f64,
    pub speed: f64,
    pub deviation: f64,
}

impl PriorScore {
    pub fn total(&self) -> f64 {
        self.cone + self.time + self.lut
    }
}

/// Per-pair prior through the scalar path (one pair at a time).
pub fn prior_score(
    store: &ParamStore,
    head: &PriorHead,
    scale: PriorScale,
    graph: &CpsGraph,
    query: TokenRef<'_>,
    key: TokenRef<'_>,
) -> Result<PriorScore, PriorError> {
    let speed = head.estimate_speed(store, query.embedding, key.embedding, query.node, key.node);
    let deviation = causal_deviation(query.lag, key.lag, speed, graph.distance(query.node, key.node))?;
    let cone = head.cone_decay(store, scale.normalize_deviation(deviation));
    let time = head.time_decay(store, scale.normalize_lag(key.lag - query.lag));
    let lut = store.value(head.attn_lut).get(query.node, key.node);
    Ok(PriorScore {
        cone,
        time,
        lut,
        speed,
        deviation,
    })
}

/// All prior heads of an encoder, indexed by (block, head).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PriorParams {
    heads: Vec<PriorHead>,
    heads_per_block: usize,
    num_nodes: usize,
    pub scale: PriorScale,
}

impl PriorParams {
    /// Random initialization without any fitting: decay nets with
    /// fan-in scaled weights, LUTs i.i.d. around zero.
    pub fn random<R: Rng + ?Sized>(
        store: &mut ParamStore,
        num_nodes: usize,
        d_model: usize,
        blocks: usize,
        heads: usize,
        scale: PriorScale,
        rng: &mut R,
    ) -> Self {
        let mut all = Vec::with_capacity(blocks * heads);
        for l in 0..blocks {
            for k in 0..heads {
                let p = format!("block{l}.head{k}.prior");
                all.push(PriorHead {
                    gamma: ScalarNet::new(store, &format!("{p}.gamma"), rng),
                    sigma: ScalarNet::new(store, &format!("{p}.sigma"), rng),
                    attn_lut: store.add_normal(format!("{p}.attn_lut"), num_nodes, num_nodes, 0.0, 0.1, rng),
                    speed_lut: store.add_normal(format!("{p}.speed_lut"), num_nodes, num_nodes, 0.0, 0.1, rng),
                    nu_origin: SpeedNet::new(store, &format!("{p}.nu_origin"), d_model, rng),
                    nu_dest: SpeedNet::new(store, &format!("{p}.nu_dest"), d_model, rng),
                });
            }
        }
        Self {
            heads: all,
            heads_per_block: heads,
            num_nodes,
            scale,
        }
    }

    pub fn head(&self, block: usize, head: usize) -> &PriorHead {
        &self.heads[block * self.heads_per_block + head]
    }

    pub fn heads(&self) -> &[PriorHead] {
        &self.heads
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.heads.iter().flat_map(PriorHead::param_ids).collect()
    }
}

/// Visible token pairs of one attention matrix with their geometry.
#[derive(Clone, Debug)]
pub struct PairSet {
    pub tokens: usize,
    pub num_nodes: usize,
    /// `q * tokens + k` for each visible pair.
    pub flat: Arc<Vec<usize>>,
    pub query: Arc<Vec<usize>>,
    pub key: Arc<Vec<usize>>,
    /// `i * |V| + j`.
    pub node_pair: Arc<Vec<usize>>,
    /// `ρ − τ`, never negative.
    pub lag_gap: Arc<Vec<usize>>,
    pub distance: Vec<f64>,
}

impl PairSet {
    /// Collects every unmasked pair whose key is not in the query's future.
    pub fn from_mask(mask: &Mask, graph: &CpsGraph) -> Self {
        let n = graph.num_nodes();
        let tokens = mask.rows();
        let mut flat = Vec::new();
        let mut query = Vec::new();
        let mut key = Vec::new();
        let mut node_pair = Vec::new();
        let mut lag_gap = Vec::new();
        let mut distance = Vec::new();
        for q in 0..tokens {
            for k in 0..tokens {
                if mask.is_masked(q, k) {
                    continue;
                }
                let (i, tau) = (q % n, q / n);
                let (j, rho) = (k % n, k / n);
                debug_assert!(rho >= tau);
                flat.push(q * tokens + k);
                query.push(q);
                key.push(k);
                node_pair.push(i * n + j);
                lag_gap.push(rho.saturating_sub(tau));
                distance.push(graph.distance(i, j));
            }
        }
        Self {
            tokens,
            num_nodes: n,
            flat: Arc::new(flat),
            query: Arc::new(query),
            key: Arc::new(key),
            node_pair: Arc::new(node_pair),
            lag_gap: Arc::new(lag_gap),
            distance,
        }
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }
}

/// Per-pair prior components as `P × 1` columns.
#[derive(Clone, Copy, Debug)]
pub struct PriorTerms {
    pub cone: Option<Var>,
    pub time: Var,
    pub lut: Var,
}

/// Batched prior for every pair in `pairs`, differentiable through all
/// six components. `embeddings` are the block-input token embeddings.
pub fn prior_terms(
    g: &mut Graph,
    head: &PriorHead,
    scale: PriorScale,
    embeddings: Var,
    pairs: &PairSet,
    use_cone: bool,
) -> Result<PriorTerms, NumericsError> {
    let p = pairs.len();
    let cone = if use_cone {
        let origin = head.nu_origin.forward(g, embeddings)?;
        let dest = head.nu_dest.forward(g, embeddings)?;
        let origin = g.gather(origin, pairs.key.clone(), p, 1)?;
        let dest = g.gather(dest, pairs.query.clone(), p, 1)?;
        let lut_v = g.param(head.speed_lut);
        let lut_v = g.gather(lut_v, pairs.node_pair.clone(), p, 1)?;
        let s = g.add(origin, dest)?;
        let s = g.add(s, lut_v)?;
        let s = g.scale(s, 1.0 / 3.0);
        let speed = g.softplus(s);

        let unit = scale.deviation_unit();
        let gap = g.input(Tensor::column(pairs.lag_gap.iter().map(|&d| d as f64 / unit).collect()));
        let dist = g.input(Tensor::column(pairs.distance.iter().map(|d| d / unit).collect()));
        let travelled = g.mul(speed, gap)?;
        let eps = g.sub(travelled, dist)?;
        Some(head.gamma.forward(g, eps)?)
    } else {
        None
    };

    let lags: Vec<f64> = (0..scale.t_max).map(|d| scale.normalize_lag(d)).collect();
    let lag_in = g.input(Tensor::column(lags));
    let sigma = head.sigma.forward(g, lag_in)?;
    let time = g.gather(sigma, pairs.lag_gap.clone(), p, 1)?;

    let lut = g.param(head.attn_lut);
    let lut = g.gather(lut, pairs.node_pair.clone(), p, 1)?;
    Ok(PriorTerms { cone, time, lut })
}
