//! Token assembly and the multi-head encoder with physical attention priors.
//!
//! Tokens are laid out lag-major (`index = lag * |V| + node`), so the
//! current-time tokens read out by the Q-head are the first `|V|` rows.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::{prior_terms, PairSet, PrefitConfig, PrefitReport, PriorParams, PriorScale};
use crate::cps::{causal_mask, token_coords, CpsGraph, TokenIndex};
use crate::numerics::{gradient_check, GradCheckReport, Graph, Mask, NumericsError, ParamId, ParamStore, Tensor, Var, GRAD_CHECK_FLOOR};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncoderError {
    #[error("invalid encoder config: {0}")]
    Config(String),
    #[error("action {action} out of range for {actions} actions")]
    ActionOutOfRange { action: usize, actions: usize },
    #[error("history mismatch: {0}")]
    History(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Which prior terms enter the attention logits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PriorMode {
    /// ConeDecay + TimeDecay + LUT.
    #[default]
    Full,
    /// TimeDecay + LUT only.
    NoCone,
    /// Plain query-key attention.
    Off,
}

impl PriorMode {
    pub fn uses_priors(self) -> bool {
        self != PriorMode::Off
    }

    pub fn uses_cone(self) -> bool {
        self == PriorMode::Full
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    /// Width `E` of the policy embedding.
    pub policy_dim: usize,
    pub num_actions: usize,
    pub feature_dim: usize,
    pub ffn_dim: usize,
    pub t_max: usize,
    /// Softmax temperature; `None` means `sqrt(d_model / heads)`.
    pub temperature: Option<f64>,
    pub prior_mode: PriorMode,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 4,
            d_model: 64,
            policy_dim: 8,
            num_actions: 4,
            feature_dim: 24,
            ffn_dim: 128,
            t_max: 10,
            temperature: None,
            prior_mode: PriorMode::Full,
        }
    }
}

impl EncoderConfig {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads.max(1)
    }

    pub fn temperature(&self) -> f64 {
        self.temperature.unwrap_or_else(|| (self.head_dim() as f64).sqrt())
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        let fail = |m: String| Err(EncoderError::Config(m));
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return fail(format!("d_model {} not divisible by {} heads", self.d_model, self.heads));
        }
        if self.t_max == 0 {
            return fail("t_max must be at least 1".into());
        }
        if self.layers == 0 || self.num_actions == 0 || self.policy_dim == 0 || self.ffn_dim == 0 {
            return fail("layers, actions, policy_dim and ffn_dim must be positive".into());
        }
        if !(self.temperature() > 0.0) {
            return fail(format!("temperature {} must be positive", self.temperature()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HeadParams {
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BlockParams {
    pub heads: Vec<HeadParams>,
    pub out: (ParamId, ParamId),
    pub norm1: (ParamId, ParamId),
    pub ffn1: (ParamId, ParamId),
    pub ffn2: (ParamId, ParamId),
    pub norm2: (ParamId, ParamId),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EncoderParams {
    pub input: (ParamId, ParamId),
    /// `E × |A|` policy embedding; column `a` embeds action `a`.
    pub policy: ParamId,
    pub blocks: Vec<BlockParams>,
    pub q_head: (ParamId, ParamId),
    pub priors: PriorParams,
}

/// One decision step of observations for every node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    /// `features[node]`, each of length `feature_dim`.
    pub features: Vec<Vec<f64>>,
    /// Action in effect at each node when the features were observed.
    pub actions: Vec<usize>,
}

/// Raw token inputs: features and actions for every (node, lag) slot.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenHistory {
    pub num_nodes: usize,
    pub t_max: usize,
    pub feature_dim: usize,
    /// `N_token × feature_dim`, lag-major.
    pub features: Vec<f64>,
    pub actions: Vec<usize>,
    pub valid: Vec<bool>,
}

impl TokenHistory {
    /// `frames[0]` is the current step, `frames[τ]` the step `τ` decisions
    /// ago. Lags beyond the supplied frames are zero-filled and invalid.
    pub fn from_frames<'a, I>(frames: I, num_nodes: usize, feature_dim: usize, t_max: usize) -> Result<Self, EncoderError>
    where
        I: IntoIterator<Item = &'a Frame>,
    {
        let tokens = num_nodes * t_max;
        let mut features = vec![0.0; tokens * feature_dim];
        let mut actions = vec![0; tokens];
        let mut valid = vec![false; tokens];
        for (lag, frame) in frames.into_iter().take(t_max).enumerate() {
            if frame.features.len() != num_nodes || frame.actions.len() != num_nodes {
                return Err(EncoderError::History(format!(
                    "frame at lag {lag} has {} feature rows and {} actions for {num_nodes} nodes",
                    frame.features.len(),
                    frame.actions.len()
                )));
            }
            for node in 0..num_nodes {
                let f = &frame.features[node];
                if f.len() != feature_dim {
                    return Err(EncoderError::History(format!(
                        "node {node} at lag {lag} has {} features, expected {feature_dim}",
                        f.len()
                    )));
                }
                let t = lag * num_nodes + node;
                features[t * feature_dim..(t + 1) * feature_dim].copy_from_slice(f);
                actions[t] = frame.actions[node];
                valid[t] = true;
            }
        }
        Ok(Self {
            num_nodes,
            t_max,
            feature_dim,
            features,
            actions,
            valid,
        })
    }

    pub fn tokens(&self) -> usize {
        self.num_nodes * self.t_max
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn token_features_mut(&mut self, token: usize) -> &mut [f64] {
        let d = self.feature_dim;
        &mut self.features[token * d..(token + 1) * d]
    }
}

/// Attention mask and visible-pair geometry for one validity pattern.
#[derive(Debug)]
pub struct AttentionLayout {
    pub mask: Arc<Mask>,
    pub pairs: PairSet,
    pub valid: Vec<bool>,
}

impl AttentionLayout {
    /// Causal mask plus invalid keys. An invalid query keeps only itself
    /// visible so its softmax row stays defined; it is never a key for any
    /// valid query, so it cannot reach the readout.
    pub fn new(graph: &CpsGraph, t_max: usize, valid: &[bool]) -> Self {
        let mut mask = causal_mask(graph.num_nodes(), t_max);
        let n = mask.rows();
        for q in 0..n {
            for k in 0..n {
                if !valid[k] || !valid[q] {
                    mask.set(q, k, true);
                }
            }
            if !valid[q] {
                mask.set(q, q, false);
            }
        }
        let pairs = PairSet::from_mask(&mask, graph);
        Self {
            mask: Arc::new(mask),
            pairs,
            valid: valid.to_vec(),
        }
    }
}

/// Assembled token embeddings on a graph.
#[derive(Clone, Debug)]
pub struct TokenBatch {
    pub embeddings: Var,
    pub layout: Arc<AttentionLayout>,
    pub num_nodes: usize,
    pub t_max: usize,
}

impl TokenBatch {
    pub fn coords(&self, token: usize) -> TokenIndex {
        token_coords(self.num_nodes, token)
    }

    pub fn tokens(&self) -> usize {
        self.num_nodes * self.t_max
    }
}

/// Pre-softmax scores of one head, optionally split into prior parts.
#[derive(Clone, Debug)]
pub struct ScoreParts {
    /// Query-key term `φ_qᵀ W_Qᵀ W_K φ_k` (unmasked, `N × N`).
    pub residual: Var,
    pub cone: Option<Var>,
    /// TimeDecay plus attention LUT on visible pairs, zero elsewhere.
    pub time_lut: Option<Var>,
    /// Sum of all parts before temperature scaling.
    pub total: Var,
}

/// Dense copies of one head's score decomposition.
#[derive(Clone, Debug)]
pub struct AttentionDump {
    pub block: usize,
    pub head: usize,
    pub cone: Tensor,
    pub time_lut: Tensor,
    pub residual: Tensor,
    pub total: Tensor,
    pub weights: Tensor,
    pub mask: Arc<Mask>,
}

/// Parameter layout plus the fixed geometry of one CPS graph.
#[derive(Debug, Clone)]
pub struct Dept {
    pub config: EncoderConfig,
    pub params: EncoderParams,
    graph: Arc<CpsGraph>,
    /// Layouts for histories whose first `k + 1` lags are valid.
    prefix_layouts: Vec<Arc<AttentionLayout>>,
}

fn linear<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> (ParamId, ParamId) {
    let w = store.add_normal(format!("{name}.w"), fan_in, fan_out, 0.0, (1.0 / fan_in as f64).sqrt(), rng);
    let b = store.add(format!("{name}.b"), Tensor::zeros(1, fan_out));
    (w, b)
}

fn norm(store: &mut ParamStore, name: &str, width: usize) -> (ParamId, ParamId) {
    let g = store.add(format!("{name}.gain"), Tensor::filled(1, width, 1.0));
    let b = store.add(format!("{name}.bias"), Tensor::zeros(1, width));
    (g, b)
}

impl Dept {
    /// Allocates all parameters in `store`. With `prefit = Some(..)` the
    /// prior components are pre-fitted; otherwise they are left at their
    /// random initialization.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        config: EncoderConfig,
        graph: Arc<CpsGraph>,
        mean_speed: f64,
        prefit: Option<&PrefitConfig>,
        rng: &mut R,
    ) -> Result<(Self, Option<PrefitReport>), EncoderError> {
        config.validate()?;
        let d = config.d_model;
        let dk = config.head_dim();
        let input = linear(store, "input", config.feature_dim + config.policy_dim, d, rng);
        let policy = store.add_normal("policy_embedding", config.policy_dim, config.num_actions, 0.0, 1.0, rng);
        let mut blocks = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let heads = (0..config.heads)
                .map(|k| {
                    let std = (1.0 / d as f64).sqrt();
                    HeadParams {
                        query: store.add_normal(format!("block{l}.head{k}.query"), d, dk, 0.0, std, rng),
                        key: store.add_normal(format!("block{l}.head{k}.key"), d, dk, 0.0, std, rng),
                        value: store.add_normal(format!("block{l}.head{k}.value"), d, dk, 0.0, std, rng),
                    }
                })
                .collect();
            blocks.push(BlockParams {
                heads,
                out: linear(store, &format!("block{l}.out"), d, d, rng),
                norm1: norm(store, &format!("block{l}.norm1"), d),
                ffn1: linear(store, &format!("block{l}.ffn1"), d, config.ffn_dim, rng),
                ffn2: linear(store, &format!("block{l}.ffn2"), config.ffn_dim, d, rng),
                norm2: norm(store, &format!("block{l}.norm2"), d),
            });
        }
        let q_w = store.add_normal("q_head.w", d, config.num_actions, 0.0, 0.01, rng);
        let q_b = store.add("q_head.b", Tensor::zeros(1, config.num_actions));
        let scale = PriorScale {
            mean_speed,
            t_max: config.t_max,
        };
        let n = graph.num_nodes();
        let priors = PriorParams::random(store, n, d, config.layers, config.heads, scale, rng);
        let report = prefit.map(|pc| priors.prefit(store, d, pc, rng));
        let params = EncoderParams {
            input,
            policy,
            blocks,
            q_head: (q_w, q_b),
            priors,
        };
        Ok((Self::from_parts(config, params, graph), report))
    }

    fn from_parts(config: EncoderConfig, params: EncoderParams, graph: Arc<CpsGraph>) -> Self {
        let n = graph.num_nodes();
        let prefix_layouts = (1..=config.t_max)
            .map(|k| {
                let valid: Vec<bool> = (0..n * config.t_max).map(|t| t / n < k).collect();
                Arc::new(AttentionLayout::new(&graph, config.t_max, &valid))
            })
            .collect();
        Self {
            config,
            params,
            graph,
            prefix_layouts,
        }
    }

    pub fn graph(&self) -> &Arc<CpsGraph> {
        &self.graph
    }

    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    /// Every parameter except the prior components.
    pub fn core_param_ids(&self) -> Vec<ParamId> {
        let p = &self.params;
        let mut ids = vec![p.input.0, p.input.1, p.policy, p.q_head.0, p.q_head.1];
        for b in &p.blocks {
            for h in &b.heads {
                ids.extend([h.query, h.key, h.value]);
            }
            for (w, bias) in [b.out, b.norm1, b.ffn1, b.ffn2, b.norm2] {
                ids.extend([w, bias]);
            }
        }
        ids
    }

    pub fn layout_for(&self, valid: &[bool]) -> Arc<AttentionLayout> {
        let n = self.num_nodes();
        let k = valid.iter().take_while(|v| **v).count();
        let is_prefix = k % n == 0 && k > 0 && valid[k..].iter().all(|v| !*v);
        if is_prefix {
            return self.prefix_layouts[k / n - 1].clone();
        }
        Arc::new(AttentionLayout::new(&self.graph, self.config.t_max, valid))
    }

    fn check_history(&self, h: &TokenHistory) -> Result<(), EncoderError> {
        let c = &self.config;
        if h.num_nodes != self.num_nodes() || h.t_max != c.t_max || h.feature_dim != c.feature_dim {
            return Err(EncoderError::History(format!(
                "history is {} nodes × {} lags × {} features, model expects {} × {} × {}",
                h.num_nodes,
                h.t_max,
                h.feature_dim,
                self.num_nodes(),
                c.t_max,
                c.feature_dim
            )));
        }
        if let Some(&a) = h.actions.iter().find(|&&a| a >= c.num_actions) {
            return Err(EncoderError::ActionOutOfRange {
                action: a,
                actions: c.num_actions,
            });
        }
        Ok(())
    }

    /// `token(i, τ) = input_proj([f ∥ P[:, a]])`, zero-filled where invalid.
    pub fn assemble_tokens(&self, g: &mut Graph, history: &TokenHistory) -> Result<TokenBatch, EncoderError> {
        self.check_history(history)?;
        let c = &self.config;
        let tokens = history.tokens();
        let feats = g.input(Tensor::matrix(tokens, c.feature_dim, history.features.clone()));
        let mut idx = Vec::with_capacity(tokens * c.policy_dim);
        let mut keep = Vec::with_capacity(tokens * c.policy_dim);
        for t in 0..tokens {
            for e in 0..c.policy_dim {
                idx.push(e * c.num_actions + history.actions[t]);
                keep.push(if history.valid[t] { 1.0 } else { 0.0 });
            }
        }
        let table = g.param(self.params.policy);
        let policy = g.gather(table, Arc::new(idx), tokens, c.policy_dim)?;
        let keep = g.input(Tensor::matrix(tokens, c.policy_dim, keep));
        let policy = g.mul(policy, keep)?;
        let x = g.concat_cols(&[feats, policy])?;
        let (w, b) = (g.param(self.params.input.0), g.param(self.params.input.1));
        let embeddings = g.affine(x, w, b)?;
        Ok(TokenBatch {
            embeddings,
            layout: self.layout_for(&history.valid),
            num_nodes: history.num_nodes,
            t_max: history.t_max,
        })
    }

    /// Pre-softmax scores of `(block, head)` for block input `x`.
    pub fn attention_scores(
        &self,
        g: &mut Graph,
        block: usize,
        head: usize,
        batch: &TokenBatch,
        x: Var,
        decompose: bool,
    ) -> Result<(ScoreParts, Var), EncoderError> {
        let hp = &self.params.blocks[block].heads[head];
        let n = batch.tokens();
        let (wq, wk, wv) = (g.param(hp.query), g.param(hp.key), g.param(hp.value));
        let q = g.matmul(x, wq)?;
        let k = g.matmul(x, wk)?;
        let v = g.matmul(x, wv)?;
        let residual = g.matmul_nt(q, k)?;
        let mode = self.config.prior_mode;
        let mut parts = ScoreParts {
            residual,
            cone: None,
            time_lut: None,
            total: residual,
        };
        if mode.uses_priors() {
            let pairs = &batch.layout.pairs;
            let prior_head = self.params.priors.head(block, head);
            let terms = prior_terms(g, prior_head, self.params.priors.scale, x, pairs, mode.uses_cone())?;
            let time_lut = g.add(terms.time, terms.lut)?;
            if decompose {
                let tl = g.scatter(time_lut, pairs.flat.clone(), n, n)?;
                let mut total = g.add(residual, tl)?;
                parts.time_lut = Some(tl);
                if let Some(cone) = terms.cone {
                    let cm = g.scatter(cone, pairs.flat.clone(), n, n)?;
                    total = g.add(cm, total)?;
                    parts.cone = Some(cm);
                }
                parts.total = total;
            } else {
                let prior = match terms.cone {
                    Some(cone) => g.add(cone, time_lut)?,
                    None => time_lut,
                };
                let prior = g.scatter(prior, pairs.flat.clone(), n, n)?;
                parts.total = g.add(residual, prior)?;
            }
        }
        Ok((parts, v))
    }

    fn attend(
        &self,
        g: &mut Graph,
        block: usize,
        head: usize,
        batch: &TokenBatch,
        x: Var,
        capture: Option<&mut Option<AttentionDump>>,
    ) -> Result<Var, EncoderError> {
        let (parts, v) = self.attention_scores(g, block, head, batch, x, capture.is_some())?;
        let scaled = g.scale(parts.total, 1.0 / self.config.temperature());
        let weights = g.row_softmax(scaled, Some(batch.layout.mask.clone()))?;
        if let Some(slot) = capture {
            let n = batch.tokens();
            let dense = |g: &Graph, v: Option<Var>| v.map_or_else(|| Tensor::zeros(n, n), |v| g.value(v).clone());
            *slot = Some(AttentionDump {
                block,
                head,
                cone: dense(g, parts.cone),
                time_lut: dense(g, parts.time_lut),
                residual: g.value(parts.residual).clone(),
                total: g.value(parts.total).clone(),
                weights: g.value(weights).clone(),
                mask: batch.layout.mask.clone(),
            });
        }
        Ok(g.matmul(weights, v)?)
    }

    fn block_forward(
        &self,
        g: &mut Graph,
        block: usize,
        batch: &TokenBatch,
        x: Var,
        mut capture: Option<(usize, &mut Option<AttentionDump>)>,
    ) -> Result<Var, EncoderError> {
        let bp = &self.params.blocks[block];
        let mut heads = Vec::with_capacity(bp.heads.len());
        for k in 0..bp.heads.len() {
            let slot = match capture.as_mut() {
                Some((h, slot)) if *h == k => Some(&mut **slot),
                _ => None,
            };
            heads.push(self.attend(g, block, k, batch, x, slot)?);
        }
        let cat = g.concat_cols(&heads)?;
        let (ow, ob) = (g.param(bp.out.0), g.param(bp.out.1));
        let attn = g.affine(cat, ow, ob)?;
        let h = g.add(x, attn)?;
        let (g1, b1) = (g.param(bp.norm1.0), g.param(bp.norm1.1));
        let h = g.layer_norm_affine(h, g1, b1)?;
        let (w1, c1) = (g.param(bp.ffn1.0), g.param(bp.ffn1.1));
        let f = g.affine(h, w1, c1)?;
        let f = g.gelu(f);
        let (w2, c2) = (g.param(bp.ffn2.0), g.param(bp.ffn2.1));
        let f = g.affine(f, w2, c2)?;
        let out = g.add(h, f)?;
        let (g2, b2) = (g.param(bp.norm2.0), g.param(bp.norm2.1));
        Ok(g.layer_norm_affine(out, g2, b2)?)
    }

    /// One encoder block: multi-head attention, add & norm, FFN, add & norm.
    pub fn encoder_block_forward(&self, g: &mut Graph, block: usize, batch: &TokenBatch, x: Var) -> Result<Var, EncoderError> {
        self.block_forward(g, block, batch, x, None)
    }

    /// Q-values `|V| × |A|` for the current step.
    pub fn forward(&self, g: &mut Graph, history: &TokenHistory) -> Result<Var, EncoderError> {
        self.forward_inner(g, history, None)
    }

    fn forward_inner(
        &self,
        g: &mut Graph,
        history: &TokenHistory,
        mut capture: Option<(usize, usize, &mut Option<AttentionDump>)>,
    ) -> Result<Var, EncoderError> {
        let batch = self.assemble_tokens(g, history)?;
        let mut x = batch.embeddings;
        for l in 0..self.config.layers {
            let cap = match capture.as_mut() {
                Some((b, h, slot)) if *b == l => Some((*h, &mut **slot)),
                _ => None,
            };
            x = self.block_forward(g, l, &batch, x, cap)?;
        }
        let current = g.slice_rows(x, 0, self.num_nodes())?;
        let (w, b) = (g.param(self.params.q_head.0), g.param(self.params.q_head.1));
        Ok(g.affine(current, w, b)?)
    }

    /// Forward pass without keeping the graph.
    pub fn q_values(&self, store: &ParamStore, history: &TokenHistory) -> Result<Tensor, EncoderError> {
        let mut g = Graph::new(store);
        let q = self.forward(&mut g, history)?;
        Ok(g.value(q).clone())
    }

    /// Q-values together with the score decomposition of one head.
    pub fn attention_components(
        &self,
        store: &ParamStore,
        history: &TokenHistory,
        block: usize,
        head: usize,
    ) -> Result<(Tensor, AttentionDump), EncoderError> {
        if block >= self.config.layers || head >= self.config.heads {
            return Err(EncoderError::Config(format!(
                "no block {block} / head {head} in a {} × {} encoder",
                self.config.layers, self.config.heads
            )));
        }
        let mut slot = None;
        let mut g = Graph::new(store);
        let q = self.forward_inner(&mut g, history, Some((block, head, &mut slot)))?;
        let dump = slot.expect("requested head is always visited");
        Ok((g.value(q).clone(), dump))
    }
}

/// Compares every parameter gradient of `Σ Q²` against central differences,
/// on a randomly initialized model and a full random history over `graph`.
pub fn check_model_gradients(config: EncoderConfig, graph: Arc<CpsGraph>, seed: u64) -> Result<GradCheckReport, EncoderError> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let n = graph.num_nodes();
    let (model, _) = Dept::new(&mut store, config.clone(), graph, 100.0, None, &mut rng)?;
    // the tiny Q-head init would leave most gradients under the error floor
    for v in store.value_mut(model.params.q_head.0).data_mut() {
        *v *= 50.0;
    }
    let frames: Vec<Frame> = (0..config.t_max)
        .map(|_| Frame {
            features: (0..n)
                .map(|_| (0..config.feature_dim).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect(),
            actions: (0..n).map(|_| rng.random_range(0..config.num_actions)).collect(),
        })
        .collect();
    let history = TokenHistory::from_frames(&frames, n, config.feature_dim, config.t_max)?;
    let ids: Vec<ParamId> = store.iter().map(|p| p.id).collect();
    let report = gradient_check(&mut store, &ids, 1e-5, GRAD_CHECK_FLOOR, |g| {
        let q = model.forward(g, &history).map_err(|e| match e {
            EncoderError::Numerics(n) => n,
            other => NumericsError::InvalidTensor(other.to_string()),
        })?;
        let q2 = g.mul(q, q)?;
        Ok(g.sum(q2))
    })?;
    Ok(report)
}

/// The smallest setting that still exercises every component: two nodes
/// 120 m apart, two lags, two blocks of two heads.
pub fn gradient_check_setup() -> (EncoderConfig, Arc<CpsGraph>) {
    let config = EncoderConfig {
        layers: 2,
        heads: 2,
        d_model: 4,
        policy_dim: 2,
        num_actions: 4,
        feature_dim: 3,
        ffn_dim: 6,
        t_max: 2,
        temperature: None,
        prior_mode: PriorMode::Full,
    };
    let nodes = vec![
        crate::cps::Node { id: 0, location: [0.0, 0.0] },
        crate::cps::Node { id: 1, location: [120.0, 0.0] },
    ];
    let graph = CpsGraph::new(nodes, vec![]).expect("two distinct nodes form a valid graph");
    (config, Arc::new(graph))
}
