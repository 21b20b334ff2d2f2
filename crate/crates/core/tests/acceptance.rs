//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Criterion numbers given as arguments select a
//! subset: `cargo test --release --test acceptance -- 1 4 9`.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{ensure, Context, Result};
use dept::attention::{PrefitConfig, PriorParams};
use dept::cli::{default_scenario, run_command, AttentionRow, ATTENTION_FILES};
use dept::controllers::{max_pressure_act, run_episode, Controller, FixedTime, MaxPressure, MovementQueue};
use dept::cps::{CpsGraph, Node};
use dept::encoder::{gradient_check_setup, Dept, EncoderConfig, Frame, PriorMode, TokenHistory};
use dept::numerics::{Graph, ParamId, ParamStore, Tensor};
use dept::sim::{FlowPreset, Scenario, Simulation, DECISION_INTERVAL};
use dept::trainer::{eval_seed, mean_speed, train_with, AblationFlags, CurvePoint, TrainConfig};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Result<Verdict> {
    Ok(Verdict { pass, detail })
}

fn secs(d: Duration) -> String {
    format!("{:.1} s", d.as_secs_f64())
}

// ---------------------------------------------------------------- 1

fn sum_sq_q(model: &Dept, store: &ParamStore, history: &TokenHistory) -> Result<f64> {
    let q = model.q_values(store, history)?;
    Ok(q.data().iter().map(|v| v * v).sum())
}

fn random_history<R: Rng>(rng: &mut R, config: &EncoderConfig, nodes: usize, frames: usize) -> Result<TokenHistory> {
    let frames: Vec<Frame> = (0..frames)
        .map(|_| Frame {
            features: (0..nodes)
                .map(|_| (0..config.feature_dim).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect(),
            actions: (0..nodes).map(|_| rng.random_range(0..config.num_actions)).collect(),
        })
        .collect();
    Ok(TokenHistory::from_frames(&frames, nodes, config.feature_dim, config.t_max)?)
}

fn gradient_integrity() -> Result<Verdict> {
    let start = Instant::now();
    let (config, graph) = gradient_check_setup();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::new();
    let (model, _) = Dept::new(&mut store, config.clone(), graph.clone(), 100.0, None, &mut rng)?;
    // a larger readout keeps most gradients well above rounding noise
    for v in store.value_mut(model.params.q_head.0).data_mut() {
        *v *= 50.0;
    }
    let history = random_history(&mut rng, &config, graph.num_nodes(), config.t_max)?;

    let grads = {
        let mut g = Graph::new(&store);
        let q = model.forward(&mut g, &history)?;
        let q2 = g.mul(q, q)?;
        let loss = g.sum(q2);
        g.backward(loss)?
    };
    let ids: Vec<ParamId> = store.iter().map(|p| p.id).collect();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut coords = 0;
    for id in ids {
        let analytic = grads.get(id).cloned().unwrap_or_else(|| {
            let v = store.value(id);
            Tensor::zeros(v.rows(), v.cols())
        });
        for k in 0..store.value(id).len() {
            let orig = store.value(id).data()[k];
            store.value_mut(id).data_mut()[k] = orig + h;
            let up = sum_sq_q(&model, &store, &history)?;
            store.value_mut(id).data_mut()[k] = orig - h;
            let down = sum_sq_q(&model, &store, &history)?;
            store.value_mut(id).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.data()[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-5);
            worst = worst.max(rel);
            coords += 1;
        }
    }
    let elapsed = start.elapsed();
    verdict(
        worst < 1e-4 && elapsed < Duration::from_secs(60),
        format!("max rel error {worst:.2e} over {coords} coordinates in {}", secs(elapsed)),
    )
}

// ---------------------------------------------------------------- 2

fn random_instance(rng: &mut ChaCha8Rng) -> Result<(Dept, ParamStore, usize)> {
    let nodes = rng.random_range(1..=4);
    let graph_nodes: Vec<Node> = (0..nodes)
        .map(|id| Node {
            id,
            // distinct locations on a 100 m lattice
            location: [(id % 2) as f64 * 100.0 * rng.random_range(1..4) as f64, (id / 2) as f64 * 150.0],
        })
        .collect();
    let graph = Arc::new(CpsGraph::new(graph_nodes, vec![])?);
    let heads = rng.random_range(1..=2);
    let config = EncoderConfig {
        layers: rng.random_range(1..=2),
        heads,
        d_model: 4 * heads,
        policy_dim: 2,
        num_actions: 4,
        feature_dim: 3,
        ffn_dim: 8,
        t_max: rng.random_range(1..=5),
        temperature: None,
        prior_mode: *[PriorMode::Full, PriorMode::NoCone, PriorMode::Off].choose(rng).unwrap(),
    };
    let mut store = ParamStore::new();
    let (model, _) = Dept::new(&mut store, config, graph, 100.0, None, rng)?;
    Ok((model, store, nodes))
}

fn hidden_states(model: &Dept, store: &ParamStore, history: &TokenHistory) -> Result<Vec<Tensor>> {
    let mut g = Graph::new(store);
    let batch = model.assemble_tokens(&mut g, history)?;
    let mut x = batch.embeddings;
    let mut out = Vec::new();
    for block in 0..model.config.layers {
        x = model.encoder_block_forward(&mut g, block, &batch, x)?;
        out.push(g.value(x).clone());
    }
    Ok(out)
}

fn causal_mask_suite() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut worst_row: f64 = 0.0;
    let mut failures = Vec::new();
    let instances = 50;
    for case in 0..instances {
        let (model, store, nodes) = random_instance(&mut rng)?;
        let c = model.config.clone();
        let frames = rng.random_range(1..=c.t_max);
        let history = random_history(&mut rng, &c, nodes, frames)?;
        let q = model.q_values(&store, &history)?;

        // padding slots carry no information
        let mut padded = history.clone();
        for t in 0..padded.tokens() {
            if !padded.valid[t] {
                for f in padded.token_features_mut(t) {
                    *f = rng.random_range(-5.0..5.0);
                }
                padded.actions[t] = rng.random_range(0..c.num_actions);
            }
        }
        if model.q_values(&store, &padded)? != q {
            failures.push(format!("case {case}: padding changed Q"));
        }

        // tokens newer than lag l are future keys for every query at lag ≥ l
        if frames >= 2 {
            let l = rng.random_range(1..frames);
            let mut perturbed = history.clone();
            for t in 0..nodes * l {
                for f in perturbed.token_features_mut(t) {
                    *f += rng.random_range(-2.0..2.0);
                }
                perturbed.actions[t] = rng.random_range(0..c.num_actions);
            }
            let before = hidden_states(&model, &store, &history)?;
            let after = hidden_states(&model, &store, &perturbed)?;
            for (block, (b, a)) in before.iter().zip(&after).enumerate() {
                if (nodes * l..b.rows()).any(|r| b.row(r) != a.row(r)) {
                    failures.push(format!("case {case}: block {block} states at lag ≥ {l} moved"));
                }
            }
        }

        for block in 0..c.layers {
            for head in 0..c.heads {
                let (_, dump) = model.attention_components(&store, &history, block, head)?;
                for r in 0..dump.weights.rows() {
                    let row = dump.weights.row(r);
                    worst_row = worst_row.max((row.iter().sum::<f64>() - 1.0).abs());
                    if (0..row.len()).any(|k| dump.mask.is_masked(r, k) && row[k] != 0.0) {
                        failures.push(format!("case {case}: masked weight is nonzero"));
                    }
                }
            }
        }
    }
    let pass = failures.is_empty() && worst_row < 1e-9;
    let mut detail = format!("{instances} instances, max |row sum - 1| {worst_row:.1e}");
    if let Some(f) = failures.first() {
        detail += &format!(", {} failures, first: {f}", failures.len());
    }
    verdict(pass, detail)
}

// ---------------------------------------------------------------- 3

fn prefit_fidelity() -> Result<Verdict> {
    let start = Instant::now();
    let desk = TrainConfig::default();
    let e = &desk.encoder;
    let prefit = PrefitConfig {
        mean_speed: mean_speed(),
        ..PrefitConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut store = ParamStore::new();
    let (priors, _) = PriorParams::prefitted(&mut store, 9, e.d_model, e.layers, e.heads, e.t_max, &prefit, &mut rng);
    let elapsed = start.elapsed();

    let grid = prefit.grid();
    let target: Vec<f64> = grid.iter().map(|x| -prefit.curvature * x * x).collect();
    let mse = |f: &dyn Fn(f64) -> f64| grid.iter().zip(&target).map(|(&x, y)| (f(x) - y).powi(2)).sum::<f64>() / grid.len() as f64;
    let fine: Vec<f64> = (0..=6000).map(|k| -3.0 + k as f64 * 1e-3).collect();
    let v_bar = prefit.mean_speed;
    let mut worst_mse: f64 = 0.0;
    let mut worst_argmax: f64 = 0.0;
    let mut worst_speed: f64 = 0.0;
    let mut held_out = ChaCha8Rng::seed_from_u64(34);
    for head in priors.heads() {
        worst_mse = worst_mse.max(mse(&|x| head.cone_decay(&store, x)));
        worst_mse = worst_mse.max(mse(&|x| head.time_decay(&store, x)));
        let peak = fine
            .iter()
            .copied()
            .max_by(|&a, &b| head.cone_decay(&store, a).total_cmp(&head.cone_decay(&store, b)))
            .unwrap();
        worst_argmax = worst_argmax.max(peak.abs());
        for _ in 0..200 {
            let phi_q: Vec<f64> = (0..e.d_model).map(|_| held_out.sample(rand_distr::StandardNormal)).collect();
            let phi_k: Vec<f64> = (0..e.d_model).map(|_| held_out.sample(rand_distr::StandardNormal)).collect();
            let (i, j) = (held_out.random_range(0..9), held_out.random_range(0..9));
            for v in [
                head.nu_origin.eval(&store, &phi_k),
                head.nu_dest.eval(&store, &phi_q),
                head.estimate_speed(&store, &phi_q, &phi_k, i, j),
            ] {
                worst_speed = worst_speed.max((v - v_bar).abs());
            }
        }
    }
    verdict(
        worst_mse < 1e-3 && worst_argmax <= 0.1 && worst_speed <= 0.2 && elapsed < Duration::from_secs(300),
        format!(
            "{} heads: worst decay MSE {worst_mse:.1e}, worst |argmax γ| {worst_argmax:.3}, worst |ν - v̄| {worst_speed:.3}, pre-fit {}",
            priors.heads().len(),
            secs(elapsed)
        ),
    )
}

// ---------------------------------------------------------------- 4

fn simulator_laws() -> Result<Verdict> {
    let network = Scenario::grid(3, 3, FlowPreset::GridBi).network()?;
    let horizon = 4 * 3600;
    let seeds = 10u64;
    let mut violations = 0usize;
    let mut counts = vec![0usize; network.flows.len()];
    let mut mismatched = 0;
    for seed in 0..seeds {
        let run = |check: &mut dyn FnMut(&Simulation)| {
            let mut sim = Simulation::new(network.clone(), seed);
            let mut mp = MaxPressure;
            while sim.clock() < horizon {
                if sim.clock() % DECISION_INTERVAL == 0 {
                    let actions = mp.act(&sim);
                    sim.set_phases(&actions).expect("valid phases");
                }
                sim.tick();
                check(&sim);
            }
            sim
        };
        let a = run(&mut |s| {
            if s.entered() != s.exited() + s.in_network() {
                violations += 1;
            }
        });
        let b = run(&mut |_| {});
        let same = a.metrics() == b.metrics()
            && a.state.vehicles.len() == b.state.vehicles.len()
            && a.state.vehicles.iter().zip(&b.state.vehicles).all(|(x, y)| {
                x.flow == y.flow && x.entry.to_bits() == y.entry.to_bits() && x.exit.map(f64::to_bits) == y.exit.map(f64::to_bits)
            });
        if !same {
            mismatched += 1;
        }
        for v in &a.state.vehicles {
            counts[v.flow] += 1;
        }
    }
    let mut worst_z: f64 = 0.0;
    for (flow, &count) in network.flows.iter().zip(&counts) {
        let expected = flow.rate * (horizon as f64 / 3600.0) * seeds as f64;
        worst_z = worst_z.max((count as f64 - expected).abs() / expected.sqrt());
    }
    verdict(
        violations == 0 && mismatched == 0 && worst_z < 3.0,
        format!(
            "{seeds} seeds × 4 h: {violations} conservation violations, {mismatched} non-reproducible runs, worst arrival |z| {worst_z:.2} over {} flows",
            counts.len()
        ),
    )
}

// ---------------------------------------------------------------- 5

fn baseline_ordering() -> Result<Verdict> {
    let start = Instant::now();
    let scenario = Scenario::grid(6, 6, FlowPreset::GridBi);
    let network = scenario.network()?;
    let mut wins = 0;
    let mut pairs = Vec::new();
    let seeds = 5;
    for seed in 0..seeds {
        let ft = run_episode(&mut FixedTime::for_network(&network)?, &mut Simulation::new(network.clone(), seed), scenario.duration)?;
        let mp = run_episode(&mut MaxPressure, &mut Simulation::new(network.clone(), seed), scenario.duration)?;
        if mp.avg_travel_time < ft.avg_travel_time {
            wins += 1;
        }
        pairs.push(format!("{:.1}/{:.1}", mp.avg_travel_time, ft.avg_travel_time));
    }
    // one-sided sign test
    let p = (wins..=seeds).map(|k| binomial(seeds, k)).sum::<f64>() / 2f64.powi(seeds as i32);
    let elapsed = start.elapsed();
    verdict(
        p < 0.05 && elapsed < Duration::from_secs(600),
        format!("MP/FT AvgTT {}, MP better on {wins}/{seeds}, sign test p = {p:.4}, {}", pairs.join(" "), secs(elapsed)),
    )
}

fn binomial(n: u64, k: u64) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

// ---------------------------------------------------------------- 6 and 7

const SEEDS: [u64; 3] = [0, 1, 2];

struct Run {
    curve: Vec<CurvePoint>,
}

struct Baselines {
    fixed_time: f64,
    max_pressure: f64,
}

fn baselines(scenario: &Scenario, seed: u64, duration: u64) -> Result<Baselines> {
    let network = scenario.network()?;
    let es = eval_seed(seed);
    let ft = run_episode(&mut FixedTime::for_network(&network)?, &mut Simulation::new(network.clone(), es), duration)?;
    let mp = run_episode(&mut MaxPressure, &mut Simulation::new(network, es), duration)?;
    Ok(Baselines {
        fixed_time: ft.avg_travel_time,
        max_pressure: mp.avg_travel_time,
    })
}

fn train_arm(ablation: AblationFlags, seed: u64) -> Result<Run> {
    let config = TrainConfig {
        ablation,
        ..TrainConfig::default()
    };
    let scenario = default_scenario();
    let outcome = train_with(&config, &scenario, seed, |p| {
        eprintln!("  seed {seed} round {:>2} {} AvgTT {:.2}", p.round, p.stage, p.avg_travel_time);
    })
    .with_context(|| format!("training seed {seed}"))?;
    Ok(Run { curve: outcome.curve })
}

fn final_tt(run: &Run) -> f64 {
    run.curve.last().map_or(f64::INFINITY, |p| p.avg_travel_time)
}

fn learning_efficacy(full: &mut Option<Vec<Run>>) -> Result<Verdict> {
    let start = Instant::now();
    let scenario = default_scenario();
    let duration = TrainConfig::default().schedule.round_duration;
    let runs: Vec<Run> = SEEDS.iter().map(|&s| train_arm(AblationFlags::FULL, s)).collect::<Result<_>>()?;
    let elapsed = start.elapsed();
    let mut pass = elapsed <= Duration::from_secs(3600);
    let mut parts = Vec::new();
    for (&seed, run) in SEEDS.iter().zip(&runs) {
        let b = baselines(&scenario, seed, duration)?;
        let tt = final_tt(run);
        pass &= tt < b.fixed_time && tt <= 1.05 * b.max_pressure;
        parts.push(format!("seed {seed}: {tt:.1} vs FT {:.1} MP {:.1} ({:.3}× MP)", b.fixed_time, b.max_pressure, tt / b.max_pressure));
    }
    *full = Some(runs);
    verdict(pass, format!("{}; {}", parts.join(", "), secs(elapsed)))
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

fn ablation_trend(full: &mut Option<Vec<Run>>) -> Result<Verdict> {
    let start = Instant::now();
    let scenario = default_scenario();
    let duration = TrainConfig::default().schedule.round_duration;
    if full.is_none() {
        *full = Some(SEEDS.iter().map(|&s| train_arm(AblationFlags::FULL, s)).collect::<Result<_>>()?);
    }
    let full = full.as_ref().unwrap();
    let no_prefit: Vec<Run> = SEEDS.iter().map(|&s| train_arm(AblationFlags::NO_PRE_FIT, s)).collect::<Result<_>>()?;
    let tte: Vec<Run> = SEEDS.iter().map(|&s| train_arm(AblationFlags::TTE, s)).collect::<Result<_>>()?;
    let ft: Vec<f64> = SEEDS
        .iter()
        .map(|&s| baselines(&scenario, s, duration).map(|b| b.fixed_time))
        .collect::<Result<_>>()?;
    let first_good = |runs: &[Run]| -> f64 {
        median(
            runs.iter()
                .zip(&ft)
                .map(|(r, &f)| {
                    r.curve
                        .iter()
                        .find(|p| p.avg_travel_time <= 1.2 * f)
                        .map_or(f64::INFINITY, |p| p.round as f64)
                })
                .collect(),
        )
    };
    let finals = |runs: &[Run]| median(runs.iter().map(final_tt).collect());
    let (r_full, r_none) = (first_good(full), first_good(&no_prefit));
    let (f_full, f_tte) = (finals(full), finals(&tte));
    verdict(
        r_full < r_none && f_full <= f_tte,
        format!(
            "median first round ≤ 1.2× FT: full {r_full} vs no-pre-fit {r_none}; median final AvgTT: full {f_full:.2} vs TTE {f_tte:.2}; {}",
            secs(start.elapsed())
        ),
    )
}

// ---------------------------------------------------------------- 8

fn attention_decomposition() -> Result<Verdict> {
    let dir = tempfile::tempdir()?;
    let config = TrainConfig::default();
    let graph = default_scenario().network()?.graph.clone();
    let n = graph.num_nodes();
    let mut worst_add: f64 = 0.0;
    let mut broken = Vec::new();
    for block in 0..config.encoder.layers {
        for head in 0..config.encoder.heads {
            let out = dir.path().join(format!("b{block}h{head}"));
            let (b, h) = (block.to_string(), head.to_string());
            let argv = ["dept", "dump-attention", "--block", &b, "--head", &h, "--out", out.to_str().unwrap()];
            ensure!(run_command(argv) == 0, "dump-attention failed for block {block} head {head}");
            let read = |file: &str| -> Result<Vec<AttentionRow>> {
                let mut r = csv::Reader::from_path(out.join(file))?;
                Ok(r.deserialize().collect::<Result<_, _>>()?)
            };
            let parts: Vec<Vec<AttentionRow>> = ATTENTION_FILES[..4].iter().map(|f| read(f)).collect::<Result<_>>()?;
            // (gap, |ε| in meters) -> (sum of prior scores, count)
            let mut buckets: BTreeMap<(usize, i64), (f64, usize)> = BTreeMap::new();
            for i in 0..parts[0].len() {
                let (cone, time_lut, residual, total) = (&parts[0][i], &parts[1][i], &parts[2][i], &parts[3][i]);
                if total.masked {
                    continue;
                }
                worst_add = worst_add.max((cone.value + time_lut.value + residual.value - total.value).abs());
                let gap = total.key_lag - total.query_lag;
                let dist = graph.distance(total.query_node, total.key_node);
                let eps = (mean_speed() * gap as f64 - dist).abs().round() as i64;
                let e = buckets.entry((gap, eps)).or_default();
                e.0 += cone.value + time_lut.value;
                e.1 += 1;
            }
            let mut last: Option<(usize, f64)> = None;
            for (&(gap, eps), &(sum, count)) in &buckets {
                let mean = sum / count as f64;
                if let Some((g, prev)) = last {
                    if g == gap && mean >= prev {
                        broken.push(format!("block {block} head {head} gap {gap} |ε| {eps}"));
                    }
                }
                last = Some((gap, mean));
            }
        }
    }
    let _ = n;
    let mut detail = format!(
        "{} heads: max additivity error {worst_add:.1e}, {} non-decreasing buckets",
        config.encoder.layers * config.encoder.heads,
        broken.len()
    );
    if let Some(b) = broken.first() {
        detail += &format!(" (first: {b})");
    }
    verdict(worst_add < 1e-9 && broken.is_empty(), detail)
}

// ---------------------------------------------------------------- 9

fn exhaustive_argmax(phases: &[Vec<usize>], q: &[MovementQueue]) -> usize {
    let p: Vec<f64> = phases
        .iter()
        .map(|ms| ms.iter().fold(0.0, |acc, &m| acc + (q[m].upstream - q[m].downstream)))
        .collect();
    // first index attaining the maximum
    let best = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    p.iter().position(|&v| v == best).unwrap()
}

fn controller_oracles() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut wrong = 0;
    let mut shift_broken = 0;
    let instances = 1000;
    for _ in 0..instances {
        let phase_count = rng.random_range(2..=6);
        let phases: Vec<Vec<usize>> = (0..phase_count)
            .map(|_| {
                let mut ms: Vec<usize> = (0..12).collect();
                ms.shuffle(&mut rng);
                ms.truncate(rng.random_range(1..=4));
                ms
            })
            .collect();
        let nodes = rng.random_range(1..=5);
        let queues: Vec<Vec<MovementQueue>> = (0..nodes)
            .map(|_| {
                (0..12)
                    .map(|_| MovementQueue {
                        upstream: rng.random_range(0..6) as f64,
                        downstream: rng.random_range(0..6) as f64,
                    })
                    .collect()
            })
            .collect();
        let got = max_pressure_act(&phases, &queues);
        let expected: Vec<usize> = queues.iter().map(|q| exhaustive_argmax(&phases, q)).collect();
        if got != expected {
            wrong += 1;
        }
        // the same offset on both sides of every movement leaves every pressure unchanged
        let c = rng.random_range(1..50) as f64;
        let shifted: Vec<Vec<MovementQueue>> = queues
            .iter()
            .map(|q| {
                q.iter()
                    .map(|m| MovementQueue {
                        upstream: m.upstream + c,
                        downstream: m.downstream + c,
                    })
                    .collect()
            })
            .collect();
        if max_pressure_act(&phases, &shifted) != got {
            shift_broken += 1;
        }
    }
    verdict(
        wrong == 0 && shift_broken == 0,
        format!("{instances} instances: {wrong} oracle mismatches, {shift_broken} shift violations"),
    )
}

// ----------------------------------------------------------------

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wants = |k: usize| selected.is_empty() || selected.contains(&k);
    let mut full_runs: Option<Vec<Run>> = None;
    let mut failed = 0;
    for k in 1..=9 {
        if !wants(k) {
            continue;
        }
        let (name, result) = match k {
            1 => ("gradient integrity", gradient_integrity()),
            2 => ("causal mask", causal_mask_suite()),
            3 => ("pre-fit fidelity", prefit_fidelity()),
            4 => ("simulator laws", simulator_laws()),
            5 => ("baseline ordering", baseline_ordering()),
            6 => ("learning efficacy", learning_efficacy(&mut full_runs)),
            7 => ("ablation trend", ablation_trend(&mut full_runs)),
            8 => ("attention decomposition", attention_decomposition()),
            _ => ("controller oracles", controller_oracles()),
        };
        let v = result.unwrap_or_else(|e| Verdict {
            pass: false,
            detail: format!("error: {e:#}"),
        });
        if !v.pass {
            failed += 1;
        }
        println!("criterion {k} {name}: {} ({})", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
