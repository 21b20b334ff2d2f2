//! Splits one head's attention scores into cone, time+LUT and query-key
//! parts on a freshly pre-fitted 3×3 model, then averages the prior score by
//! causal deviation to show the space-time cone.
//!
//! `cargo run --release --example attention_decomposition -- [block] [head] [step]`

use std::collections::BTreeMap;

use dept::controllers::MaxPressure;
use dept::sim::{FlowPreset, Scenario, DECISION_INTERVAL};
use dept::trainer::{build_model, collect_round, mean_speed, Behavior, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let arg = |i: usize, d: usize| std::env::args().nth(i).map_or(Ok(d), |s| s.parse());
    let (block, head, step) = (arg(1, 0)?, arg(2, 0)?, arg(3, 30)?);
    let config = TrainConfig::default();
    let scenario = Scenario::grid(3, 3, FlowPreset::GridBi);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (model, store, _) = build_model(&config, &scenario, &mut rng)?;

    let t_max = model.config.t_max;
    let mut sim = scenario.simulation(0)?;
    let ep = collect_round(Behavior::Teacher(&mut MaxPressure), &mut sim, step as u64 * DECISION_INTERVAL, t_max)?;
    let (_, dump) = model.attention_components(&store, &ep.history(step, t_max), block, head)?;

    let n = model.num_nodes();
    let graph = model.graph();
    let mut worst: f64 = 0.0;
    // (lag gap, |ε| in meters) -> (sum of prior scores, count)
    let mut cone: BTreeMap<(usize, i64), (f64, usize)> = BTreeMap::new();
    for q in 0..dump.total.rows() {
        for k in 0..dump.total.cols() {
            if dump.mask.is_masked(q, k) {
                continue;
            }
            let prior = dump.cone.get(q, k) + dump.time_lut.get(q, k);
            worst = worst.max((prior + dump.residual.get(q, k) - dump.total.get(q, k)).abs());
            let gap = k / n - q / n;
            let eps = mean_speed() * gap as f64 - graph.distance(q % n, k % n);
            let e = cone.entry((gap, eps.abs().round() as i64)).or_default();
            e.0 += prior;
            e.1 += 1;
        }
    }
    println!("block {block} head {head} step {step}: max additivity error {worst:.2e}");
    println!("gap  |eps| (m)  pairs  mean prior score");
    for ((gap, eps), (sum, count)) in &cone {
        println!("{gap:>3} {eps:>10} {count:>6} {:>17.4}", sum / *count as f64);
    }
    Ok(())
}
