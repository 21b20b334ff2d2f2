//! Trains DePT on a small Grid-Bi network and prints the learning curve.
//!
//! `cargo run --release --example train_grid -- [ablation] [seed] [il_rounds] [rl_rounds]`

use std::time::Instant;

use dept::controllers::{run_episode, FixedTime, MaxPressure};
use dept::sim::{FlowPreset, Scenario, Simulation};
use dept::trainer::{eval_seed, train_with, AblationFlags, TrainConfig};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let ablation: AblationFlags = args.first().map_or(Ok(AblationFlags::FULL), |s| s.parse())?;
    let seed: u64 = args.get(1).map_or(Ok(0), |s| s.parse())?;
    let mut config = TrainConfig { ablation, ..TrainConfig::default() };
    if let Some(il) = args.get(2) {
        config.schedule.il_rounds = il.parse()?;
    }
    if let Some(rl) = args.get(3) {
        config.schedule.total_rounds = config.schedule.il_rounds + rl.parse::<usize>()?;
    }
    let scenario = Scenario { duration: config.schedule.round_duration, ..Scenario::grid(3, 3, FlowPreset::GridBi) };
    let network = scenario.network()?;

    let duration = config.schedule.round_duration;
    let mut ft = FixedTime::for_network(&network)?;
    let ft_m = run_episode(&mut ft, &mut Simulation::new(network.clone(), eval_seed(seed)), duration)?;
    let mp_m = run_episode(&mut MaxPressure, &mut Simulation::new(network.clone(), eval_seed(seed)), duration)?;
    println!("fixed-time AvgTT {:.2}  max-pressure AvgTT {:.2}", ft_m.avg_travel_time, mp_m.avg_travel_time);

    let start = Instant::now();
    println!("round stage     loss  AvgTT(s)  AvgQue  epsilon  elapsed");
    let outcome = train_with(&config, &scenario, seed, |p| {
        println!(
            "{:>5} {:<5} {:>8.4} {:>9.2} {:>7.3} {:>8.3} {:>7.1}s",
            p.round,
            p.stage,
            p.loss,
            p.avg_travel_time,
            p.avg_queue,
            p.epsilon,
            start.elapsed().as_secs_f64()
        );
    })?;
    if let Some(report) = &outcome.prefit {
        println!("prefit worst decay MSE {:.2e} in {:.2?}", report.worst_decay_mse(), report.elapsed);
    }
    let last = outcome.curve.last().map_or(f64::NAN, |p| p.avg_travel_time);
    println!("final DePT AvgTT {last:.2} ({:.3}× max-pressure, {:.3}× fixed-time)", last / mp_m.avg_travel_time, last / ft_m.avg_travel_time);
    Ok(())
}
