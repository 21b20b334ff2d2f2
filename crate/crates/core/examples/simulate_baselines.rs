//! Fixed-Time vs Max-Pressure on a Grid-Bi network.
//!
//! `cargo run --example simulate_baselines -- [rows] [cols] [seconds] [seeds]`

use dept::controllers::{run_episode, Controller, FixedTime, MaxPressure};
use dept::sim::{FlowPreset, Scenario};

fn main() -> anyhow::Result<()> {
    let args: Vec<u64> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    let get = |i: usize, d: u64| args.get(i).copied().unwrap_or(d);
    let (rows, cols, duration, seeds) = (get(0, 6) as usize, get(1, 6) as usize, get(2, 3600), get(3, 5));
    let scenario = Scenario { duration, ..Scenario::grid(rows, cols, FlowPreset::GridBi) };
    let net = scenario.network()?;

    println!("seed  controller     AvgTT(s)  AvgQue  served");
    for seed in 0..seeds {
        let mut controllers: Vec<Box<dyn Controller>> = vec![Box::new(FixedTime::for_network(&net)?), Box::new(MaxPressure)];
        for c in controllers.iter_mut() {
            let mut sim = scenario.simulation(seed)?;
            let m = run_episode(c.as_mut(), &mut sim, duration)?;
            println!("{seed:>4}  {:<13} {:>9.2}  {:>6.3}  {:>6}", c.name(), m.avg_travel_time, m.avg_queue, m.exited);
        }
    }
    Ok(())
}
