//! Central-difference check of every gradient of a two-node model.

use dept::encoder::{check_model_gradients, gradient_check_setup};

fn main() -> anyhow::Result<()> {
    let (config, graph) = gradient_check_setup();
    for seed in 0..5 {
        let report = check_model_gradients(config.clone(), graph.clone(), seed)?;
        println!(
            "seed {seed}: max relative error {:.3e} over {} coordinates, worst {:?}",
            report.max_rel_error, report.coordinates, report.worst
        );
    }
    Ok(())
}
