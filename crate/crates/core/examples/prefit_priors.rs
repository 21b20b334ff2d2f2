//! Pre-fits the physical priors of a desk-size model and prints how closely
//! the decay nets follow their `-k x²` targets.

use dept::attention::{PrefitConfig, PriorParams};
use dept::trainer::TrainConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let seed: u64 = std::env::args().nth(1).map_or(Ok(0), |s| s.parse())?;
    let encoder = TrainConfig::default().encoder;
    let config = PrefitConfig::default();
    let mut store = dept::numerics::ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (priors, report) = PriorParams::prefitted(
        &mut store,
        9,
        encoder.d_model,
        encoder.layers,
        encoder.heads,
        encoder.t_max,
        &config,
        &mut rng,
    );

    println!("{} heads pre-fitted in {:.2?} (converged: {})", priors.heads().len(), report.elapsed, report.converged);
    for (k, ((g, s), (o, d))) in report
        .gamma_mse
        .iter()
        .zip(&report.sigma_mse)
        .zip(report.nu_origin_mean.iter().zip(&report.nu_dest_mean))
        .enumerate()
    {
        println!("head {k}: gamma mse {g:.2e}  sigma mse {s:.2e}  nu_o {o:.3}  nu_d {d:.3}");
    }

    let head = priors.head(0, 0);
    println!("\n   x    gamma(x)   target");
    for i in -4..=4 {
        let x = i as f64 * 0.5;
        println!("{x:>5.1} {:>10.4} {:>8.4}", head.cone_decay(&store, x), config.target(x));
    }
    println!("\nlag gap  sigma");
    for gap in 0..encoder.t_max {
        println!("{gap:>7} {:>7.4}", head.time_decay(&store, priors.scale.normalize_lag(gap)));
    }
    Ok(())
}
