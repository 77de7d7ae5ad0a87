//! Stage 0a: fit the shape generator to a sphere of radius 0.5 and
//! measure the residual on fresh points.

use std::time::Instant;

use topofield::nets::NetConfig;
use topofield::trainer::{Phase, TrainConfig, Trainer};

fn main() -> topofield::Result<()> {
    let _ = env_logger::builder().filter_level(log::LevelFilter::Info).try_init();
    let cfg = TrainConfig {
        net: NetConfig {
            latent_dim: 32,
            trunk_width: 64,
            trunk_depth: 3,
            hyper_hidden: 32,
            ..NetConfig::default()
        },
        omega_samples: 128,
        ..TrainConfig::default()
    };
    let run = std::env::temp_dir().join("topofield_sphere");
    let _ = std::fs::remove_dir_all(&run);
    let mut trainer = Trainer::new(cfg, &run)?;

    let t0 = Instant::now();
    let summary = trainer.run_phase(Phase::Sphere, None, false)?;
    let first = summary.history.first().map(|r| r.total).unwrap_or(f64::NAN);
    let last = summary.history.last().map(|r| r.total).unwrap_or(f64::NAN);
    println!(
        "{} iterations in {:.1}s, loss {first:.4} -> {last:.6}",
        summary.iterations,
        t0.elapsed().as_secs_f64()
    );
    println!("MAE over 10k uniform points: {:.4}", trainer.pretrain_mae(Phase::Sphere, 10_000)?);
    Ok(())
}
