//! The full 0a → 1 → 0b → 2 curriculum on a small genus-mixed dataset.
//! Checkpoints go to `$TMP/topofield_curriculum/run`; the `reconstruct`
//! and `texture_transfer` examples read them from there.
//!
//! cargo run --release --example train_curriculum -- 1500 1500

use std::time::Instant;

use topofield::nets::NetConfig;
use topofield::synthdata::{generate_dataset, Dataset, GenConfig};
use topofield::trainer::{Phase, TrainConfig, Trainer};

fn main() -> topofield::Result<()> {
    let _ = env_logger::builder().filter_level(log::LevelFilter::Info).try_init();
    let mut args = std::env::args().skip(1).map(|s| s.parse::<usize>().ok());
    let direct = args.next().flatten().unwrap_or(1500);
    let deform = args.next().flatten().unwrap_or(1500);
    let root = std::env::temp_dir().join("topofield_curriculum");
    let data = root.join("data");
    if !data.join("manifest.json").exists() {
        let gen = GenConfig {
            seed: 7,
            count: 8,
            genus_mix: 0.5,
            resolution: 48,
            views_per_instance: 1,
        };
        generate_dataset(&gen, &data, None)?;
    }
    let ds = Dataset::load(&data)?;

    let mut cfg = TrainConfig {
        resolution: 48,
        net: NetConfig {
            k: 4,
            latent_dim: 32,
            trunk_width: 64,
            trunk_depth: 3,
            hyper_hidden: 32,
            encoder_channels: vec![8, 16, 32, 32, 32],
            ..NetConfig::default()
        },
        rays_per_iteration: 256,
        omega_samples: 128,
        ..TrainConfig::default()
    };
    cfg.iterations.direct = direct;
    cfg.iterations.deform = deform;

    // rerunning picks up from the last checkpoint of each stage
    let mut trainer = Trainer::new(cfg, &root.join("run"))?;
    for phase in Phase::ORDER {
        let t0 = Instant::now();
        let s = trainer.run_phase(phase, Some(&ds), true)?;
        if s.skipped {
            println!("stage {:>2}: already complete", phase.name());
            continue;
        }
        let last = s.history.last().cloned().unwrap_or_default();
        println!(
            "stage {:>2}: {:5} iterations {:6.1}s  total {:.4}  rgb {:.4} sdf {:.4} dt {:.4} eik {:.4} def {:.4}",
            phase.name(),
            s.iterations,
            t0.elapsed().as_secs_f64(),
            last.total,
            last.rgb,
            last.sdf,
            last.dt,
            last.eik,
            last.def
        );
    }
    println!("loss log: {}", trainer.log_path().display());
    Ok(())
}
