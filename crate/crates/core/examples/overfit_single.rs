//! Stages 0a and 1 on a single torus seen from many views, then rendering
//! silhouettes from views that were held out of training.
//!
//! cargo run --release --example overfit_single -- 3000

use std::time::Instant;

use topofield::nets::NetConfig;
use topofield::synthdata::{generate_dataset, Dataset, GenConfig};
use topofield::trainer::{silhouette_iou, FieldMode, Phase, TrainConfig, Trainer};

fn main() -> topofield::Result<()> {
    let _ = env_logger::builder().filter_level(log::LevelFilter::Info).try_init();
    let iterations = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3000);
    let root = std::env::temp_dir().join("topofield_overfit");
    let _ = std::fs::remove_dir_all(&root);

    let gen = GenConfig {
        seed: 1,
        count: 1,
        genus_mix: 1.0,
        resolution: 48,
        views_per_instance: 36,
    };
    generate_dataset(&gen, &root.join("data"), None)?;
    let mut train = Dataset::load(&root.join("data"))?;
    let held_out = train.samples.split_off(32);

    let mut cfg = TrainConfig {
        resolution: 48,
        net: NetConfig {
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
    cfg.iterations.direct = iterations;
    let mut trainer = Trainer::new(cfg, &root.join("run"))?;
    let t0 = Instant::now();
    trainer.run_phase(Phase::Sphere, None, false)?;
    let s = trainer.run_phase(Phase::Direct, Some(&train), false)?;
    println!("trained {} iterations in {:.0}s", s.iterations, t0.elapsed().as_secs_f64());

    let model = &trainer.model;
    for v in &held_out {
        let fields = model.fields(&model.encode(v)?, FieldMode::Direct)?;
        let r = model.render(&fields, &v.camera)?;
        println!("{}: silhouette IoU {:.3}", v.sample_id, silhouette_iou(&r.silhouette, &v.mask));
    }
    Ok(())
}
