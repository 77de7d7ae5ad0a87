//! Generates a small synthetic dataset of sphere- and torus-family shapes
//! and prints what was written.
//!
//! cargo run --release --example gen_data -- /tmp/topofield_data 8

use std::path::PathBuf;

use topofield::synthdata::{generate_dataset, Dataset, GenConfig};

fn main() -> topofield::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("topofield_data"));
    let count = args.next().and_then(|s| s.parse().ok()).unwrap_or(8);
    if out.exists() {
        std::fs::remove_dir_all(&out)?;
    }
    let cfg = GenConfig {
        seed: 7,
        count,
        genus_mix: 0.5,
        resolution: 48,
        views_per_instance: 2,
    };
    let manifest = generate_dataset(&cfg, &out, None)?;
    println!("{} instances in {}", manifest.instances.len(), out.display());

    let ds = Dataset::load(&out)?;
    for s in ds.first_views() {
        println!(
            "{}  genus {}  foreground {:4} px  camera distance {:.2}",
            s.sample_id,
            s.spec.genus,
            s.foreground_pixels(),
            s.camera.distance()
        );
    }
    Ok(())
}
