//! Chamfer, EMD and F-score between point clouds sampled from two meshes.

use topofield::extraction::{marching_cubes, sample_surface_points_seeded, GridField};
use topofield::metrics::{evaluate, normalize_to_unit_cube};

fn ball(r: f64) -> topofield::Result<topofield::extraction::Mesh> {
    let grid = GridField::sample(48, 4096, |pts| Ok(pts.iter().map(|x| (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt() - r).collect()))?;
    marching_cubes(&grid, 0.0)
}

fn main() -> topofield::Result<()> {
    let reference = sample_surface_points_seeded(&ball(0.5)?, 2048, 1)?;
    let torus = {
        let grid = GridField::sample(48, 4096, |pts| {
            Ok(pts
                .iter()
                .map(|x| {
                    let ring = (x[0] * x[0] + x[2] * x[2]).sqrt() - 0.5;
                    (ring * ring + x[1] * x[1]).sqrt() - 0.2
                })
                .collect())
        })?;
        marching_cubes(&grid, 0.0)?
    };
    let candidates = [
        ("same sphere, new samples", sample_surface_points_seeded(&ball(0.5)?, 2048, 2)?),
        ("smaller sphere", sample_surface_points_seeded(&ball(0.3)?, 2048, 3)?),
        ("torus", sample_surface_points_seeded(&torus, 2048, 4)?),
    ];
    let gt = normalize_to_unit_cube(&reference)?;
    println!("{:28} {:>8} {:>8} {:>8} {:>8} {:>6}", "", "acc", "cov", "overall", "emd", "F");
    for (name, pts) in candidates {
        // normalisation removes the scale difference of the small sphere
        let m = evaluate(&normalize_to_unit_cube(&pts)?, &gt, 0.1, 512)?;
        println!(
            "{name:28} {:8.4} {:8.4} {:8.4} {:8.4} {:6.3}",
            m.chamfer_acc, m.chamfer_cov, m.chamfer_overall, m.emd, m.fscore
        );
    }
    Ok(())
}
