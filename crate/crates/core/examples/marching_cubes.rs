//! Extracts meshes from analytic SDF grids and reports their topology.

use topofield::extraction::{euler_characteristic, export_mesh, marching_cubes, GridField};

fn main() -> topofield::Result<()> {
    let shapes: [(&str, fn([f64; 3]) -> f64); 3] = [
        ("sphere", |x| (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt() - 0.5),
        ("torus", |x| {
            let ring = (x[0] * x[0] + x[2] * x[2]).sqrt() - 0.5;
            (ring * ring + x[1] * x[1]).sqrt() - 0.2
        }),
        // two balls: χ adds up
        ("pair", |x| {
            let a = ((x[0] - 0.5).powi(2) + x[1] * x[1] + x[2] * x[2]).sqrt() - 0.3;
            let b = ((x[0] + 0.5).powi(2) + x[1] * x[1] + x[2] * x[2]).sqrt() - 0.3;
            a.min(b)
        }),
    ];
    for (name, f) in shapes {
        for res in [32, 64] {
            let grid = GridField::sample(res, 4096, |pts| Ok(pts.iter().map(|&p| f(p)).collect()))?;
            let mesh = marching_cubes(&grid, 0.0)?;
            let e = euler_characteristic(&mesh);
            println!(
                "{name:6} {res:3}³: {:6} vertices {:6} triangles, χ = {}, components {}, open edges {}",
                mesh.vertices.len(),
                mesh.triangles.len(),
                e.value,
                mesh.components(),
                e.non_manifold_edges
            );
            if res == 64 {
                let path = std::env::temp_dir().join(format!("topofield_{name}.obj"));
                export_mesh(&mesh, &path)?;
            }
        }
    }
    Ok(())
}
