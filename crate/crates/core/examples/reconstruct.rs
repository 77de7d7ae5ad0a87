//! Meshes every training image of the `train_curriculum` run, writes OBJ
//! files with canonical-space colours and depth maps, and scores them
//! against the analytic shapes.

use topofield::cli::{compare_meshes, ground_truth_mesh, EvalConfig};
use topofield::extraction::{euler_characteristic, export_mesh};
use topofield::renderer::write_depth_png;
use topofield::synthdata::Dataset;
use topofield::trainer::latest_model;

fn main() -> topofield::Result<()> {
    let root = std::env::temp_dir().join("topofield_curriculum");
    let ds = Dataset::load(&root.join("data"))?;
    let (model, meta) = latest_model(&root.join("run"))?;
    println!("checkpoint: stage {} iteration {}", meta.phase.name(), meta.iteration);
    let out = root.join("meshes");
    std::fs::create_dir_all(&out)?;
    let eval = EvalConfig::default();

    for (i, s) in ds.first_views().into_iter().enumerate() {
        let fields = model.fields(&model.latent_for(s)?, meta.mode)?;
        let rec = model.reconstruct(&fields, 64)?;
        let mesh = &rec.mesh;
        let chi = euler_characteristic(mesh).value;
        let chamfer = if mesh.is_empty() {
            f64::NAN
        } else {
            compare_meshes(mesh, &ground_truth_mesh(&s.spec, eval.gt_resolution)?, &eval, i as u64)?.chamfer_overall
        };
        println!(
            "{}: genus {} → χ {chi:3}, {} components, chamfer {chamfer:.4}",
            s.instance_id,
            s.spec.genus,
            mesh.components()
        );
        export_mesh(mesh, &out.join(format!("{}.obj", s.sample_id)))?;

        let r = model.render(&fields, &s.camera)?;
        let d = s.camera.distance();
        write_depth_png(&out.join(format!("{}_depth.png", s.sample_id)), &r.depth, r.width, r.height, d - 1.0, d + 1.0)?;
    }
    println!("wrote {}", out.display());
    Ok(())
}
