//! Paints stripes on one reconstruction and carries them to every other
//! instance through the shared canonical space.

use topofield::extraction::{export_mesh, paint_stripes, texture_transfer};
use topofield::synthdata::Dataset;
use topofield::trainer::latest_model;

fn main() -> topofield::Result<()> {
    let root = std::env::temp_dir().join("topofield_curriculum");
    let ds = Dataset::load(&root.join("data"))?;
    let (model, meta) = latest_model(&root.join("run"))?;
    let out = root.join("transfer");
    std::fs::create_dir_all(&out)?;

    let views = ds.first_views();
    let reconstruct = |i: usize| -> topofield::Result<_> {
        let fields = model.fields(&model.latent_for(views[i])?, meta.mode)?;
        model.reconstruct(&fields, 64)
    };
    let source = reconstruct(0)?;
    if source.mesh.is_empty() {
        println!("source reconstruction is empty; train longer first");
        return Ok(());
    }
    let painted = paint_stripes(&source.mesh, 1, 8)?;
    export_mesh(&painted, &out.join("source_painted.obj"))?;

    for i in 1..views.len() {
        let target = reconstruct(i)?;
        if target.mesh.is_empty() {
            println!("{}: empty reconstruction, skipped", views[i].instance_id);
            continue;
        }
        let moved = texture_transfer(&painted, &source.canonical, &target.mesh, &target.canonical)?;
        let path = out.join(format!("{}_from_{}.obj", views[i].instance_id, views[0].instance_id));
        export_mesh(&moved, &path)?;
        println!("{} ({} vertices) -> {}", views[i].instance_id, moved.vertices.len(), path.display());
    }
    Ok(())
}
