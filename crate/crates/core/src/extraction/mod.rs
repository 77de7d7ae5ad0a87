//! Dense SDF grids, marching cubes, mesh I/O and canonical-space
//! correspondences (colour coding and texture transfer).

mod grid;
mod mc;
mod mesh;

pub use grid::GridField;
pub use mc::marching_cubes;
pub use mesh::{
    euler_characteristic, export_mesh, export_mesh_with_comments, import_mesh, obj_bytes, ply_bytes, read_obj, read_ply, sample_surface_points,
    sample_surface_points_seeded, EulerReport, Mesh, MeshFormat,
};

use crate::error::{Error, Result};
use crate::renderer::Vec3;
use crate::spatial::KdTree;

/// Vertex colours `(x_canonical + 1)/2`, clamped to `[0, 1]`.
pub fn canonical_colors(mesh: &Mesh, canonical: &[Vec3]) -> Result<Mesh> {
    if canonical.len() != mesh.vertices.len() {
        return Err(Error::shape("canonical_colors", mesh.vertices.len().to_string(), canonical.len().to_string()));
    }
    let mut out = mesh.clone();
    out.colors = Some(canonical.iter().map(|c| c.map(|v| ((v + 1.0) / 2.0).clamp(0.0, 1.0))).collect());
    Ok(out)
}

pub const STRIPE_COLORS: [Vec3; 2] = [[0.9, 0.15, 0.1], [0.95, 0.95, 0.9]];

/// Paints alternating bands of width `2/stripes` along `axis` over `[−1, 1]`.
pub fn paint_stripes(mesh: &Mesh, axis: usize, stripes: usize) -> Result<Mesh> {
    if axis > 2 || stripes == 0 {
        return Err(Error::Invalid(format!("stripe axis {axis} / count {stripes}")));
    }
    let mut out = mesh.clone();
    out.colors = Some(mesh.vertices.iter().map(|v| STRIPE_COLORS[stripe_index(v[axis], stripes) % 2]).collect());
    Ok(out)
}

pub fn stripe_index(x: f64, stripes: usize) -> usize {
    (((x + 1.0) / 2.0 * stripes as f64).floor().max(0.0) as usize).min(stripes - 1)
}

/// Colours every target vertex with the colour of the source vertex nearest
/// in canonical 3D coordinates (ties to the lowest source index).
pub fn texture_transfer(source: &Mesh, source_canonical: &[Vec3], target: &Mesh, target_canonical: &[Vec3]) -> Result<Mesh> {
    let colors = source
        .colors
        .as_ref()
        .ok_or_else(|| Error::Invalid("texture source has no vertex colours".into()))?;
    if source.vertices.is_empty() {
        return Err(Error::Invalid("texture source mesh is empty".into()));
    }
    if source_canonical.len() != source.vertices.len() || target_canonical.len() != target.vertices.len() {
        return Err(Error::Invalid("canonical coordinates do not match mesh vertices".into()));
    }
    let tree = KdTree::new(source_canonical);
    let mut out = target.clone();
    out.colors = Some(
        target_canonical
            .iter()
            .map(|&q| colors[tree.nearest(q).expect("non-empty tree").0])
            .collect(),
    );
    Ok(out)
}
