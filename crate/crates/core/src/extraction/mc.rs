use std::collections::HashMap;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::renderer::Vec3;

use super::grid::GridField;
use super::mesh::Mesh;

/// Cube corner `c` sits at offset `(c & 1, c >> 1 & 1, c >> 2 & 1)`.
fn corner_offset(c: usize) -> [usize; 3] {
    [c & 1, (c >> 1) & 1, (c >> 2) & 1]
}

/// The twelve cube edges as `(low corner, high corner)`.
fn cube_edges() -> Vec<(usize, usize)> {
    let mut edges = Vec::with_capacity(12);
    for bit in [1usize, 2, 4] {
        for c in 0..8 {
            if c & bit == 0 {
                edges.push((c, c | bit));
            }
        }
    }
    edges
}

/// Corners of each face, counter-clockwise seen from outside the cube.
fn cube_faces() -> Vec<[usize; 4]> {
    let mut faces = Vec::with_capacity(6);
    for axis in 0..3 {
        for side in 0..2 {
            let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
            // u × v = +axis, so swap for the negative side
            let (u, v) = if side == 1 { (u, v) } else { (v, u) };
            let mut corners: Vec<usize> = (0..8).filter(|&c| corner_offset(c)[axis] == side).collect();
            corners.sort_by(|&a, &b| {
                let ang = |c: usize| {
                    let o = corner_offset(c);
                    (o[v] as f64 - 0.5).atan2(o[u] as f64 - 0.5)
                };
                ang(a).total_cmp(&ang(b))
            });
            faces.push([corners[0], corners[1], corners[2], corners[3]]);
        }
    }
    faces
}

/// Per case, the closed polygons of crossed edges. Each face's contour is
/// resolved on its own, always separating the negative corners of an
/// ambiguous face, so neighbouring cubes agree on every shared face.
pub(crate) fn case_table() -> &'static Vec<Vec<Vec<usize>>> {
    static TABLE: OnceLock<Vec<Vec<Vec<usize>>>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let edges = cube_edges();
        let edge_of = |a: usize, b: usize| {
            edges
                .iter()
                .position(|&(x, y)| (x, y) == (a.min(b), a.max(b)))
                .expect("cube edge")
        };
        let faces = cube_faces();
        (0..256usize)
            .map(|case| {
                let neg = |c: usize| case >> c & 1 == 1;
                let mut next = [usize::MAX; 12];
                for f in &faces {
                    let exit = |i: usize| neg(f[i]) && !neg(f[(i + 1) % 4]);
                    let entry = |i: usize| !neg(f[i]) && neg(f[(i + 1) % 4]);
                    for i in (0..4).filter(|&i| exit(i)) {
                        let j = (1..4).map(|s| (i + 4 - s) % 4).find(|&j| entry(j)).expect("entry edge");
                        next[edge_of(f[i], f[(i + 1) % 4])] = edge_of(f[j], f[(j + 1) % 4]);
                    }
                }
                let mut seen = [false; 12];
                let mut loops = Vec::new();
                for start in 0..12 {
                    if next[start] == usize::MAX || seen[start] {
                        continue;
                    }
                    let mut lp = Vec::new();
                    let mut e = start;
                    while !seen[e] {
                        seen[e] = true;
                        lp.push(e);
                        e = next[e];
                    }
                    loops.push(lp);
                }
                loops
            })
            .collect()
    })
}

/// Extracts the `iso` level set. Values below `iso` are inside.
pub fn marching_cubes(grid: &GridField, iso: f64) -> Result<Mesh> {
    if let Some(i) = grid.values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("grid value #{i}")));
    }
    let r = grid.resolution;
    let table = case_table();
    let edges = cube_edges();
    let mut index: HashMap<[u64; 3], u32> = HashMap::new();
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();
    let mut ids = [0u32; 12];
    for k in 0..r.saturating_sub(1) {
        for j in 0..r - 1 {
            for i in 0..r - 1 {
                let corner = |c: usize| {
                    let o = corner_offset(c);
                    (i + o[0], j + o[1], k + o[2])
                };
                let mut case = 0usize;
                for c in 0..8 {
                    let (x, y, z) = corner(c);
                    if grid.get(x, y, z) < iso {
                        case |= 1 << c;
                    }
                }
                if case == 0 || case == 255 {
                    continue;
                }
                for lp in &table[case] {
                    for &e in lp {
                        let (a, b) = edges[e];
                        let (pa, pb) = (corner(a), corner(b));
                        let va = grid.get(pa.0, pa.1, pa.2);
                        let vb = grid.get(pb.0, pb.1, pb.2);
                        let t = (iso - va) / (vb - va);
                        let xa = grid.position(pa.0, pa.1, pa.2);
                        let xb = grid.position(pb.0, pb.1, pb.2);
                        let p = [xa[0] + t * (xb[0] - xa[0]), xa[1] + t * (xb[1] - xa[1]), xa[2] + t * (xb[2] - xa[2])];
                        let key = p.map(f64::to_bits);
                        ids[e] = *index.entry(key).or_insert_with(|| {
                            vertices.push(p);
                            (vertices.len() - 1) as u32
                        });
                    }
                    // reversed fan so normals point toward increasing values
                    for w in 1..lp.len() - 1 {
                        triangles.push([ids[lp[0]], ids[lp[w + 1]], ids[lp[w]]]);
                    }
                }
            }
        }
    }
    let mut mesh = Mesh::new(vertices, triangles);
    mesh.cleanup();
    Ok(mesh)
}
