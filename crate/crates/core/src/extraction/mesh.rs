use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::renderer::{cross, norm, sub, Vec3};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    /// Per-vertex colours in `[0, 1]`.
    pub colors: Option<Vec<Vec3>>,
}

/// Euler characteristic with the count of edges not shared by exactly two
/// triangles.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EulerReport {
    pub value: i64,
    pub non_manifold_edges: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Ply,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref() {
            Some("obj") => Ok(MeshFormat::Obj),
            Some("ply") => Ok(MeshFormat::Ply),
            _ => Err(Error::Invalid(format!("unknown mesh extension: {}", path.display()))),
        }
    }
}

impl Mesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Self {
        Mesh {
            vertices,
            triangles,
            colors: None,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle_area(&self, t: &[u32; 3]) -> f64 {
        let [a, b, c] = t.map(|i| self.vertices[i as usize]);
        0.5 * norm(cross(sub(b, a), sub(c, a)))
    }

    pub fn area(&self) -> f64 {
        self.triangles.iter().map(|t| self.triangle_area(t)).sum()
    }

    /// Signed enclosed volume; positive when triangles wind outward.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| self.vertices[i as usize]);
                crate::renderer::dot(a, cross(b, c)) / 6.0
            })
            .sum()
    }

    /// Drops degenerate triangles and unreferenced vertices.
    pub fn cleanup(&mut self) {
        let tris: Vec<[u32; 3]> = self
            .triangles
            .iter()
            .copied()
            .filter(|t| t[0] != t[1] && t[1] != t[2] && t[0] != t[2] && self.triangle_area(t) > 0.0)
            .collect();
        let mut remap = vec![u32::MAX; self.vertices.len()];
        let mut verts = Vec::new();
        let mut cols = Vec::new();
        for t in &tris {
            for &i in t {
                if remap[i as usize] == u32::MAX {
                    remap[i as usize] = verts.len() as u32;
                    verts.push(self.vertices[i as usize]);
                    if let Some(c) = &self.colors {
                        cols.push(c[i as usize]);
                    }
                }
            }
        }
        self.triangles = tris.iter().map(|t| t.map(|i| remap[i as usize])).collect();
        self.vertices = verts;
        if self.colors.is_some() {
            self.colors = Some(cols);
        }
    }

    fn edge_counts(&self) -> HashMap<(u32, u32), usize> {
        let mut edges = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        edges
    }

    /// True when every edge is shared by exactly two triangles.
    pub fn is_closed(&self) -> bool {
        !self.triangles.is_empty() && self.edge_counts().values().all(|&c| c == 2)
    }

    /// Number of edge-connected triangle components.
    pub fn components(&self) -> usize {
        let mut parent: Vec<usize> = (0..self.vertices.len()).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for t in &self.triangles {
            for k in 1..3 {
                let a = find(&mut parent, t[0] as usize);
                let b = find(&mut parent, t[k] as usize);
                parent[a.max(b)] = a.min(b);
            }
        }
        let mut roots: Vec<usize> = self.triangles.iter().map(|t| find(&mut parent, t[0] as usize)).collect();
        roots.sort_unstable();
        roots.dedup();
        roots.len()
    }
}

/// `V − E + F` with `E` the unique undirected edges.
pub fn euler_characteristic(mesh: &Mesh) -> EulerReport {
    let edges = mesh.edge_counts();
    let mut used = vec![false; mesh.vertices.len()];
    for t in &mesh.triangles {
        for &i in t {
            used[i as usize] = true;
        }
    }
    let v = used.iter().filter(|&&u| u).count() as i64;
    EulerReport {
        value: v - edges.len() as i64 + mesh.triangles.len() as i64,
        non_manifold_edges: edges.values().filter(|&&c| c != 2).count(),
    }
}

/// Area-weighted uniform samples on the surface.
pub fn sample_surface_points(mesh: &Mesh, count: usize, rng: &mut impl Rng) -> Result<Vec<Vec3>> {
    let mut cumulative = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for t in &mesh.triangles {
        total += mesh.triangle_area(t);
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::Invalid("cannot sample a mesh with zero surface area".into()));
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let r = rng.gen::<f64>() * total;
        let ti = cumulative.partition_point(|&c| c <= r).min(cumulative.len() - 1);
        let [a, b, c] = mesh.triangles[ti].map(|i| mesh.vertices[i as usize]);
        let s = rng.gen::<f64>().sqrt();
        let u = rng.gen::<f64>();
        let (wa, wb, wc) = (1.0 - s, s * (1.0 - u), s * u);
        out.push([
            wa * a[0] + wb * b[0] + wc * c[0],
            wa * a[1] + wb * b[1] + wc * c[1],
            wa * a[2] + wb * b[2] + wc * c[2],
        ]);
    }
    Ok(out)
}

/// Seeded variant of [`sample_surface_points`].
pub fn sample_surface_points_seeded(mesh: &Mesh, count: usize, seed: u64) -> Result<Vec<Vec3>> {
    sample_surface_points(mesh, count, &mut crate::rng::substream(seed, "surface", 0))
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn export_mesh(mesh: &Mesh, path: &Path) -> Result<()> {
    let bytes = match MeshFormat::from_path(path)? {
        MeshFormat::Obj => obj_bytes(mesh),
        MeshFormat::Ply => ply_bytes(mesh),
    };
    fs::write(path, bytes).map_err(|e| Error::Format(format!("cannot write {}: {e}", path.display())))
}

/// Like [`export_mesh`], with header comment lines (`#` in OBJ, `comment`
/// in PLY).
pub fn export_mesh_with_comments(mesh: &Mesh, path: &Path, comments: &[String]) -> Result<()> {
    let bytes = match MeshFormat::from_path(path)? {
        MeshFormat::Obj => {
            let mut out: Vec<u8> = comments.iter().flat_map(|c| format!("# {c}\n").into_bytes()).collect();
            out.extend(obj_bytes(mesh));
            out
        }
        MeshFormat::Ply => {
            let body = ply_bytes(mesh);
            // after "ply\nformat binary_little_endian 1.0\n"
            let cut = body.iter().enumerate().filter(|(_, &b)| b == b'\n').nth(1).map(|(i, _)| i + 1).unwrap();
            let mut out = body[..cut].to_vec();
            for c in comments {
                out.extend(format!("comment {c}\n").into_bytes());
            }
            out.extend(&body[cut..]);
            out
        }
    };
    fs::write(path, bytes).map_err(|e| Error::Format(format!("cannot write {}: {e}", path.display())))
}

pub fn import_mesh(path: &Path) -> Result<Mesh> {
    let f = fs::File::open(path).map_err(|e| Error::Format(format!("cannot open {}: {e}", path.display())))?;
    match MeshFormat::from_path(path)? {
        MeshFormat::Obj => read_obj(BufReader::new(f)),
        MeshFormat::Ply => read_ply(BufReader::new(f)),
    }
}

pub fn obj_bytes(mesh: &Mesh) -> Vec<u8> {
    let mut s = String::new();
    use std::fmt::Write as _;
    for (i, v) in mesh.vertices.iter().enumerate() {
        match &mesh.colors {
            Some(c) => {
                let c = c[i];
                let _ = writeln!(s, "v {} {} {} {} {} {}", v[0], v[1], v[2], c[0], c[1], c[2]);
            }
            None => {
                let _ = writeln!(s, "v {} {} {}", v[0], v[1], v[2]);
            }
        }
    }
    for t in &mesh.triangles {
        let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    s.into_bytes()
}

pub fn read_obj(r: impl BufRead) -> Result<Mesh> {
    let mut mesh = Mesh::default();
    let mut colors = Vec::new();
    for (ln, line) in r.lines().enumerate() {
        let line = line?;
        let mut it = line.split_whitespace();
        let bad = || Error::Format(format!("obj line {}: {line}", ln + 1));
        match it.next() {
            Some("v") => {
                let vals: Vec<f64> = it.map(|t| t.parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|_| bad())?;
                match vals.len() {
                    3 => mesh.vertices.push([vals[0], vals[1], vals[2]]),
                    6 => {
                        mesh.vertices.push([vals[0], vals[1], vals[2]]);
                        colors.push([vals[3], vals[4], vals[5]]);
                    }
                    _ => return Err(bad()),
                }
            }
            Some("f") => {
                let idx: Vec<u32> = it
                    .map(|t| t.split('/').next().unwrap_or("").parse::<u32>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad())?;
                if idx.len() != 3 || idx.iter().any(|&i| i == 0) {
                    return Err(bad());
                }
                mesh.triangles.push([idx[0] - 1, idx[1] - 1, idx[2] - 1]);
            }
            _ => {}
        }
    }
    if !colors.is_empty() {
        if colors.len() != mesh.vertices.len() {
            return Err(Error::Format("obj: colours on only some vertices".into()));
        }
        mesh.colors = Some(colors);
    }
    check_indices(&mesh)?;
    Ok(mesh)
}

fn check_indices(mesh: &Mesh) -> Result<()> {
    let n = mesh.vertices.len() as u32;
    if mesh.triangles.iter().flatten().any(|&i| i >= n) {
        return Err(Error::Format("face index out of range".into()));
    }
    Ok(())
}

pub fn ply_bytes(mesh: &Mesh) -> Vec<u8> {
    let mut out = Vec::new();
    let _ = write!(
        out,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n",
        mesh.vertices.len()
    );
    if mesh.colors.is_some() {
        let _ = write!(out, "property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    let _ = write!(
        out,
        "element face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.triangles.len()
    );
    for (i, v) in mesh.vertices.iter().enumerate() {
        for c in v {
            out.extend((*c as f32).to_le_bytes());
        }
        if let Some(c) = &mesh.colors {
            out.extend(c[i].map(to_u8));
        }
    }
    for t in &mesh.triangles {
        out.push(3);
        for &i in t {
            out.extend((i as i32).to_le_bytes());
        }
    }
    out
}

pub fn read_ply(mut r: impl BufRead) -> Result<Mesh> {
    let bad = |m: &str| Error::Format(format!("ply: {m}"));
    let mut line = String::new();
    let (mut nv, mut nf, mut has_color) = (None, None, false);
    let mut first = true;
    loop {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(bad("missing end_header"));
        }
        let l = line.trim();
        if first {
            if l != "ply" {
                return Err(bad("missing magic"));
            }
            first = false;
            continue;
        }
        let toks: Vec<&str> = l.split_whitespace().collect();
        match toks.as_slice() {
            ["format", f, _] if *f != "binary_little_endian" => return Err(bad("only binary_little_endian is supported")),
            ["element", "vertex", n] => nv = Some(n.parse::<usize>().map_err(|_| bad("vertex count"))?),
            ["element", "face", n] => nf = Some(n.parse::<usize>().map_err(|_| bad("face count"))?),
            ["property", "uchar", "red"] => has_color = true,
            ["end_header"] => break,
            _ => {}
        }
    }
    let (nv, nf) = (nv.ok_or_else(|| bad("no vertex element"))?, nf.ok_or_else(|| bad("no face element"))?);
    let mut mesh = Mesh::default();
    let mut colors = Vec::new();
    let mut b4 = [0u8; 4];
    for _ in 0..nv {
        let mut v = [0.0; 3];
        for c in v.iter_mut() {
            r.read_exact(&mut b4)?;
            *c = f32::from_le_bytes(b4) as f64;
        }
        mesh.vertices.push(v);
        if has_color {
            let mut c = [0u8; 3];
            r.read_exact(&mut c)?;
            colors.push(c.map(|x| x as f64 / 255.0));
        }
    }
    for _ in 0..nf {
        let mut n = [0u8; 1];
        r.read_exact(&mut n)?;
        if n[0] != 3 {
            return Err(bad("only triangles are supported"));
        }
        let mut t = [0u32; 3];
        for i in t.iter_mut() {
            r.read_exact(&mut b4)?;
            *i = u32::try_from(i32::from_le_bytes(b4)).map_err(|_| bad("negative index"))?;
        }
        mesh.triangles.push(t);
    }
    if has_color {
        mesh.colors = Some(colors);
    }
    check_indices(&mesh)?;
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn tri() -> Mesh {
        Mesh::new(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], vec![[0, 1, 2]])
    }

    fn tetra() -> Mesh {
        Mesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]],
        )
    }

    #[test]
    fn euler_of_closed_and_disjoint() {
        let t = tetra();
        assert!(t.is_closed());
        assert_eq!(euler_characteristic(&t), EulerReport { value: 2, non_manifold_edges: 0 });
        assert!(t.signed_volume() > 0.0);
        let mut two = t.clone();
        let off = two.vertices.len() as u32;
        two.vertices.extend(t.vertices.iter().map(|v| [v[0] + 5.0, v[1], v[2]]));
        two.triangles.extend(t.triangles.iter().map(|f| f.map(|i| i + off)));
        assert_eq!(euler_characteristic(&two).value, 4);
        assert_eq!(two.components(), 2);
        let r = euler_characteristic(&tri());
        assert_eq!(r.value, 1);
        assert_eq!(r.non_manifold_edges, 3);
    }

    #[test]
    fn obj_single_triangle() {
        let s = String::from_utf8(obj_bytes(&tri())).unwrap();
        assert_eq!(s.lines().filter(|l| l.starts_with("v ")).count(), 3);
        assert_eq!(s.lines().filter(|l| l.starts_with("f ")).count(), 1);
        assert!(s.contains("f 1 2 3"));
    }

    #[test]
    fn round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = tetra();
        m.vertices[3] = [0.1234567, -0.3, 1.0 / 3.0];
        m.colors = Some(vec![[1.0, 0.0, 0.5], [0.2, 0.4, 0.6], [0.0; 3], [1.0; 3]]);
        for name in ["m.obj", "m.ply"] {
            let p = dir.path().join(name);
            export_mesh(&m, &p).unwrap();
            let back = import_mesh(&p).unwrap();
            assert_eq!(back.triangles, m.triangles);
            for (a, b) in back.vertices.iter().zip(&m.vertices) {
                for k in 0..3 {
                    assert!((a[k] - b[k]).abs() < 1e-6);
                }
            }
            for (a, b) in back.colors.unwrap().iter().zip(m.colors.as_ref().unwrap()) {
                for k in 0..3 {
                    assert!((a[k] - b[k]).abs() <= 0.5 / 255.0 + 1e-12);
                }
            }
        }
        let empty = Mesh::default();
        for name in ["e.obj", "e.ply"] {
            let p = dir.path().join(name);
            export_mesh(&empty, &p).unwrap();
            assert_eq!(import_mesh(&p).unwrap(), empty);
        }
        assert!(export_mesh(&empty, &dir.path().join("nope/x.obj")).is_err());
    }

    #[test]
    fn surface_sampling() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let t = tri();
        for p in sample_surface_points(&t, 500, &mut rng).unwrap() {
            assert!(p[0] >= 0.0 && p[1] >= 0.0 && p[0] + p[1] <= 1.0 + 1e-12 && p[2] == 0.0);
        }
        // areas 1 and 3
        let m = Mesh::new(
            vec![[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 5.0], [2.0, 0.0, 5.0], [0.0, 3.0, 5.0]],
            vec![[0, 1, 2], [3, 4, 5]],
        );
        let pts = sample_surface_points(&m, 10_000, &mut rng).unwrap();
        let frac = pts.iter().filter(|p| p[2] > 2.5).count() as f64 / 1e4;
        assert!((frac - 0.75).abs() < 0.03, "{frac}");
        assert_eq!(sample_surface_points_seeded(&m, 50, 9).unwrap(), sample_surface_points_seeded(&m, 50, 9).unwrap());
        let flat = Mesh::new(vec![[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]], vec![[0, 1, 2]]);
        assert!(sample_surface_points(&flat, 1, &mut rng).is_err());
    }

    #[test]
    fn cleanup_removes_degenerates() {
        let mut m = Mesh::new(
            vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [2.0, 0.0, 0.0], [9.0; 3]],
            vec![[0, 1, 2], [0, 1, 3], [1, 1, 2]],
        );
        m.cleanup();
        assert_eq!(m.triangles.len(), 1);
        assert_eq!(m.vertices.len(), 3);
    }
}
