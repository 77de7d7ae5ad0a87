use crate::error::{Error, Result};
use crate::losses::distance_transform;
use crate::renderer::{add, dot, normalize, scale, CameraPose, Vec3};

use super::shapes::{albedo, analytic_sdf, ShapeSpec};

pub const MAX_TRACE_ITERS: usize = 256;
pub const SURFACE_TOL: f64 = 1e-5;
const LIGHT: Vec3 = [0.577_350_269_189_625_8; 3];
const AMBIENT: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceHit {
    pub hit: bool,
    pub depth: f64,
    pub point: Vec3,
    pub normal: Vec3,
}

/// Central-difference gradient of the analytic SDF, normalised.
pub fn sdf_normal(spec: &ShapeSpec, p: Vec3) -> Vec3 {
    let h = 1e-5;
    let mut g = [0.0; 3];
    for (i, gi) in g.iter_mut().enumerate() {
        let mut a = p;
        let mut b = p;
        a[i] += h;
        b[i] -= h;
        *gi = (analytic_sdf(spec, a) - analytic_sdf(spec, b)) / (2.0 * h);
    }
    normalize(g)
}

/// Sphere tracing from `origin` along unit `dir` up to depth `far`.
pub fn sphere_trace(spec: &ShapeSpec, origin: Vec3, dir: Vec3, far: f64) -> TraceHit {
    let mut t = 0.0;
    for _ in 0..MAX_TRACE_ITERS {
        let p = add(origin, scale(dir, t));
        let d = analytic_sdf(spec, p);
        if d < SURFACE_TOL {
            return TraceHit {
                hit: true,
                depth: t,
                point: p,
                normal: sdf_normal(spec, p),
            };
        }
        t += d;
        if t > far {
            break;
        }
    }
    TraceHit {
        hit: false,
        depth: f64::INFINITY,
        point: [0.0; 3],
        normal: [0.0; 3],
    }
}

/// One posed, rendered view.
#[derive(Clone, Debug)]
pub struct TrainingSample {
    pub sample_id: String,
    pub instance_id: String,
    pub width: usize,
    pub height: usize,
    /// Row-major `H × W` linear colours, background black.
    pub rgb: Vec<Vec3>,
    pub mask: Vec<bool>,
    /// Pixel distance to the nearest foreground pixel.
    pub dt: Vec<f64>,
    pub camera: CameraPose,
    pub spec: ShapeSpec,
}

impl TrainingSample {
    /// `H × W × 3` buffer for the encoder.
    pub fn image_hwc(&self) -> Vec<f64> {
        self.rgb.iter().flatten().copied().collect()
    }

    pub fn foreground_pixels(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }
}

/// Lambertian render of `spec` through `cam`. Fails on an empty silhouette.
pub fn render_sample(spec: &ShapeSpec, cam: &CameraPose, instance_id: &str, sample_id: &str) -> Result<TrainingSample> {
    cam.validate()?;
    let (w, h) = (cam.width, cam.height);
    let origin = cam.center();
    let far = crate::renderer::norm(origin) + 2.0;
    let mut rgb = vec![[0.0; 3]; w * h];
    let mut mask = vec![false; w * h];
    for v in 0..h {
        for u in 0..w {
            let dir = cam.pixel_direction(u as f64, v as f64);
            let hit = sphere_trace(spec, origin, dir, far);
            if hit.hit {
                let a = albedo(spec, hit.point);
                let shade = AMBIENT + (1.0 - AMBIENT) * dot(hit.normal, LIGHT).max(0.0);
                rgb[v * w + u] = scale(a, shade);
                mask[v * w + u] = true;
            }
        }
    }
    if !mask.iter().any(|&b| b) {
        return Err(Error::Invalid(format!("{sample_id}: empty silhouette")));
    }
    let dt = distance_transform(&mask, h, w)?;
    Ok(TrainingSample {
        sample_id: sample_id.to_string(),
        instance_id: instance_id.to_string(),
        width: w,
        height: h,
        rgb,
        mask,
        dt,
        camera: cam.clone(),
        spec: spec.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::shapes::{Primitive, ShapeSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sphere() -> ShapeSpec {
        ShapeSpec::single(Primitive::Sphere { radius: 0.5 })
    }

    #[test]
    fn trace_examples() {
        let s = sphere();
        let hit = sphere_trace(&s, [0.0, 0.0, 2.5], [0.0, 0.0, -1.0], 5.0);
        assert!(hit.hit);
        assert!((hit.depth - 2.0).abs() < 1e-4);
        assert!((hit.normal[2] - 1.0).abs() < 1e-6);
        let miss = sphere_trace(&s, [0.0, 0.0, 2.5], [0.0, 1.0, 0.0], 5.0);
        assert!(!miss.hit);
    }

    #[test]
    fn trace_matches_quadratic_formula() {
        let s = sphere();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let o = [0.3, -0.2, 2.5];
        let mut hits = 0;
        for _ in 0..100 {
            let target = [rng.gen_range(-0.6..0.6), rng.gen_range(-0.6..0.6), rng.gen_range(-0.6..0.6)];
            let d = normalize(crate::renderer::sub(target, o));
            // |o + t d|² = r²
            let b = dot(o, d);
            let c = dot(o, o) - 0.25;
            let disc = b * b - c;
            let tr = sphere_trace(&s, o, d, 6.0);
            if disc > 1e-6 {
                hits += 1;
                assert!(tr.hit);
                assert!((tr.depth - (-b - disc.sqrt())).abs() < 1e-4);
            } else if disc < -1e-6 {
                assert!(!tr.hit);
            }
        }
        assert!(hits > 20);
    }

    #[test]
    fn sphere_silhouette_area_and_background() {
        let cam = CameraPose::look_at([0.0, 0.0, 2.5], [0.0; 3], [0.0, 1.0, 0.0], 50.0, 64, 64).unwrap();
        let s = render_sample(&sphere(), &cam, "a", "a_v00").unwrap();
        let area = s.foreground_pixels() as f64;
        let r_px = 64.0 * 0.5 / (2.0 * 25f64.to_radians().tan() * 2.5);
        let want = std::f64::consts::PI * r_px * r_px;
        assert!((area - want).abs() / want < 0.05, "{area} vs {want}");
        for i in 0..s.mask.len() {
            if s.mask[i] {
                assert_eq!(s.dt[i], 0.0);
                assert!(s.rgb[i].iter().all(|&c| c > 0.0 && c <= 1.0));
            } else {
                assert_eq!(s.rgb[i], [0.0; 3]);
                assert!(s.dt[i] >= 1.0);
            }
        }
    }

    #[test]
    fn empty_view_fails() {
        let cam = CameraPose::look_at([0.0, 0.0, 2.5], [0.0, 0.0, 5.0], [0.0, 1.0, 0.0], 50.0, 16, 16).unwrap();
        assert!(render_sample(&sphere(), &cam, "a", "a_v00").is_err());
    }

    #[test]
    fn silhouette_equals_ray_crossings() {
        // brute-force march with small fixed steps for the zero crossing
        let spec = ShapeSpec::single(Primitive::Torus { major: 0.5, minor: 0.2 });
        let cam = CameraPose::look_at([1.2, 1.6, 1.5], [0.0; 3], [0.0, 1.0, 0.0], 50.0, 24, 24).unwrap();
        let s = render_sample(&spec, &cam, "t", "t_v00").unwrap();
        let o = cam.center();
        for v in 0..24 {
            for u in 0..24 {
                let d = cam.pixel_direction(u as f64, v as f64);
                let crosses = (0..8000).any(|i| analytic_sdf(&spec, add(o, scale(d, i as f64 * 5e-4))) < 0.0);
                assert_eq!(crosses, s.mask[v * 24 + u], "pixel ({u}, {v})");
            }
        }
    }
}
