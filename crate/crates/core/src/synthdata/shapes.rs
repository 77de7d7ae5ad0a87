use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::renderer::{cross, dot, norm, normalize, sub, Vec3};

/// Leaf primitives, each in its own local frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Primitive {
    Sphere { radius: f64 },
    /// Axis-aligned box with half extents.
    Box { half: Vec3 },
    /// Ring in the local xz-plane around the local y axis.
    Torus { major: f64, minor: f64 },
    /// Segment `a–b` swept by a ball.
    Capsule { a: Vec3, b: Vec3, radius: f64 },
}

impl Primitive {
    pub fn sdf(&self, p: Vec3) -> f64 {
        match *self {
            Primitive::Sphere { radius } => norm(p) - radius,
            Primitive::Box { half } => {
                let q = [p[0].abs() - half[0], p[1].abs() - half[1], p[2].abs() - half[2]];
                let outside = norm([q[0].max(0.0), q[1].max(0.0), q[2].max(0.0)]);
                outside + q[0].max(q[1]).max(q[2]).min(0.0)
            }
            Primitive::Torus { major, minor } => {
                let ring = (p[0] * p[0] + p[2] * p[2]).sqrt() - major;
                (ring * ring + p[1] * p[1]).sqrt() - minor
            }
            Primitive::Capsule { a, b, radius } => {
                let pa = sub(p, a);
                let ba = sub(b, a);
                let t = (dot(pa, ba) / dot(ba, ba).max(1e-300)).clamp(0.0, 1.0);
                norm(sub(pa, [ba[0] * t, ba[1] * t, ba[2] * t])) - radius
            }
        }
    }

    /// Radius of a ball around the local origin containing the primitive.
    pub fn bounding_radius(&self) -> f64 {
        match *self {
            Primitive::Sphere { radius } => radius,
            Primitive::Box { half } => norm(half),
            Primitive::Torus { major, minor } => major + minor,
            Primitive::Capsule { a, b, radius } => norm(a).max(norm(b)) + radius,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Primitive::Sphere { radius } => radius > 0.0,
            Primitive::Box { half } => half.iter().all(|&h| h > 0.0),
            Primitive::Torus { major, minor } => minor > 0.0 && major > minor,
            Primitive::Capsule { radius, .. } => radius > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid(format!("degenerate primitive {self:?}")))
        }
    }
}

/// Rigid placement; `rotation` maps local to world, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Placement {
    pub rotation: [f64; 9],
    pub translation: Vec3,
}

impl Placement {
    pub fn identity() -> Self {
        Placement {
            rotation: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            translation: [0.0; 3],
        }
    }

    pub fn translate(t: Vec3) -> Self {
        Placement {
            translation: t,
            ..Placement::identity()
        }
    }

    /// Placement whose local y axis points along `axis`.
    pub fn y_along(axis: Vec3, translation: Vec3) -> Self {
        let y = normalize(axis);
        let helper = if y[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 0.0, 1.0] };
        let x = normalize(cross(y, helper));
        let z = cross(x, y);
        Placement {
            rotation: [x[0], y[0], z[0], x[1], y[1], z[1], x[2], y[2], z[2]],
            translation,
        }
    }

    /// Rotation by `angle` about the world y axis.
    pub fn yaw(angle: f64, translation: Vec3) -> Self {
        let (s, c) = angle.sin_cos();
        Placement {
            rotation: [c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c],
            translation,
        }
    }

    pub fn to_local(&self, p: Vec3) -> Vec3 {
        let d = sub(p, self.translation);
        let r = &self.rotation;
        [
            r[0] * d[0] + r[3] * d[1] + r[6] * d[2],
            r[1] * d[0] + r[4] * d[1] + r[7] * d[2],
            r[2] * d[0] + r[5] * d[1] + r[8] * d[2],
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Part {
    pub primitive: Primitive,
    pub placement: Placement,
}

/// Min-union of placed primitives plus genus label and albedo seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeSpec {
    pub parts: Vec<Part>,
    pub genus: u8,
    pub albedo_seed: u64,
}

impl ShapeSpec {
    pub fn single(primitive: Primitive) -> Self {
        let genus = matches!(primitive, Primitive::Torus { .. }) as u8;
        ShapeSpec {
            parts: vec![Part {
                primitive,
                placement: Placement::identity(),
            }],
            genus,
            albedo_seed: 0,
        }
    }

    pub fn has_torus(&self) -> bool {
        self.parts.iter().any(|p| matches!(p.primitive, Primitive::Torus { .. }))
    }

    /// Checks primitives, the genus label and the `[−0.9, 0.9]³` bound.
    pub fn validate(&self) -> Result<()> {
        if self.parts.is_empty() {
            return Err(Error::Invalid("shape has no parts".into()));
        }
        for part in &self.parts {
            part.primitive.validate()?;
            let r = part.primitive.bounding_radius();
            if part.placement.translation.iter().any(|t| t.abs() + r > 0.9) {
                return Err(Error::Invalid(format!("part {:?} leaves [-0.9, 0.9]^3", part.primitive)));
            }
        }
        if (self.genus == 1) != self.has_torus() || self.genus > 1 {
            return Err(Error::Invalid(format!("genus label {} does not match the parts", self.genus)));
        }
        Ok(())
    }
}

pub fn analytic_sdf(spec: &ShapeSpec, x: Vec3) -> f64 {
    spec.parts
        .iter()
        .map(|p| p.primitive.sdf(p.placement.to_local(x)))
        .fold(f64::INFINITY, f64::min)
}

/// Three-colour procedural albedo: bands along a seed-chosen direction.
pub fn albedo(spec: &ShapeSpec, p: Vec3) -> Vec3 {
    let mut rng = crate::rng::substream(spec.albedo_seed, "albedo", 0);
    let palette: Vec<Vec3> = (0..3)
        .map(|_| [rng.gen_range(0.25..1.0), rng.gen_range(0.25..1.0), rng.gen_range(0.25..1.0)])
        .collect();
    let axis = normalize([rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0f64)]);
    let width = rng.gen_range(0.2..0.4);
    let band = ((dot(p, axis) + 2.0) / width).floor() as i64;
    palette[band.rem_euclid(3) as usize]
}

/// Family of generated shapes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Sphere body with a strut and an optional slab, star-shaped about
    /// the body centre, hence genus 0.
    Sphere,
    /// Standing ring with an optional outward stem, genus 1.
    Torus,
}

fn unit(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0f64)];
        let n = norm(v);
        if n > 0.1 && n <= 1.0 {
            return normalize(v);
        }
    }
}

/// Samples one shape. For the torus family `facing` is the azimuth (radians)
/// the ring axis is yawed around, ±45°.
pub fn sample_shape(rng: &mut impl Rng, family: Family, facing: f64) -> ShapeSpec {
    for _ in 0..1000 {
        let spec = match family {
            Family::Sphere => {
                let c = [rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05)];
                let r = rng.gen_range(0.4..0.55);
                let mut parts = vec![Part {
                    primitive: Primitive::Sphere { radius: r },
                    placement: Placement::translate(c),
                }];
                let dir = unit(rng);
                let len = rng.gen_range(0.55..0.75);
                parts.push(Part {
                    primitive: Primitive::Capsule {
                        a: [0.0; 3],
                        b: [dir[0] * len, dir[1] * len, dir[2] * len],
                        radius: rng.gen_range(0.08..0.14),
                    },
                    placement: Placement::translate(c),
                });
                if rng.gen_bool(0.5) {
                    parts.push(Part {
                        primitive: Primitive::Box {
                            half: [rng.gen_range(0.45..0.6), rng.gen_range(0.08..0.15), rng.gen_range(0.2..0.35)],
                        },
                        placement: Placement::yaw(rng.gen_range(0.0..std::f64::consts::TAU), c),
                    });
                }
                ShapeSpec {
                    parts,
                    genus: 0,
                    albedo_seed: rng.gen(),
                }
            }
            Family::Torus => {
                let major = rng.gen_range(0.48..0.6);
                let minor = rng.gen_range(0.13..0.19);
                let yaw = facing + rng.gen_range(-45f64..45.0).to_radians();
                let tilt = rng.gen_range(-15f64..15.0).to_radians();
                let axis = [tilt.cos() * yaw.sin(), tilt.sin(), tilt.cos() * yaw.cos()];
                let c = [rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05)];
                let ring = Placement::y_along(axis, c);
                let mut parts = vec![Part {
                    primitive: Primitive::Torus { major, minor },
                    placement: ring.clone(),
                }];
                if rng.gen_bool(0.5) {
                    // radial stem from the bottom of the tube centre circle
                    let down = [0.0, -1.0, 0.0];
                    let radial = sub(down, [axis[0] * dot(down, axis), axis[1] * dot(down, axis), axis[2] * dot(down, axis)]);
                    let radial = normalize(radial);
                    let len = 0.76 - major;
                    let a = [c[0] + radial[0] * major, c[1] + radial[1] * major, c[2] + radial[2] * major];
                    let b = [a[0] + radial[0] * len, a[1] + radial[1] * len, a[2] + radial[2] * len];
                    let radius = rng.gen_range(0.05..0.08);
                    // store endpoints relative to the ring centre so the bound check uses them
                    parts.push(Part {
                        primitive: Primitive::Capsule {
                            a: sub(a, c),
                            b: sub(b, c),
                            radius,
                        },
                        placement: Placement::translate(c),
                    });
                }
                ShapeSpec {
                    parts,
                    genus: 1,
                    albedo_seed: rng.gen(),
                }
            }
        };
        if spec.validate().is_ok() {
            return spec;
        }
    }
    unreachable!("shape sampler failed to produce a shape inside the bound")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn primitive_examples() {
        let s = ShapeSpec::single(Primitive::Sphere { radius: 0.5 });
        assert_eq!(analytic_sdf(&s, [0.0; 3]), -0.5);
        assert_eq!(analytic_sdf(&s, [1.0, 0.0, 0.0]), 0.5);
        let t = ShapeSpec::single(Primitive::Torus { major: 0.5, minor: 0.2 });
        assert!((analytic_sdf(&t, [0.5, 0.0, 0.0]) + 0.2).abs() < 1e-15);
        assert_eq!(t.genus, 1);
    }

    fn inside_oracle(p: &Primitive, x: Vec3) -> bool {
        match *p {
            Primitive::Sphere { radius } => x[0] * x[0] + x[1] * x[1] + x[2] * x[2] < radius * radius,
            Primitive::Box { half } => (0..3).all(|i| x[i].abs() < half[i]),
            Primitive::Torus { major, minor } => {
                let rho = (x[0] * x[0] + x[2] * x[2]).sqrt();
                (rho - major).powi(2) + x[1] * x[1] < minor * minor
            }
            Primitive::Capsule { a, b, radius } => {
                // dense segment sampling
                (0..=2000).any(|i| {
                    let t = i as f64 / 2000.0;
                    let q = [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t];
                    norm(sub(x, q)) < radius
                })
            }
        }
    }

    proptest! {
        #[test]
        fn sign_matches_containment(x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0) {
            let prims = [
                Primitive::Sphere { radius: 0.5 },
                Primitive::Box { half: [0.5, 0.3, 0.2] },
                Primitive::Torus { major: 0.5, minor: 0.2 },
                Primitive::Capsule { a: [-0.3, 0.0, 0.1], b: [0.4, 0.2, 0.0], radius: 0.15 },
            ];
            for p in &prims {
                let d = p.sdf([x, y, z]);
                prop_assume!(d.abs() > 1e-3);
                prop_assert_eq!(d < 0.0, inside_oracle(p, [x, y, z]), "{:?}", p);
            }
        }
    }

    #[test]
    fn unit_gradient_away_from_seams() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for family in [Family::Sphere, Family::Torus] {
            let spec = sample_shape(&mut rng, family, 0.3);
            let mut checked = 0;
            while checked < 300 {
                let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
                let d = analytic_sdf(&spec, x);
                // skip seams: two parts within 1e-2 of each other, and box/torus medial sets
                let mut per: Vec<f64> = spec.parts.iter().map(|p| p.primitive.sdf(p.placement.to_local(x))).collect();
                per.sort_by(|a, b| a.partial_cmp(b).unwrap());
                if d.abs() < 1e-3 || (per.len() > 1 && per[1] - per[0] < 1e-2) {
                    continue;
                }
                let h = 1e-6;
                let g: Vec<f64> = (0..3)
                    .map(|i| {
                        let mut a = x;
                        let mut b = x;
                        a[i] += h;
                        b[i] -= h;
                        (analytic_sdf(&spec, a) - analytic_sdf(&spec, b)) / (2.0 * h)
                    })
                    .collect();
                let n = norm([g[0], g[1], g[2]]);
                let near_medial = spec.parts.iter().any(|p| match p.primitive {
                    Primitive::Box { half } => {
                        let l = p.placement.to_local(x);
                        let mut q: Vec<f64> = (0..3).map(|i| l[i].abs() - half[i]).collect();
                        q.sort_by(|a, b| b.partial_cmp(a).unwrap());
                        q[0] < 0.0 && q[0] - q[1] < 1e-2
                    }
                    Primitive::Torus { .. } | Primitive::Sphere { .. } => {
                        let l = p.placement.to_local(x);
                        (l[0] * l[0] + l[2] * l[2]).sqrt() < 1e-2 || norm(l) < 1e-2
                    }
                    Primitive::Capsule { .. } => false,
                });
                if near_medial {
                    continue;
                }
                assert!((0.99..=1.01).contains(&n), "{n} at {x:?}");
                checked += 1;
            }
        }
    }

    #[test]
    fn sampled_shapes_respect_bounds_and_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for i in 0..200 {
            let family = if i % 2 == 0 { Family::Sphere } else { Family::Torus };
            let facing = rng.gen_range(0.0..6.3);
            let spec = sample_shape(&mut rng, family, facing);
            spec.validate().unwrap();
            assert_eq!(spec.genus == 1, family == Family::Torus);
            // dense check of the bound on the zero level set
            for _ in 0..200 {
                let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
                if x.iter().any(|v: &f64| v.abs() > 0.9) {
                    assert!(analytic_sdf(&spec, x) > 0.0);
                }
            }
        }
    }

    #[test]
    fn albedo_has_three_colours_in_unit_range() {
        let spec = ShapeSpec {
            albedo_seed: 42,
            ..ShapeSpec::single(Primitive::Sphere { radius: 0.5 })
        };
        let mut seen: Vec<Vec3> = Vec::new();
        for i in 0..400 {
            let t = i as f64 / 400.0 * 2.0 - 1.0;
            let c = albedo(&spec, [t, t * 0.5, -t]);
            assert!(c.iter().all(|v| (0.0..=1.0).contains(v)));
            if !seen.contains(&c) {
                seen.push(c);
            }
        }
        assert!(seen.len() <= 3);
    }
}
