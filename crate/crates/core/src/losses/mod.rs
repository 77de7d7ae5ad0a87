//! Training objective: colour, renderer/SDF consistency (with the
//! distance-transform lower bound), eikonal and deformation smoothness.

mod dt;

pub use dt::{distance_transform, distance_transform_brute};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::renderer::RayBatch;

/// Relative weights of the five loss terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub rgb: f64,
    pub sdf: f64,
    pub dt: f64,
    pub eik: f64,
    pub def: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            rgb: 1.0,
            sdf: 1.0,
            dt: 0.5,
            eik: 0.1,
            def: 0.01,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("rgb", self.rgb), ("sdf", self.sdf), ("dt", self.dt), ("eik", self.eik), ("def", self.def)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Invalid(format!("loss weight `{name}` must be a finite non-negative number, got {v}")));
            }
        }
        Ok(())
    }
}

/// Unweighted per-term values plus the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub rgb: f64,
    pub sdf: f64,
    pub dt: f64,
    pub eik: f64,
    pub def: f64,
    pub total: f64,
}

/// The five scalar loss tensors that make up the objective.
pub struct LossParts {
    pub rgb: Tensor,
    pub sdf: Tensor,
    pub dt: Tensor,
    pub eik: Tensor,
    pub def: Tensor,
}

impl LossParts {
    pub fn zeros() -> Self {
        LossParts {
            rgb: Tensor::scalar(0.0),
            sdf: Tensor::scalar(0.0),
            dt: Tensor::scalar(0.0),
            eik: Tensor::scalar(0.0),
            def: Tensor::scalar(0.0),
        }
    }
}

/// `Σ λ_i·term_i` in the fixed order rgb, sdf, dt, eik, def.
pub fn total_loss(tape: &mut Tape, parts: &LossParts, weights: &LossWeights) -> Result<(Tensor, LossReport)> {
    let terms = [
        ("rgb", &parts.rgb, weights.rgb),
        ("sdf", &parts.sdf, weights.sdf),
        ("dt", &parts.dt, weights.dt),
        ("eik", &parts.eik, weights.eik),
        ("def", &parts.def, weights.def),
    ];
    let mut total = Tensor::scalar(0.0);
    for (name, t, w) in terms {
        if t.len() != 1 {
            return Err(Error::shape("total_loss", "scalar term", format!("{name}: {:?}", t.shape())));
        }
        if !t.item().is_finite() {
            return Err(Error::NonFinite(format!("loss term `{name}` = {}", t.item())));
        }
        let weighted = tape.scale(t, w);
        total = tape.add(&total, &weighted)?;
    }
    let report = LossReport {
        rgb: parts.rgb.item(),
        sdf: parts.sdf.item(),
        dt: parts.dt.item(),
        eik: parts.eik.item(),
        def: parts.def.item(),
        total: total.item(),
    };
    Ok((total, report))
}

/// Colour loss with a flag set when no ray hits the silhouette.
pub struct RgbLoss {
    pub value: Tensor,
    pub no_silhouette_rays: bool,
}

/// Mean over on-silhouette rays of `‖pred − gt‖²`; `pred` is `[N, 3]`.
pub fn rgb_loss(tape: &mut Tape, pred: &Tensor, rays: &RayBatch) -> Result<RgbLoss> {
    let n = rays.len();
    if pred.shape() != [n, 3] {
        return Err(Error::shape("rgb_loss", format!("[{n}, 3]"), format!("{:?}", pred.shape())));
    }
    let count = rays.on_silhouette.iter().filter(|&&b| b).count();
    if count == 0 {
        return Ok(RgbLoss {
            value: Tensor::scalar(0.0),
            no_silhouette_rays: true,
        });
    }
    let gt = Tensor::new(vec![n, 3], rays.gt_rgb.iter().flatten().copied().collect())?;
    let mask = Tensor::new(vec![n, 1], rays.on_silhouette.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())?;
    let diff = tape.sub(pred, &gt)?;
    let sq = tape.square(&diff);
    let per_ray = tape.sum_last(&sq);
    let masked = tape.mul(&per_ray, &mask)?;
    let s = tape.sum(&masked);
    Ok(RgbLoss {
        value: tape.scale(&s, 1.0 / count as f64),
        no_silhouette_rays: false,
    })
}

/// Hinge penalties coupling the marched depth with the SDF sign pattern.
pub struct SdfConsistency {
    /// Mean over on-silhouette terms (`ε − s_j` for `j < n`, `ε + s_n`).
    pub on: Tensor,
    /// Mean over off-silhouette terms (`b_i − s_j`).
    pub off: Tensor,
    /// Mean over every contributing term.
    pub combined: Tensor,
}

/// `sdf_values` holds one `[N, 1]` tensor per trace point (`n + 1` total).
///
/// On-silhouette rays penalise `max(ε − s_j, 0)` for all but the last point
/// and `max(ε + s_n, 0)` for the last. Off-silhouette rays penalise
/// `max(b_i − s_j, 0)` for every point, with `b_i = dt_scale · dt_value_i`.
pub fn sdf_consistency_loss(
    tape: &mut Tape,
    sdf_values: &[Tensor],
    rays: &RayBatch,
    margin: f64,
    dt_scale: f64,
) -> Result<SdfConsistency> {
    let n_rays = rays.len();
    let points = sdf_values.len();
    if points < 2 {
        return Err(Error::Invalid("sdf_consistency_loss needs at least two trace points".into()));
    }
    let refs: Vec<&Tensor> = sdf_values.iter().collect();
    let s = tape.concat(&refs)?;
    if s.shape() != [n_rays, points] {
        return Err(Error::shape("sdf_consistency_loss", format!("[{n_rays}, {points}]"), format!("{:?}", s.shape())));
    }
    let mut sign = Vec::with_capacity(n_rays * points);
    let mut offset = Vec::with_capacity(n_rays * points);
    let mut on_mask = Vec::with_capacity(n_rays * points);
    for r in 0..n_rays {
        let on = rays.on_silhouette[r];
        for j in 0..points {
            if on {
                sign.push(if j + 1 == points { 1.0 } else { -1.0 });
                offset.push(margin);
            } else {
                sign.push(-1.0);
                offset.push(dt_scale * rays.dt_value[r]);
            }
            on_mask.push(if on { 1.0 } else { 0.0 });
        }
    }
    let shape = vec![n_rays, points];
    let z = tape.mul(&s, &Tensor::new(shape.clone(), sign)?)?;
    let z = tape.add(&z, &Tensor::new(shape.clone(), offset)?)?;
    let h = tape.hinge(&z, 0.0);
    let off_mask: Vec<f64> = on_mask.iter().map(|m| 1.0 - m).collect();
    let n_on = rays.on_silhouette.iter().filter(|&&b| b).count() * points;
    let n_off = n_rays * points - n_on;
    let on_h = tape.mul(&h, &Tensor::new(shape.clone(), on_mask)?)?;
    let on_sum = tape.sum(&on_h);
    let off_h = tape.mul(&h, &Tensor::new(shape, off_mask)?)?;
    let off_sum = tape.sum(&off_h);
    let both = tape.add(&on_sum, &off_sum)?;
    Ok(SdfConsistency {
        on: tape.scale(&on_sum, 1.0 / n_on.max(1) as f64),
        off: tape.scale(&off_sum, 1.0 / n_off.max(1) as f64),
        combined: tape.scale(&both, 1.0 / (n_rays * points).max(1) as f64),
    })
}

const AXES: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

fn shifted(tape: &mut Tape, x: &Tensor, axis: usize, h: f64) -> Result<Tensor> {
    let e = Tensor::new(vec![3], AXES[axis].iter().map(|v| v * h).collect())?;
    tape.add(x, &e)
}

/// Mean of `(‖∇f‖ − 1)²` at the canonical points `xyz: [M, 3]`, with `∇f`
/// taken by central differences of step `h` (six evaluations of `f`).
pub fn eikonal_loss(
    tape: &mut Tape,
    xyz: &Tensor,
    h: f64,
    mut f: impl FnMut(&mut Tape, &Tensor) -> Result<Tensor>,
) -> Result<Tensor> {
    let mut cols = Vec::with_capacity(3);
    for axis in 0..3 {
        let xp = shifted(tape, xyz, axis, h)?;
        let xm = shifted(tape, xyz, axis, -h)?;
        let fp = f(tape, &xp)?;
        let fm = f(tape, &xm)?;
        let d = tape.sub(&fp, &fm)?;
        cols.push(tape.scale(&d, 1.0 / (2.0 * h)));
    }
    let refs: Vec<&Tensor> = cols.iter().collect();
    let grad = tape.concat(&refs)?;
    let sq = tape.square(&grad);
    let n2 = tape.sum_last(&sq);
    let norm = tape.sqrt(&n2);
    let dev = tape.add_scalar(&norm, -1.0);
    let dev2 = tape.square(&dev);
    tape.mean(&dev2)
}

/// Mean of `‖∇g_x + ∇g_y + ∇g_z‖²` at `x: [M, 3]`, where `g` returns the
/// displacement `[M, 3]` and gradients are central differences of step `h`.
pub fn deformation_smoothness_loss(
    tape: &mut Tape,
    x: &Tensor,
    h: f64,
    mut g: impl FnMut(&mut Tape, &Tensor) -> Result<Tensor>,
) -> Result<Tensor> {
    let mut cols = Vec::with_capacity(3);
    for axis in 0..3 {
        let xp = shifted(tape, x, axis, h)?;
        let xm = shifted(tape, x, axis, -h)?;
        let gp = g(tape, &xp)?;
        let gm = g(tape, &xm)?;
        let d = tape.sub(&gp, &gm)?;
        // Σ_c ∂g_c/∂x_axis
        let s = tape.sum_last(&d);
        cols.push(tape.scale(&s, 1.0 / (2.0 * h)));
    }
    let refs: Vec<&Tensor> = cols.iter().collect();
    let v = tape.concat(&refs)?;
    let sq = tape.square(&v);
    let per = tape.sum_last(&sq);
    tape.mean(&per)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rays(on: &[bool], dt: &[f64]) -> RayBatch {
        let n = on.len();
        RayBatch {
            origins: vec![[0.0, 0.0, 2.5]; n],
            directions: vec![[0.0, 0.0, -1.0]; n],
            pixels: vec![(0.0, 0.0); n],
            on_silhouette: on.to_vec(),
            gt_rgb: vec![[0.0; 3]; n],
            dt_value: dt.to_vec(),
        }
    }

    fn col(v: &[f64]) -> Tensor {
        Tensor::new(vec![v.len(), 1], v.to_vec()).unwrap()
    }

    #[test]
    fn rgb_loss_cases() {
        let mut tape = Tape::new();
        let r = rays(&[true], &[0.0]);
        let pred = Tensor::new(vec![1, 3], vec![1.0; 3]).unwrap();
        assert_eq!(rgb_loss(&mut tape, &pred, &r).unwrap().value.item(), 3.0);
        let zero = Tensor::zeros(&[1, 3]);
        assert_eq!(rgb_loss(&mut tape, &zero, &r).unwrap().value.item(), 0.0);

        let mut r2 = rays(&[true, true, false], &[0.0; 3]);
        r2.gt_rgb = vec![[0.0; 3]; 3];
        let a = 0.3f64.sqrt();
        let b = 0.5f64.sqrt();
        let pred = Tensor::new(vec![3, 3], vec![a, 0.0, 0.0, b, 0.0, 0.0, 9.0, 9.0, 9.0]).unwrap();
        let v = rgb_loss(&mut tape, &pred, &r2).unwrap().value.item();
        assert!((v - 0.4).abs() < 1e-12);

        let none = rgb_loss(&mut tape, &Tensor::zeros(&[1, 3]), &rays(&[false], &[1.0])).unwrap();
        assert!(none.no_silhouette_rays);
        assert_eq!(none.value.item(), 0.0);
    }

    #[test]
    fn sdf_consistency_cases() {
        let mut tape = Tape::new();
        let eps = 0.01;
        // satisfied on-silhouette ray
        let mut vals: Vec<Tensor> = (0..10).map(|_| col(&[0.5])).collect();
        vals.push(col(&[-0.5]));
        let l = sdf_consistency_loss(&mut tape, &vals, &rays(&[true], &[0.0]), eps, 0.1).unwrap();
        assert_eq!(l.combined.item(), 0.0);
        // last point outside
        let mut vals: Vec<Tensor> = (0..10).map(|_| col(&[0.5])).collect();
        vals.push(col(&[0.2]));
        let l = sdf_consistency_loss(&mut tape, &vals, &rays(&[true], &[0.0]), eps, 0.1).unwrap();
        assert!((l.on.item() * 11.0 - 0.21).abs() < 1e-12);
        // off-silhouette ray, b = 0.3 from dt = 3 px at 0.1 world units per pixel
        let vals: Vec<Tensor> = (0..11).map(|_| col(&[0.1])).collect();
        let l = sdf_consistency_loss(&mut tape, &vals, &rays(&[false], &[3.0]), eps, 0.1).unwrap();
        assert!((l.off.item() - 0.2).abs() < 1e-12);
        assert!((l.combined.item() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn sdf_consistency_monotone_off_silhouette() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let s: Vec<f64> = (0..6).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let eval = |s: &[f64]| {
                let mut tape = Tape::new();
                let vals: Vec<Tensor> = s.iter().map(|&v| col(&[v])).collect();
                sdf_consistency_loss(&mut tape, &vals, &rays(&[false], &[4.0]), 0.01, 0.1)
                    .unwrap()
                    .combined
                    .item()
            };
            let base = eval(&s);
            let j = rng.gen_range(0..6);
            let mut s2 = s.clone();
            s2[j] += rng.gen_range(0.0..0.3);
            assert!(eval(&s2) <= base + 1e-15);
        }
    }

    fn uniform_points(rng: &mut ChaCha8Rng, m: usize, keep: impl Fn([f64; 3]) -> bool) -> Tensor {
        let mut v = Vec::new();
        while v.len() < 3 * m {
            let p = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            if keep(p) {
                v.extend(p);
            }
        }
        Tensor::new(vec![m, 3], v).unwrap()
    }

    fn analytic(tape: &mut Tape, x: &Tensor, f: impl Fn(&[f64]) -> f64) -> Result<Tensor> {
        let _ = tape;
        Tensor::new(vec![x.rows(), 1], (0..x.rows()).map(|i| f(x.row(i))).collect())
    }

    #[test]
    fn eikonal_exact_on_sphere_and_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = uniform_points(&mut rng, 500, |p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt() > 0.05);
        let mut tape = Tape::new();
        let sphere = |p: &[f64]| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt() - 0.5;
        let l = eikonal_loss(&mut tape, &x, 1e-3, |t, q| analytic(t, q, sphere)).unwrap();
        assert!(l.item() < 1e-6, "{}", l.item());
        let l = eikonal_loss(&mut tape, &x, 1e-3, |t, q| analytic(t, q, |p| 2.0 * p[0])).unwrap();
        assert!((l.item() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn eikonal_on_box_away_from_medial_axis() {
        let half = [0.5, 0.3, 0.4];
        let sdf_box = move |p: &[f64]| {
            let q: Vec<f64> = (0..3).map(|i| p[i].abs() - half[i]).collect();
            let outside = q.iter().map(|v| v.max(0.0).powi(2)).sum::<f64>().sqrt();
            let inside = q.iter().cloned().fold(f64::MIN, f64::max).min(0.0);
            outside + inside
        };
        // medial axis neighbourhood: inside where the two largest q are within 5e-3
        let medial = move |p: [f64; 3]| {
            let mut q: Vec<f64> = (0..3).map(|i| p[i].abs() - half[i]).collect();
            if q.iter().all(|&v| v < 0.0) {
                q.sort_by(|a, b| b.partial_cmp(a).unwrap());
                return q[0] - q[1] < 5e-3;
            }
            // outside near a face/edge/corner boundary
            q.iter().any(|&v| v.abs() < 2e-3)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = uniform_points(&mut rng, 1000, |p| !medial(p));
        let mut tape = Tape::new();
        let l = eikonal_loss(&mut tape, &x, 1e-3, |t, q| analytic(t, q, sdf_box)).unwrap();
        assert!(l.item() < 1e-4, "{}", l.item());
    }

    fn field3(x: &Tensor, g: impl Fn(&[f64]) -> [f64; 3]) -> Result<Tensor> {
        Tensor::new(vec![x.rows(), 3], (0..x.rows()).flat_map(|i| g(x.row(i))).collect())
    }

    #[test]
    fn deformation_smoothness_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = uniform_points(&mut rng, 64, |_| true);
        let mut tape = Tape::new();
        let l = deformation_smoothness_loss(&mut tape, &x, 1e-3, |_, q| field3(q, |_| [0.1, 0.0, 0.0])).unwrap();
        assert_eq!(l.item(), 0.0);
        let l = deformation_smoothness_loss(&mut tape, &x, 1e-3, |_, q| field3(q, |p| [p[0], 0.0, 0.0])).unwrap();
        assert!((l.item() - 1.0).abs() < 1e-9);
        let l = deformation_smoothness_loss(&mut tape, &x, 1e-3, |_, q| field3(q, |p| [p[1], -p[0], 0.0])).unwrap();
        assert!((l.item() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn total_loss_cases() {
        let mut tape = Tape::new();
        let (t, _) = total_loss(&mut tape, &LossParts::zeros(), &LossWeights::default()).unwrap();
        assert_eq!(t.item(), 0.0);
        let ones = LossParts {
            rgb: Tensor::scalar(1.0),
            sdf: Tensor::scalar(1.0),
            dt: Tensor::scalar(1.0),
            eik: Tensor::scalar(1.0),
            def: Tensor::scalar(1.0),
        };
        let (t, rep) = total_loss(&mut tape, &ones, &LossWeights::default()).unwrap();
        assert!((t.item() - 2.61).abs() < 1e-12);
        assert_eq!(rep.total, t.item());
        assert_eq!(rep.eik, 1.0);
        let zero_w = LossWeights {
            rgb: 0.0,
            sdf: 0.0,
            dt: 0.0,
            eik: 0.0,
            def: 0.0,
        };
        assert_eq!(total_loss(&mut tape, &ones, &zero_w).unwrap().0.item(), 0.0);
        let bad = LossParts {
            eik: Tensor::scalar(f64::NAN),
            ..LossParts::zeros()
        };
        let err = total_loss(&mut tape, &bad, &LossWeights::default()).err().unwrap();
        assert!(err.to_string().contains("eik"));
        assert!(LossWeights { dt: -1.0, ..LossWeights::default() }.validate().is_err());
    }
}
