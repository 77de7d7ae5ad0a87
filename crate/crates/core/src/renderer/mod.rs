//! Pinhole rays and the recurrent (LSTM) differentiable ray marcher.

mod camera;
mod lstm;

pub use camera::{add, cross, dot, norm, normalize, scale, sub, CameraPose, Vec3};
pub use lstm::{lstm_step, LstmMarcher, LstmState, StepModel};

use std::path::Path;

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::nets::positional_encode;

/// Camera rays with the ground truth needed by the losses.
#[derive(Clone, Debug, Default)]
pub struct RayBatch {
    pub origins: Vec<Vec3>,
    pub directions: Vec<Vec3>,
    pub pixels: Vec<(f64, f64)>,
    pub on_silhouette: Vec<bool>,
    pub gt_rgb: Vec<Vec3>,
    /// Distance transform (pixels) at each ray's pixel.
    pub dt_value: Vec<f64>,
}

impl RayBatch {
    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    pub fn directions_tensor(&self) -> Tensor {
        Tensor::new(vec![self.len(), 3], self.directions.iter().flatten().copied().collect()).expect("ray directions")
    }
}

/// Rays from the camera centre through the given pixel coordinates.
///
/// Ground-truth fields are left at background defaults.
pub fn generate_rays(cam: &CameraPose, pixels: &[(f64, f64)]) -> Result<RayBatch> {
    let origin = cam.center();
    let mut batch = RayBatch::default();
    for (i, &(u, v)) in pixels.iter().enumerate() {
        if !(u >= 0.0 && v >= 0.0 && u <= (cam.width - 1) as f64 && v <= (cam.height - 1) as f64) {
            return Err(Error::Invalid(format!(
                "pixel #{i} ({u}, {v}) outside {}×{} image",
                cam.width, cam.height
            )));
        }
        batch.origins.push(origin);
        batch.directions.push(cam.pixel_direction(u, v));
        batch.pixels.push((u, v));
        batch.on_silhouette.push(false);
        batch.gt_rgb.push([0.0; 3]);
        batch.dt_value.push(0.0);
    }
    Ok(batch)
}

/// Marching settings.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MarchConfig {
    pub steps: usize,
    /// Rays start this far in front of the world origin: `t_near = |origin| − offset`.
    pub near_offset: f64,
    pub d_min: f64,
    pub d_max: f64,
    pub pe_point_freqs: usize,
}

impl Default for MarchConfig {
    fn default() -> Self {
        MarchConfig {
            steps: 10,
            near_offset: 1.0,
            d_min: 0.01,
            d_max: 0.5,
            pe_point_freqs: 6,
        }
    }
}

/// Per-ray march record.
pub struct MarchTrace {
    /// `steps + 1` tensors of shape `[N, 3]`
    pub points: Vec<Tensor>,
    /// `steps` tensors of shape `[N, 1]`
    pub steps: Vec<Tensor>,
    /// `[N, 1]`: `t_near + Σ steps`
    pub depth: Tensor,
    pub t_near: Vec<f64>,
}

impl MarchTrace {
    pub fn last_point(&self) -> &Tensor {
        self.points.last().expect("trace has points")
    }
}

/// Marches every ray `cfg.steps` times.
///
/// `point_fn` is called on each of the `steps + 1` trace points in order and
/// returns per-point features `[N, F]`; features of the final point are not
/// fed to the step model, but the call lets the caller evaluate anything it
/// needs there on the same tape.
pub fn march_rays<M: StepModel>(
    tape: &mut Tape,
    model: &M,
    rays: &RayBatch,
    cfg: &MarchConfig,
    mut point_fn: impl FnMut(&mut Tape, &Tensor) -> Result<Tensor>,
) -> Result<MarchTrace> {
    if cfg.steps < 2 {
        return Err(Error::Invalid(format!("need at least 2 march steps, got {}", cfg.steps)));
    }
    let n = rays.len();
    let dirs = rays.directions_tensor();
    let t_near: Vec<f64> = rays.origins.iter().map(|&o| norm(o) - cfg.near_offset).collect();
    let x0: Vec<f64> = rays
        .origins
        .iter()
        .zip(&rays.directions)
        .zip(&t_near)
        .flat_map(|((&o, &d), &t)| add(o, scale(d, t)))
        .collect();
    let mut x = Tensor::new(vec![n, 3], x0)?;
    let mut state = model.initial_state(n);
    let mut points = vec![x.clone()];
    let mut steps = Vec::with_capacity(cfg.steps);
    for i in 0..=cfg.steps {
        let feats = point_fn(tape, &x)?;
        if feats.rows() != n {
            return Err(Error::shape("march_rays", format!("{n} feature rows"), format!("{:?}", feats.shape())));
        }
        if let Some(bad) = feats.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "point feature at ray {} (march step {i})",
                bad / feats.last_dim().max(1)
            )));
        }
        if i == cfg.steps {
            break;
        }
        let pe = positional_encode(tape, &x, cfg.pe_point_freqs)?;
        let input = tape.concat(&[&feats, &pe])?;
        let (next, raw) = model.step(tape, &state, &input)?;
        state = next;
        // min(raw, d_max) = −max(−raw, −d_max)
        let neg = tape.scale(&raw, -1.0);
        let clipped = tape.hinge(&neg, -cfg.d_max);
        let d = tape.scale(&clipped, -1.0);
        let advance = tape.mul(&d, &dirs)?;
        x = tape.add(&x, &advance)?;
        points.push(x.clone());
        steps.push(d);
    }
    let mut depth = Tensor::new(vec![n, 1], t_near.clone())?;
    for d in &steps {
        depth = tape.add(&depth, d)?;
    }
    Ok(MarchTrace {
        points,
        steps,
        depth,
        t_near,
    })
}

/// Writes depths as an 8-bit grayscale PNG, mapping `near → 0`, `far → 255`.
pub fn write_depth_png(path: &Path, depth: &[f64], width: usize, height: usize, near: f64, far: f64) -> Result<()> {
    if depth.len() != width * height || far <= near {
        return Err(Error::Invalid("depth image size or range".into()));
    }
    let pixels: Vec<u8> = depth
        .iter()
        .map(|&d| (((d - near) / (far - near)).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let img = image::GrayImage::from_raw(width as u32, height as u32, pixels)
        .ok_or_else(|| Error::Image("depth buffer size".into()))?;
    img.save(path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{ParamStore, Tensor};

    fn cam() -> CameraPose {
        CameraPose::look_at([0.0, 0.0, 2.5], [0.0; 3], [0.0, 1.0, 0.0], 50.0, 64, 64).unwrap()
    }

    #[test]
    fn rays_are_unit_and_bounded() {
        let c = cam();
        let px: Vec<(f64, f64)> = (0..64).step_by(7).flat_map(|u| (0..64).step_by(9).map(move |v| (u as f64, v as f64))).collect();
        let rays = generate_rays(&c, &px).unwrap();
        for d in &rays.directions {
            assert!((norm(*d) - 1.0).abs() < 1e-9);
        }
        assert!(generate_rays(&c, &[(64.0, 0.0)]).is_err());
        assert!(generate_rays(&c, &[(-1.0, 0.0)]).is_err());
    }

    #[test]
    fn corner_ray_angle_matches_pinhole_geometry() {
        let c = cam();
        let w = 64.0;
        let rays = generate_rays(&c, &[(0.0, 0.0)]).unwrap();
        let angle = dot(rays.directions[0], [0.0, 0.0, -1.0]).acos();
        let want = ((25.0f64).to_radians().tan() * 2f64.sqrt() * (1.0 - 1.0 / w)).atan();
        assert!((angle - want).abs() < 1e-6);
    }

    struct ConstantStep(f64);

    impl StepModel for ConstantStep {
        fn initial_state(&self, n: usize) -> LstmState {
            LstmState {
                h: Tensor::zeros(&[n, 1]),
                c: Tensor::zeros(&[n, 1]),
            }
        }
        fn step(&self, _tape: &mut Tape, state: &LstmState, input: &Tensor) -> Result<(LstmState, Tensor)> {
            Ok((state.clone(), Tensor::full(&[input.rows(), 1], self.0)))
        }
    }

    #[test]
    fn constant_step_trace_arithmetic() {
        let c = cam();
        let rays = generate_rays(&c, &[(10.0, 20.0), (31.5, 31.5), (60.0, 3.0)]).unwrap();
        let cfg = MarchConfig::default();
        let mut tape = Tape::new();
        let trace = march_rays(&mut tape, &ConstantStep(0.1), &rays, &cfg, |_, x| Ok(Tensor::zeros(&[x.rows(), 4]))).unwrap();
        assert_eq!(trace.points.len(), cfg.steps + 1);
        for (r, &t) in trace.t_near.iter().enumerate() {
            assert!((t - 1.5).abs() < 1e-12);
            assert!((trace.depth.data()[r] - (1.5 + 0.1 * cfg.steps as f64)).abs() < 1e-12);
        }
        for w in trace.points.windows(2) {
            for r in 0..3 {
                let a = w[0].row(r);
                let b = w[1].row(r);
                let step = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
                let cr = cross(step, rays.directions[r]);
                assert!(norm(cr) < 1e-12);
            }
        }
    }

    #[test]
    fn steps_are_clamped_to_d_max() {
        let c = cam();
        let rays = generate_rays(&c, &[(31.5, 31.5)]).unwrap();
        let cfg = MarchConfig::default();
        let mut tape = Tape::new();
        let trace = march_rays(&mut tape, &ConstantStep(2.0), &rays, &cfg, |_, x| Ok(Tensor::zeros(&[x.rows(), 2]))).unwrap();
        assert!(trace.depth.data()[0] <= 1.5 + cfg.steps as f64 * cfg.d_max + 1e-12);
    }

    #[test]
    fn non_finite_feature_names_ray() {
        let c = cam();
        let rays = generate_rays(&c, &[(1.0, 1.0), (2.0, 2.0)]).unwrap();
        let mut tape = Tape::new();
        let err = march_rays(&mut tape, &ConstantStep(0.1), &rays, &MarchConfig::default(), |_, _| {
            Tensor::new(vec![2, 1], vec![0.0, f64::NAN])
        })
        .err()
        .unwrap();
        assert!(err.to_string().contains("ray 1"), "{err}");
    }

    #[test]
    fn lstm_trace_shape_independent_of_hits() {
        let marcher = LstmMarcher::new(4, 32, 6);
        let mut store = ParamStore::new();
        marcher.init(&mut store, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0)).unwrap();
        let c = cam();
        let mut rays = generate_rays(&c, &[(0.0, 0.0), (31.5, 31.5)]).unwrap();
        rays.on_silhouette = vec![false, true];
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let model = marcher.with_params(&bound);
        let trace = march_rays(&mut tape, &model, &rays, &MarchConfig::default(), |_, x| Ok(Tensor::zeros(&[x.rows(), 4]))).unwrap();
        assert!(trace.points.iter().all(|p| p.shape() == [2, 3]));
        assert!(trace.steps.iter().all(|d| d.data().iter().all(|&v| v > 0.0)));
    }

    use rand::SeedableRng;
}
