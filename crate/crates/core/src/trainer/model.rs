use rand::Rng;
use rayon::prelude::*;

use crate::autodiff::{Bound, ParamStore, Tape, Tensor};
use crate::error::{Error, Result};
use crate::extraction::{canonical_colors, marching_cubes, GridField, Mesh};
use crate::nets::{compose_canonical, DeformNet, Field, ImageEncoder, NetConfig, ShapeGenerator, UncondFeatures};
use crate::renderer::{generate_rays, march_rays, CameraPose, LstmMarcher, MarchConfig, RayBatch, Vec3};
use crate::rng::substream;
use crate::synthdata::TrainingSample;

pub const STORE_NAMES: [&str; 7] = ["encoder", "shape", "uncond", "deform", "lstm", "canonical", "latents"];
pub const CANONICAL_LATENT: &str = "canonical/latent";

pub fn latent_name(sample_id: &str) -> String {
    format!("latent/{sample_id}")
}

/// Network layouts (no parameters).
#[derive(Clone, Debug)]
pub struct Networks {
    pub cfg: NetConfig,
    pub encoder: ImageEncoder,
    pub shape: ShapeGenerator,
    pub deform: DeformNet,
    pub uncond: UncondFeatures,
    pub marcher: LstmMarcher,
    pub march: MarchConfig,
}

impl Networks {
    pub fn new(cfg: &NetConfig, resolution: usize, march: &MarchConfig, init_step: f64) -> Result<Self> {
        cfg.validate()?;
        let shape = ShapeGenerator::new(cfg)?;
        let deform = DeformNet::new(cfg)?;
        if shape.trunk_width() != deform.trunk_width() {
            return Err(Error::Invalid("shape and deformation trunks must have equal width".into()));
        }
        let mut marcher = LstmMarcher::new(shape.trunk_width(), cfg.lstm_hidden, march.pe_point_freqs);
        marcher.d_min = march.d_min;
        marcher.init_step = init_step;
        Ok(Networks {
            cfg: cfg.clone(),
            encoder: ImageEncoder::new(cfg.encoder_channels.clone(), cfg.latent_dim, resolution),
            shape,
            deform,
            uncond: UncondFeatures::new(cfg),
            marcher,
            march: *march,
        })
    }
}

/// One parameter store per module, so each phase updates (and keeps Adam
/// moments for) only what it trains.
#[derive(Clone, Debug, Default)]
pub struct Stores {
    pub encoder: ParamStore,
    pub shape: ParamStore,
    pub uncond: ParamStore,
    pub deform: ParamStore,
    pub lstm: ParamStore,
    pub canonical: ParamStore,
    /// Per-image latent cache.
    pub latents: ParamStore,
}

impl Stores {
    pub fn init(nets: &Networks, seed: u64) -> Result<Self> {
        let mut s = Stores::default();
        nets.encoder.init(&mut s.encoder, &mut substream(seed, "init/encoder", 0))?;
        nets.shape.init(&mut s.shape, &mut substream(seed, "init/shape", 0))?;
        nets.uncond.init(&mut s.uncond, &mut substream(seed, "init/uncond", 0))?;
        nets.deform.init(&mut s.deform, &mut substream(seed, "init/deform", 0))?;
        nets.marcher.init(&mut s.lstm, &mut substream(seed, "init/lstm", 0))?;
        s.canonical
            .insert(CANONICAL_LATENT, Tensor::zeros(&[1, nets.cfg.latent_dim]))?;
        Ok(s)
    }

    pub fn get(&self, name: &str) -> Option<&ParamStore> {
        Some(match name {
            "encoder" => &self.encoder,
            "shape" => &self.shape,
            "uncond" => &self.uncond,
            "deform" => &self.deform,
            "lstm" => &self.lstm,
            "canonical" => &self.canonical,
            "latents" => &self.latents,
            _ => return None,
        })
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamStore> {
        Some(match name {
            "encoder" => &mut self.encoder,
            "shape" => &mut self.shape,
            "uncond" => &mut self.uncond,
            "deform" => &mut self.deform,
            "lstm" => &mut self.lstm,
            "canonical" => &mut self.canonical,
            "latents" => &mut self.latents,
            _ => return None,
        })
    }

    /// Checks that every network store has exactly the parameters (names
    /// and shapes) of `reference`.
    pub fn check_layout(&self, reference: &Stores) -> Result<()> {
        for name in STORE_NAMES.iter().filter(|&&n| n != "latents") {
            let (a, b) = (self.get(name).unwrap(), reference.get(name).unwrap());
            let layout = |s: &ParamStore| -> Vec<(String, Vec<usize>)> {
                s.iter().map(|(k, e)| (k.clone(), e.value.shape().to_vec())).collect()
            };
            if layout(a) != layout(b) {
                return Err(Error::Format(format!("store `{name}` does not match the network configuration")));
            }
        }
        Ok(())
    }

    pub fn cached_latent_ids(&self) -> Vec<String> {
        self.latents
            .names()
            .filter_map(|n| n.strip_prefix("latent/").map(str::to_string))
            .collect()
    }
}

/// How points map to signed distances.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldMode {
    /// `f(x, u(x))` conditioned on the image latent (no deformation).
    Direct,
    /// `f(x + g(x), h(x))` with the canonical latent.
    Deformed,
}

/// Generated networks for one image, ready to evaluate points.
#[derive(Clone, Debug)]
pub struct Fields {
    pub mode: FieldMode,
    pub shape: Field,
    pub deform: Option<Field>,
    pub uncond: Bound,
}

/// Per-point outputs on one tape.
pub struct PointOutput {
    /// `[N, 1]`
    pub sdf: Tensor,
    /// `[N, 3]`
    pub rgb: Tensor,
    /// Features fed to the marcher, `[N, width]`.
    pub trunk: Tensor,
    /// Canonical coordinates, `[N, 3]`.
    pub canonical: Tensor,
}

impl Fields {
    pub fn direct(nets: &Networks, tape: &mut Tape, shape: &Bound, uncond: &Bound, latent: &Tensor) -> Result<Self> {
        Ok(Fields {
            mode: FieldMode::Direct,
            shape: nets.shape.field(tape, shape, latent)?,
            deform: None,
            uncond: uncond.clone(),
        })
    }

    pub fn deformed(
        nets: &Networks,
        tape: &mut Tape,
        shape: &Bound,
        canonical_latent: &Tensor,
        deform: &Bound,
        image_latent: &Tensor,
    ) -> Result<Self> {
        Ok(Fields {
            mode: FieldMode::Deformed,
            shape: nets.shape.field(tape, shape, canonical_latent)?,
            deform: Some(nets.deform.field(tape, deform, image_latent)?),
            uncond: Bound::default(),
        })
    }

    /// Canonical point `(xyz, features)` for object-space points `x`.
    pub fn canonical(&self, nets: &Networks, tape: &mut Tape, x: &Tensor) -> Result<(Tensor, Option<Tensor>)> {
        match &self.deform {
            None => Ok((x.clone(), nets.uncond.forward(tape, &self.uncond, x)?)),
            Some(d) => {
                let out = nets.deform.forward(tape, d, x)?;
                let c = compose_canonical(tape, x, &out)?;
                Ok((c.xyz, c.feat))
            }
        }
    }

    pub fn canonical_sdf(&self, nets: &Networks, tape: &mut Tape, xyz: &Tensor, feat: Option<&Tensor>) -> Result<Tensor> {
        Ok(nets.shape.forward(tape, &self.shape, xyz, feat)?.sdf)
    }

    pub fn eval(&self, nets: &Networks, tape: &mut Tape, x: &Tensor) -> Result<PointOutput> {
        match &self.deform {
            None => {
                let feat = nets.uncond.forward(tape, &self.uncond, x)?;
                let out = nets.shape.forward(tape, &self.shape, x, feat.as_ref())?;
                Ok(PointOutput {
                    sdf: out.sdf,
                    rgb: out.rgb,
                    trunk: out.trunk,
                    canonical: x.clone(),
                })
            }
            Some(d) => {
                let dout = nets.deform.forward(tape, d, x)?;
                let c = compose_canonical(tape, x, &dout)?;
                let sout = nets.shape.forward(tape, &self.shape, &c.xyz, c.feat.as_ref())?;
                Ok(PointOutput {
                    sdf: sout.sdf,
                    rgb: dout.rgb,
                    trunk: dout.trunk,
                    canonical: c.xyz,
                })
            }
        }
    }
}

/// Trace outputs of a march through [`Fields`].
pub struct MarchResult {
    /// `steps + 1` tensors `[N, 1]`
    pub sdf: Vec<Tensor>,
    /// Colour at the final point, `[N, 3]`.
    pub rgb: Tensor,
    /// `[N, 1]`
    pub depth: Tensor,
    pub last_point: Tensor,
}

pub fn march_fields(
    nets: &Networks,
    tape: &mut Tape,
    lstm: &Bound,
    fields: &Fields,
    rays: &RayBatch,
) -> Result<MarchResult> {
    let mut sdf = Vec::with_capacity(nets.march.steps + 1);
    let mut rgb = None;
    let model = nets.marcher.with_params(lstm);
    let trace = march_rays(tape, &model, rays, &nets.march, |tape, x| {
        let out = fields.eval(nets, tape, x)?;
        sdf.push(out.sdf);
        rgb = Some(out.rgb);
        Ok(out.trunk)
    })?;
    Ok(MarchResult {
        sdf,
        rgb: rgb.expect("march evaluates at least one point"),
        depth: trace.depth.clone(),
        last_point: trace.last_point().clone(),
    })
}

/// Stratified pixel sample: half on the silhouette, half off it (uniform
/// within each group, with replacement).
pub fn sample_rays(sample: &TrainingSample, count: usize, rng: &mut impl Rng) -> Result<RayBatch> {
    let (on, off): (Vec<usize>, Vec<usize>) = (0..sample.mask.len()).partition(|&i| sample.mask[i]);
    if on.is_empty() {
        return Err(Error::Invalid(format!("sample {} has an empty silhouette", sample.sample_id)));
    }
    let n_on = if off.is_empty() { count } else { count / 2 };
    let mut idx = Vec::with_capacity(count);
    for i in 0..count {
        let group = if i < n_on { &on } else { &off };
        idx.push(group[rng.gen_range(0..group.len())]);
    }
    let pixels: Vec<(f64, f64)> = idx
        .iter()
        .map(|&i| ((i % sample.width) as f64, (i / sample.width) as f64))
        .collect();
    let mut rays = generate_rays(&sample.camera, &pixels)?;
    for (r, &i) in idx.iter().enumerate() {
        rays.on_silhouette[r] = sample.mask[i];
        rays.gt_rgb[r] = sample.rgb[i];
        rays.dt_value[r] = sample.dt[i];
    }
    Ok(rays)
}

/// Networks plus parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub nets: Networks,
    pub stores: Stores,
}

/// Per-pixel render of a trained model.
#[derive(Clone, Debug)]
pub struct Rendering {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f64>,
    /// `sdf` at the final marched point is negative.
    pub silhouette: Vec<bool>,
    pub rgb: Vec<Vec3>,
}

/// Mesh with canonical colours plus its canonical vertex coordinates.
#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub mesh: Mesh,
    pub canonical: Vec<Vec3>,
    pub grid: GridField,
}

const CHUNK: usize = 2048;

fn points_tensor(pts: &[Vec3]) -> Tensor {
    Tensor::new(vec![pts.len(), 3], pts.iter().flatten().copied().collect()).expect("point rows")
}

fn rows3(t: &Tensor) -> Vec<Vec3> {
    t.data().chunks(3).map(|c| [c[0], c[1], c[2]]).collect()
}

impl Model {
    /// Image latent with frozen encoder weights.
    pub fn encode(&self, sample: &TrainingSample) -> Result<Tensor> {
        let mut tape = Tape::inference();
        self.nets.encoder.encode(
            &mut tape,
            &self.stores.encoder.frozen(),
            &sample.image_hwc(),
            sample.height,
            sample.width,
        )
    }

    /// Cached latent if present, else a fresh encoding.
    pub fn latent_for(&self, sample: &TrainingSample) -> Result<Tensor> {
        match self.stores.latents.get(&latent_name(&sample.sample_id)) {
            Some(e) => Ok(e.value.clone()),
            None => self.encode(sample),
        }
    }

    pub fn fields(&self, image_latent: &Tensor, mode: FieldMode) -> Result<Fields> {
        let mut tape = Tape::inference();
        let s = &self.stores;
        match mode {
            FieldMode::Direct => Fields::direct(&self.nets, &mut tape, &s.shape.frozen(), &s.uncond.frozen(), image_latent),
            FieldMode::Deformed => Fields::deformed(
                &self.nets,
                &mut tape,
                &s.shape.frozen(),
                s.canonical.value(CANONICAL_LATENT),
                &s.deform.frozen(),
                image_latent,
            ),
        }
    }

    /// Signed distances and canonical coordinates at object-space points.
    pub fn evaluate(&self, fields: &Fields, pts: &[Vec3]) -> Result<(Vec<f64>, Vec<Vec3>)> {
        let parts: Vec<(Vec<f64>, Vec<Vec3>)> = pts
            .par_chunks(CHUNK)
            .map(|c| {
                let mut tape = Tape::inference();
                let out = fields.eval(&self.nets, &mut tape, &points_tensor(c))?;
                Ok((out.sdf.to_vec(), rows3(&out.canonical)))
            })
            .collect::<Result<_>>()?;
        let mut sdf = Vec::with_capacity(pts.len());
        let mut canon = Vec::with_capacity(pts.len());
        for (s, c) in parts {
            sdf.extend(s);
            canon.extend(c);
        }
        Ok((sdf, canon))
    }

    pub fn sample_grid(&self, fields: &Fields, resolution: usize) -> Result<GridField> {
        GridField::sample(resolution, CHUNK, |pts| {
            let mut tape = Tape::inference();
            Ok(fields.eval(&self.nets, &mut tape, &points_tensor(pts))?.sdf.to_vec())
        })
    }

    /// Marches every pixel of `cam`.
    pub fn render(&self, fields: &Fields, cam: &CameraPose) -> Result<Rendering> {
        let pixels: Vec<(f64, f64)> = (0..cam.height)
            .flat_map(|v| (0..cam.width).map(move |u| (u as f64, v as f64)))
            .collect();
        let lstm = self.stores.lstm.frozen();
        let parts: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = pixels
            .par_chunks(512)
            .map(|c| {
                let rays = generate_rays(cam, c)?;
                let mut tape = Tape::inference();
                let m = march_fields(&self.nets, &mut tape, &lstm, fields, &rays)?;
                Ok((m.depth.to_vec(), m.sdf.last().unwrap().to_vec(), m.rgb.to_vec()))
            })
            .collect::<Result<_>>()?;
        let mut out = Rendering {
            width: cam.width,
            height: cam.height,
            depth: Vec::with_capacity(pixels.len()),
            silhouette: Vec::with_capacity(pixels.len()),
            rgb: Vec::with_capacity(pixels.len()),
        };
        for (d, s, c) in parts {
            out.depth.extend(d);
            out.silhouette.extend(s.iter().map(|&v| v < 0.0));
            out.rgb.extend(c.chunks(3).map(|c| [c[0], c[1], c[2]]));
        }
        Ok(out)
    }

    /// Zero level set at `resolution³` with canonical vertex colours.
    pub fn reconstruct(&self, fields: &Fields, resolution: usize) -> Result<Reconstruction> {
        let grid = self.sample_grid(fields, resolution)?;
        let mesh = marching_cubes(&grid, 0.0)?;
        let (_, canonical) = self.evaluate(fields, &mesh.vertices)?;
        let mesh = canonical_colors(&mesh, &canonical)?;
        Ok(Reconstruction { mesh, canonical, grid })
    }
}

/// Intersection over union of two masks (1 when both are empty).
pub fn silhouette_iou(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}
