//! Training curriculum: sphere pretraining (0a), the direct stage (1),
//! DeformNet pretraining (0b) and the deformation stage (2), with
//! checkpoints, resumable iteration and an ND-JSON loss log.

mod model;

pub use model::{
    latent_name, march_fields, sample_rays, silhouette_iou, FieldMode, Fields, MarchResult, Model, Networks,
    PointOutput, Reconstruction, Rendering, Stores, CANONICAL_LATENT, STORE_NAMES,
};

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, Bound, Tape, Tensor};
use crate::error::{Error, Result};
use crate::losses::{
    deformation_smoothness_loss, eikonal_loss, rgb_loss, sdf_consistency_loss, total_loss, LossParts, LossReport,
    LossWeights,
};
use crate::nets::{uniform, NetConfig};
use crate::renderer::MarchConfig;
use crate::rng::{fnv1a64, substream};
use crate::synthdata::{read_json, write_json, Dataset, TrainingSample};

/// Curriculum phases in execution order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    #[serde(rename = "0a")]
    Sphere,
    #[serde(rename = "1")]
    Direct,
    #[serde(rename = "0b")]
    DeformInit,
    #[serde(rename = "2")]
    Deform,
}

impl Phase {
    pub const ORDER: [Phase; 4] = [Phase::Sphere, Phase::Direct, Phase::DeformInit, Phase::Deform];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Sphere => "0a",
            Phase::Direct => "1",
            Phase::DeformInit => "0b",
            Phase::Deform => "2",
        }
    }

    pub fn parse(s: &str) -> Result<Phase> {
        Phase::ORDER
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown stage `{s}` (expected 0a, 1, 0b or 2)")))
    }

    pub fn prerequisite(self) -> Option<Phase> {
        match self {
            Phase::Sphere => None,
            Phase::Direct => Some(Phase::Sphere),
            Phase::DeformInit => Some(Phase::Direct),
            Phase::Deform => Some(Phase::DeformInit),
        }
    }

    /// Stores updated by the optimiser in this phase.
    pub fn trained(self) -> &'static [&'static str] {
        match self {
            Phase::Sphere => &["shape", "uncond"],
            Phase::Direct => &["encoder", "shape", "uncond", "lstm"],
            Phase::DeformInit => &["deform"],
            Phase::Deform => &["encoder", "shape", "deform", "lstm", "canonical"],
        }
    }

    /// Field used for reconstruction once this phase has completed.
    pub fn mode(self) -> FieldMode {
        match self {
            Phase::Sphere | Phase::Direct => FieldMode::Direct,
            Phase::DeformInit | Phase::Deform => FieldMode::Deformed,
        }
    }

    fn needs_dataset(self) -> bool {
        matches!(self, Phase::Direct | Phase::Deform)
    }
}

/// Iteration caps per phase.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhaseBudget {
    pub sphere: usize,
    pub direct: usize,
    pub deform_init: usize,
    pub deform: usize,
}

impl Default for PhaseBudget {
    fn default() -> Self {
        PhaseBudget {
            sphere: 2000,
            direct: 20_000,
            deform_init: 2000,
            deform: 30_000,
        }
    }
}

impl PhaseBudget {
    pub fn get(&self, phase: Phase) -> usize {
        match phase {
            Phase::Sphere => self.sphere,
            Phase::Direct => self.direct,
            Phase::DeformInit => self.deform_init,
            Phase::Deform => self.deform,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    /// Square input image size expected by the encoder.
    pub resolution: usize,
    pub net: NetConfig,
    pub march: MarchConfig,
    pub loss: LossWeights,
    pub adam: AdamConfig,
    pub iterations: PhaseBudget,
    pub rays_per_iteration: usize,
    /// Uniform samples of `[−1, 1]³` per iteration (regularisers, pretraining).
    pub omega_samples: usize,
    /// Central-difference step.
    pub fd_step: f64,
    /// On-silhouette margin ε.
    pub margin: f64,
    /// Marcher step length at initialisation.
    pub init_step: f64,
    pub sphere_radius: f64,
    /// Pretraining stops early once the evaluation MAE drops below this.
    pub pretrain_target_mae: f64,
    /// Pretraining fails if the MAE is not below this at the cap.
    pub pretrain_max_mae: f64,
    /// Weight of matching DeformNet features to the feature MLP in 0b.
    pub feature_match: f64,
    /// Global gradient-norm clip over the stores a step trains; 0 disables.
    pub grad_clip: f64,
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            resolution: 64,
            net: NetConfig::default(),
            march: MarchConfig::default(),
            loss: LossWeights::default(),
            adam: AdamConfig::default(),
            iterations: PhaseBudget::default(),
            rays_per_iteration: 512,
            omega_samples: 256,
            fd_step: 1e-3,
            margin: 0.01,
            init_step: 0.1,
            sphere_radius: 0.5,
            pretrain_target_mae: 0.01,
            pretrain_max_mae: 0.05,
            feature_match: 1.0,
            grad_clip: 1.0,
            checkpoint_every: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.loss.validate()?;
        if self.resolution < 8 || self.rays_per_iteration < 2 || self.omega_samples == 0 {
            return Err(Error::Invalid("resolution ≥ 8, rays ≥ 2 and Ω samples ≥ 1 required".into()));
        }
        if !(self.fd_step > 0.0 && self.margin >= 0.0 && self.init_step > self.march.d_min && self.sphere_radius > 0.0) {
            return Err(Error::Invalid("fd_step, margin, init_step or sphere_radius out of range".into()));
        }
        if !(self.grad_clip >= 0.0 && self.grad_clip.is_finite()) {
            return Err(Error::Invalid(format!("grad_clip must be finite and ≥ 0, got {}", self.grad_clip)));
        }
        if !(self.adam.lr > 0.0) || self.checkpoint_every == 0 {
            return Err(Error::Invalid("learning rate and checkpoint cadence must be positive".into()));
        }
        Ok(())
    }

    /// FNV-1a of the canonical JSON encoding, as 16 hex digits.
    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("config serialises");
    format!("{:016x}", fnv1a64(json.as_bytes()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub phase: Phase,
    /// Completed iterations of `phase`.
    pub iteration: usize,
    pub complete: bool,
    pub mode: FieldMode,
    pub config_hash: String,
    pub net: NetConfig,
    pub march: MarchConfig,
    pub resolution: usize,
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iteration: usize,
    pub stage: String,
    #[serde(flatten)]
    pub terms: LossReport,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, Default)]
pub struct PhaseSummary {
    pub start_iteration: usize,
    pub iterations: usize,
    pub skipped: bool,
    pub history: Vec<LossReport>,
    /// Final evaluation MAE of the pretraining phases.
    pub mae: Option<f64>,
}

pub fn checkpoint_dir(run_dir: &Path, phase: Phase) -> PathBuf {
    run_dir.join(format!("ckpt_{}", phase.name()))
}

pub fn read_checkpoint_meta(dir: &Path) -> Result<CheckpointMeta> {
    read_json(&dir.join("meta.json"))
}

/// Loads a checkpoint directory written by [`Trainer`].
pub fn load_model(dir: &Path) -> Result<(Model, CheckpointMeta)> {
    let meta = read_checkpoint_meta(dir)?;
    let nets = Networks::new(&meta.net, meta.resolution, &meta.march, 0.1)?;
    let stores = load_stores(dir)?;
    stores.check_layout(&Stores::init(&nets, 0)?)?;
    Ok((Model { nets, stores }, meta))
}

fn load_stores(dir: &Path) -> Result<Stores> {
    let mut stores = Stores::default();
    for name in STORE_NAMES {
        *stores.get_mut(name).unwrap() = crate::autodiff::ParamStore::load(&dir.join(format!("{name}.ckpt")))
            .map_err(|e| Error::Format(format!("{}: {e}", dir.join(format!("{name}.ckpt")).display())))?;
    }
    Ok(stores)
}

fn omega(seed: u64, name: &str, index: u64, m: usize) -> Tensor {
    let mut rng = substream(seed, name, index);
    let data: Vec<f64> = (0..3 * m).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    Tensor::new(vec![m, 3], data).expect("omega rows")
}

fn sphere_sdf(x: &[f64], r: f64) -> Vec<f64> {
    x.chunks(3).map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt() - r).collect()
}

/// Mean of the cached per-image latents.
pub fn init_canonical_latent(stores: &Stores) -> Result<Tensor> {
    let ids = stores.cached_latent_ids();
    if ids.is_empty() {
        return Err(Error::Prerequisite("latent cache is empty; run stage 1 first".into()));
    }
    let first = stores.latents.value(&latent_name(&ids[0]));
    let mut acc = vec![0.0; first.len()];
    for id in &ids {
        for (a, v) in acc.iter_mut().zip(stores.latents.value(&latent_name(id)).data()) {
            *a += v;
        }
    }
    acc.iter_mut().for_each(|a| *a /= ids.len() as f64);
    Tensor::new(first.shape().to_vec(), acc)
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub model: Model,
    pub run_dir: PathBuf,
    pub config_hash: String,
    sphere_latent: Tensor,
}

const EVAL_EVERY: usize = 100;

impl Trainer {
    /// Fresh, deterministically initialised networks writing into `run_dir`.
    pub fn new(cfg: TrainConfig, run_dir: &Path) -> Result<Self> {
        cfg.validate()?;
        let nets = Networks::new(&cfg.net, cfg.resolution, &cfg.march, cfg.init_step)?;
        let stores = Stores::init(&nets, cfg.seed)?;
        let sphere_latent = uniform(&mut substream(cfg.seed, "sphere_latent", 0), &[1, cfg.net.latent_dim], 1.0);
        Ok(Trainer {
            config_hash: cfg.hash(),
            cfg,
            model: Model { nets, stores },
            run_dir: run_dir.to_path_buf(),
            sphere_latent,
        })
    }

    pub fn nets(&self) -> &Networks {
        &self.model.nets
    }

    pub fn log_path(&self) -> PathBuf {
        self.run_dir.join("train_log.ndjson")
    }

    pub fn save_checkpoint(&self, phase: Phase, iteration: usize, complete: bool) -> Result<PathBuf> {
        fs::create_dir_all(&self.run_dir)?;
        let dir = checkpoint_dir(&self.run_dir, phase);
        let tmp = self.run_dir.join(format!(".ckpt_{}.partial", phase.name()));
        if tmp.exists() {
            fs::remove_dir_all(&tmp)?;
        }
        fs::create_dir_all(&tmp)?;
        for name in STORE_NAMES {
            self.model.stores.get(name).unwrap().save(&tmp.join(format!("{name}.ckpt")))?;
        }
        write_json(
            &tmp.join("meta.json"),
            &CheckpointMeta {
                phase,
                iteration,
                complete,
                mode: phase.mode(),
                config_hash: self.config_hash.clone(),
                net: self.cfg.net.clone(),
                march: self.cfg.march,
                resolution: self.cfg.resolution,
            },
        )?;
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::rename(&tmp, &dir)?;
        Ok(dir)
    }

    /// Replaces the parameters with the checkpoint of `phase`.
    pub fn load_checkpoint(&mut self, phase: Phase) -> Result<CheckpointMeta> {
        let dir = checkpoint_dir(&self.run_dir, phase);
        if !dir.join("meta.json").exists() {
            return Err(Error::Prerequisite(format!("no checkpoint for stage {} in {}", phase.name(), self.run_dir.display())));
        }
        let meta = read_checkpoint_meta(&dir)?;
        if meta.phase != phase {
            return Err(Error::Format(format!("{} holds stage {}", dir.display(), meta.phase.name())));
        }
        if meta.config_hash != self.config_hash {
            log::warn!(
                "checkpoint {} was written with config {}, current config is {}",
                dir.display(),
                meta.config_hash,
                self.config_hash
            );
        }
        let stores = load_stores(&dir)?;
        stores.check_layout(&self.model.stores)?;
        self.model.stores = stores;
        Ok(meta)
    }

    fn append_log(&self, record: &LogRecord) -> Result<()> {
        fs::create_dir_all(&self.run_dir)?;
        let mut f = fs::OpenOptions::new().create(true).append(true).open(self.log_path())?;
        writeln!(f, "{}", serde_json::to_string(record)?)?;
        Ok(())
    }

    /// Runs (or resumes) one phase. Without `resume` the phase starts from
    /// the completed checkpoint of its prerequisite.
    pub fn run_phase(&mut self, phase: Phase, dataset: Option<&Dataset>, resume: bool) -> Result<PhaseSummary> {
        let mut start = 0;
        let dir = checkpoint_dir(&self.run_dir, phase);
        let mut resumed = false;
        if resume && dir.join("meta.json").exists() {
            let meta = self.load_checkpoint(phase)?;
            if meta.complete {
                log::info!("stage {} already complete", phase.name());
                return Ok(PhaseSummary {
                    start_iteration: meta.iteration,
                    skipped: true,
                    ..Default::default()
                });
            }
            start = meta.iteration;
            resumed = true;
        }
        if !resumed {
            if let Some(pre) = phase.prerequisite() {
                let meta = self.load_checkpoint(pre)?;
                if !meta.complete {
                    return Err(Error::Prerequisite(format!("stage {} checkpoint is incomplete", pre.name())));
                }
            }
            if phase == Phase::DeformInit {
                let latent = init_canonical_latent(&self.model.stores)?;
                self.model.stores.canonical.set_value(CANONICAL_LATENT, latent.to_vec())?;
            }
        }
        let dataset = if phase.needs_dataset() {
            let ds = dataset.ok_or_else(|| Error::Prerequisite(format!("stage {} needs a dataset", phase.name())))?;
            self.check_dataset(ds)?;
            Some(ds)
        } else {
            None
        };
        let budget = self.cfg.iterations.get(phase);
        log::info!("stage {}: iterations {start}..{budget}", phase.name());
        let mut summary = PhaseSummary {
            start_iteration: start,
            ..Default::default()
        };
        let mut it = start;
        while it < budget {
            if matches!(phase, Phase::Sphere | Phase::DeformInit) && it > start && it % EVAL_EVERY == 0 {
                let mae = self.pretrain_mae(phase, 2000)?;
                if mae < self.cfg.pretrain_target_mae {
                    log::info!("stage {}: MAE {mae:.4} reached target at iteration {it}", phase.name());
                    break;
                }
            }
            let t0 = Instant::now();
            let report = match self.step(phase, it, dataset) {
                Ok(r) => r,
                Err(e @ (Error::NonFinite(_) | Error::NonFiniteGradient(_))) => {
                    self.save_checkpoint(phase, it, false)?;
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            it += 1;
            self.append_log(&LogRecord {
                iteration: it,
                stage: phase.name().into(),
                terms: report,
                wall_ms: t0.elapsed().as_secs_f64() * 1e3,
            })?;
            summary.history.push(report);
            if it % self.cfg.checkpoint_every == 0 && it < budget {
                self.save_checkpoint(phase, it, false)?;
            }
        }
        summary.iterations = it - start;
        match phase {
            Phase::Sphere | Phase::DeformInit => {
                let mae = self.pretrain_mae(phase, 10_000)?;
                summary.mae = Some(mae);
                if !(mae < self.cfg.pretrain_max_mae) {
                    self.save_checkpoint(phase, it, false)?;
                    return Err(Error::NotConverged(format!(
                        "stage {} MAE {mae:.4} ≥ {} after {it} iterations",
                        phase.name(),
                        self.cfg.pretrain_max_mae
                    )));
                }
            }
            Phase::Direct | Phase::Deform => self.cache_latents(dataset.unwrap())?,
        }
        self.save_checkpoint(phase, it, true)?;
        Ok(summary)
    }

    /// Runs every phase in order (skipping completed ones when resuming).
    pub fn run_all(&mut self, dataset: &Dataset, resume: bool) -> Result<Vec<PhaseSummary>> {
        Phase::ORDER.iter().map(|&p| self.run_phase(p, Some(dataset), resume)).collect()
    }

    fn check_dataset(&self, ds: &Dataset) -> Result<()> {
        if ds.samples.is_empty() {
            return Err(Error::Invalid("dataset has no samples".into()));
        }
        if ds.manifest.resolution != self.cfg.resolution {
            return Err(Error::Invalid(format!(
                "dataset resolution {} differs from the configured {}",
                ds.manifest.resolution, self.cfg.resolution
            )));
        }
        Ok(())
    }

    /// Encodes every sample into the latent cache.
    pub fn cache_latents(&mut self, ds: &Dataset) -> Result<()> {
        let mut cache = crate::autodiff::ParamStore::new();
        for s in &ds.samples {
            cache.insert(latent_name(&s.sample_id), self.model.encode(s)?)?;
        }
        self.model.stores.latents = cache;
        Ok(())
    }

    /// Mean absolute pretraining residual on `count` fixed points.
    pub fn pretrain_mae(&self, phase: Phase, count: usize) -> Result<f64> {
        let pts = omega(self.cfg.seed, "pretrain_eval", count as u64, count);
        let r = self.cfg.sphere_radius;
        let mut tape = Tape::inference();
        let s = &self.model.stores;
        let nets = &self.model.nets;
        match phase {
            Phase::Sphere => {
                let f = Fields::direct(nets, &mut tape, &s.shape.frozen(), &s.uncond.frozen(), &self.sphere_latent)?;
                let out = f.eval(nets, &mut tape, &pts)?;
                let target = sphere_sdf(pts.data(), r);
                Ok(out.sdf.data().iter().zip(&target).map(|(a, b)| (a - b).abs()).sum::<f64>() / count as f64)
            }
            Phase::DeformInit => {
                let ids = s.cached_latent_ids();
                let used: Vec<&String> = ids.iter().take(8).collect();
                if used.is_empty() {
                    return Err(Error::Prerequisite("latent cache is empty".into()));
                }
                let canon = s.canonical.value(CANONICAL_LATENT);
                let f_init = Fields::direct(nets, &mut tape, &s.shape.frozen(), &s.uncond.frozen(), canon)?;
                let target = f_init.eval(nets, &mut tape, &pts)?.sdf;
                let mut total = 0.0;
                for id in &used {
                    let field = nets.deform.field(&mut tape, &s.deform.frozen(), s.latents.value(&latent_name(id)))?;
                    let d = nets.deform.forward(&mut tape, &field, &pts)?;
                    let moved: Vec<f64> = pts.data().iter().zip(d.delta.data()).map(|(a, b)| a + b).collect();
                    let sp = sphere_sdf(&moved, r);
                    total += sp.iter().zip(target.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / count as f64;
                }
                Ok(total / used.len() as f64)
            }
            _ => Err(Error::Invalid("pretraining MAE is defined for stages 0a and 0b".into())),
        }
    }

    /// One optimisation step of `phase` at iteration `it`.
    pub fn step(&mut self, phase: Phase, it: usize, dataset: Option<&Dataset>) -> Result<LossReport> {
        match phase {
            Phase::Sphere => self.step_sphere(it),
            Phase::Direct => self.step_direct(it, dataset.ok_or_else(|| Error::Prerequisite("dataset".into()))?),
            Phase::DeformInit => self.step_deform_init(it),
            Phase::Deform => self.step_deform(it, dataset.ok_or_else(|| Error::Prerequisite("dataset".into()))?),
        }
    }

    fn bind(&self, tape: &mut Tape, phase: Phase) -> Vec<(&'static str, Bound)> {
        phase
            .trained()
            .iter()
            .map(|&n| (n, self.model.stores.get(n).unwrap().bind(tape)))
            .collect()
    }

    fn apply(&mut self, tape: &Tape, total: &Tensor, bound: &[(&'static str, Bound)]) -> Result<()> {
        let grads = tape.backward(total)?;
        for (name, b) in bound {
            self.model.stores.get_mut(name).unwrap().accumulate(b, &grads);
        }
        // check everything first so a bad step leaves all stores untouched
        for (name, _) in bound {
            let store = self.model.stores.get(name).unwrap();
            let bad = store
                .iter()
                .find(|(_, e)| e.grad.iter().any(|g| !g.is_finite()))
                .map(|(p, _)| p.clone());
            if let Some(p) = bad {
                for (n, _) in bound {
                    self.model.stores.get_mut(n).unwrap().zero_grad();
                }
                return Err(Error::NonFiniteGradient(p));
            }
        }
        if self.cfg.grad_clip > 0.0 {
            let norm = bound
                .iter()
                .map(|(n, _)| self.model.stores.get(n).unwrap().grad_sq_norm())
                .sum::<f64>()
                .sqrt();
            log::trace!("gradient norm {norm:.6}");
            if norm > self.cfg.grad_clip {
                for (n, _) in bound {
                    self.model.stores.get_mut(n).unwrap().scale_grad(self.cfg.grad_clip / norm);
                }
            }
        }
        for (name, _) in bound {
            self.model.stores.get_mut(name).unwrap().adam_step(&self.cfg.adam)?;
        }
        Ok(())
    }

    fn pick_sample<'a>(&self, ds: &'a Dataset, it: usize) -> &'a TrainingSample {
        let i = substream(self.cfg.seed, "sample", it as u64).gen_range(0..ds.samples.len());
        &ds.samples[i]
    }

    fn step_sphere(&mut self, it: usize) -> Result<LossReport> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, Phase::Sphere);
        let nets = &self.model.nets;
        let x = omega(self.cfg.seed, "omega", it as u64, self.cfg.omega_samples);
        let fields = Fields::direct(nets, &mut tape, &bound[0].1, &bound[1].1, &self.sphere_latent)?;
        let out = fields.eval(nets, &mut tape, &x)?;
        let target = Tensor::new(vec![x.rows(), 1], sphere_sdf(x.data(), self.cfg.sphere_radius))?;
        let diff = tape.sub(&out.sdf, &target)?;
        let sq = tape.square(&diff);
        let mse = tape.mean(&sq)?;
        let mut parts = LossParts::zeros();
        parts.sdf = mse;
        let weights = LossWeights {
            rgb: 0.0,
            sdf: 1.0,
            dt: 0.0,
            eik: 0.0,
            def: 0.0,
        };
        let (total, report) = total_loss(&mut tape, &parts, &weights)?;
        self.apply(&tape, &total, &bound)?;
        Ok(report)
    }

    fn step_direct(&mut self, it: usize, ds: &Dataset) -> Result<LossReport> {
        let sample = self.pick_sample(ds, it);
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, Phase::Direct);
        let (enc, shape, uncond, lstm) = (&bound[0].1, &bound[1].1, &bound[2].1, &bound[3].1);
        let nets = &self.model.nets;
        let latent = nets
            .encoder
            .encode(&mut tape, enc, &sample.image_hwc(), sample.height, sample.width)?;
        let fields = Fields::direct(nets, &mut tape, shape, uncond, &latent)?;
        let rays = sample_rays(sample, self.cfg.rays_per_iteration, &mut substream(self.cfg.seed, "rays", it as u64))?;
        let m = march_fields(nets, &mut tape, lstm, &fields, &rays)?;
        let rgb = rgb_loss(&mut tape, &m.rgb, &rays)?;
        let sc = sdf_consistency_loss(&mut tape, &m.sdf, &rays, self.cfg.margin, sample.camera.pixel_footprint())?;
        let x = omega(self.cfg.seed, "omega", it as u64, self.cfg.omega_samples);
        let (xyz, feat) = fields.canonical(nets, &mut tape, &x)?;
        let eik = eikonal_loss(&mut tape, &xyz, self.cfg.fd_step, |t, p| fields.canonical_sdf(nets, t, p, feat.as_ref()))?;
        let parts = LossParts {
            rgb: rgb.value,
            sdf: sc.on,
            dt: sc.off,
            eik,
            def: Tensor::scalar(0.0),
        };
        let (total, report) = total_loss(&mut tape, &parts, &self.cfg.loss)?;
        self.apply(&tape, &total, &bound)?;
        Ok(report)
    }

    fn step_deform_init(&mut self, it: usize) -> Result<LossReport> {
        let ids = self.model.stores.cached_latent_ids();
        if ids.is_empty() {
            return Err(Error::Prerequisite("latent cache is empty; run stage 1 first".into()));
        }
        let id = &ids[substream(self.cfg.seed, "sample", it as u64).gen_range(0..ids.len())];
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, Phase::DeformInit);
        let s = &self.model.stores;
        let nets = &self.model.nets;
        let x = omega(self.cfg.seed, "omega", it as u64, self.cfg.omega_samples);
        let f_init = Fields::direct(
            nets,
            &mut tape,
            &s.shape.frozen(),
            &s.uncond.frozen(),
            s.canonical.value(CANONICAL_LATENT),
        )?;
        let target = f_init.eval(nets, &mut tape, &x)?.sdf;
        let target_feat = nets.uncond.forward(&mut tape, &s.uncond.frozen(), &x)?;
        let field = nets.deform.field(&mut tape, &bound[0].1, s.latents.value(&latent_name(id)))?;
        let out = nets.deform.forward(&mut tape, &field, &x)?;
        let p = tape.add(&x, &out.delta)?;
        let p2 = tape.square(&p);
        let r2 = tape.sum_last(&p2);
        let r2 = tape.add_scalar(&r2, 1e-12);
        let r = tape.sqrt(&r2);
        let sphere = tape.add_scalar(&r, -self.cfg.sphere_radius);
        let diff = tape.sub(&sphere, &target)?;
        let sq = tape.square(&diff);
        let mut residual = tape.mean(&sq)?;
        if let (Some(h), Some(u)) = (&out.features, &target_feat) {
            let d = tape.sub(h, u)?;
            let d2 = tape.square(&d);
            let per = tape.sum_last(&d2);
            let fm = tape.mean(&per)?;
            let fm = tape.scale(&fm, self.cfg.feature_match);
            residual = tape.add(&residual, &fm)?;
        }
        let def = deformation_smoothness_loss(&mut tape, &x, self.cfg.fd_step, |t, q| {
            Ok(nets.deform.forward(t, &field, q)?.delta)
        })?;
        let mut parts = LossParts::zeros();
        parts.sdf = residual;
        parts.def = def;
        let weights = LossWeights {
            rgb: 0.0,
            sdf: 1.0,
            dt: 0.0,
            eik: 0.0,
            def: self.cfg.loss.def,
        };
        let (total, report) = total_loss(&mut tape, &parts, &weights)?;
        self.apply(&tape, &total, &bound)?;
        Ok(report)
    }

    fn step_deform(&mut self, it: usize, ds: &Dataset) -> Result<LossReport> {
        let sample = self.pick_sample(ds, it);
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, Phase::Deform);
        let (enc, shape, deform, lstm, canon) = (&bound[0].1, &bound[1].1, &bound[2].1, &bound[3].1, &bound[4].1);
        let nets = &self.model.nets;
        let latent = nets
            .encoder
            .encode(&mut tape, enc, &sample.image_hwc(), sample.height, sample.width)?;
        let fields = Fields::deformed(nets, &mut tape, shape, canon.get(CANONICAL_LATENT), deform, &latent)?;
        let rays = sample_rays(sample, self.cfg.rays_per_iteration, &mut substream(self.cfg.seed, "rays", it as u64))?;
        let m = march_fields(nets, &mut tape, lstm, &fields, &rays)?;
        let rgb = rgb_loss(&mut tape, &m.rgb, &rays)?;
        let sc = sdf_consistency_loss(&mut tape, &m.sdf, &rays, self.cfg.margin, sample.camera.pixel_footprint())?;
        let x = omega(self.cfg.seed, "omega", it as u64, self.cfg.omega_samples);
        let (xyz, feat) = fields.canonical(nets, &mut tape, &x)?;
        let eik = eikonal_loss(&mut tape, &xyz, self.cfg.fd_step, |t, p| fields.canonical_sdf(nets, t, p, feat.as_ref()))?;
        let dfield = fields.deform.as_ref().expect("deformed fields");
        let def = deformation_smoothness_loss(&mut tape, &x, self.cfg.fd_step, |t, q| {
            Ok(nets.deform.forward(t, dfield, q)?.delta)
        })?;
        let parts = LossParts {
            rgb: rgb.value,
            sdf: sc.on,
            dt: sc.off,
            eik,
            def,
        };
        let (total, report) = total_loss(&mut tape, &parts, &self.cfg.loss)?;
        self.apply(&tape, &total, &bound)?;
        Ok(report)
    }
}

/// Model and field mode of the most advanced completed checkpoint in `run_dir`.
pub fn latest_model(run_dir: &Path) -> Result<(Model, CheckpointMeta)> {
    for phase in Phase::ORDER.iter().rev() {
        let dir = checkpoint_dir(run_dir, *phase);
        if dir.join("meta.json").exists() && read_checkpoint_meta(&dir)?.complete {
            return load_model(&dir);
        }
    }
    Err(Error::Prerequisite(format!("no completed checkpoint in {}", run_dir.display())))
}
