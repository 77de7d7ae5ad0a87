//! The `topofield` command line: dataset generation, training,
//! reconstruction, evaluation and texture transfer.
//!
//! Every command reads an optional JSON [`RunConfig`] (unknown keys are
//! rejected) and applies its flags on top. Exit codes: 0 success, 2 usage
//! error, 3 numerical failure, 4 missing prerequisite, 1 anything else.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extraction::{
    euler_characteristic, export_mesh_with_comments, marching_cubes, paint_stripes, sample_surface_points_seeded,
    texture_transfer, GridField, Mesh,
};
use crate::metrics::{evaluate, normalize_to_unit_cube, MetricsReport, DEFAULT_THRESHOLD, EMD_MAX_POINTS};
use crate::renderer::write_depth_png;
use crate::synthdata::{analytic_sdf, generate_dataset, load_sample, write_json, Dataset, GenConfig, ShapeSpec, TrainingSample};
use crate::trainer::{
    checkpoint_dir, config_hash, latest_model, load_model, read_checkpoint_meta, CheckpointMeta, Model, Phase,
    Reconstruction, TrainConfig, Trainer,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconstructConfig {
    pub resolution: usize,
    /// `obj` or `ply`
    pub format: String,
    pub canonical_colors: bool,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        ReconstructConfig {
            resolution: 64,
            format: "obj".into(),
            canonical_colors: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Precision/recall distance threshold.
    pub threshold: f64,
    /// Surface samples per shape.
    pub points: usize,
    pub emd_points: usize,
    /// Grid resolution of the ground-truth meshes.
    pub gt_resolution: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            threshold: DEFAULT_THRESHOLD,
            points: 2048,
            emd_points: EMD_MAX_POINTS,
            gt_resolution: 128,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TextureConfig {
    /// 0, 1 or 2 (x, y, z)
    pub axis: usize,
    pub stripes: usize,
}

impl Default for TextureConfig {
    fn default() -> Self {
        TextureConfig { axis: 1, stripes: 8 }
    }
}

/// Everything a run needs, in one JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data_dir: PathBuf,
    pub run_dir: PathBuf,
    pub output_dir: PathBuf,
    pub gen: GenConfig,
    pub train: TrainConfig,
    pub reconstruct: ReconstructConfig,
    pub eval: EvalConfig,
    pub texture: TextureConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_dir: "data".into(),
            run_dir: "run".into(),
            output_dir: "out".into(),
            gen: GenConfig::default(),
            train: TrainConfig::default(),
            reconstruct: ReconstructConfig::default(),
            eval: EvalConfig::default(),
            texture: TextureConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::Invalid(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&s).map_err(|e| Error::Invalid(format!("config {}: {e}", path.display())))
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

#[derive(Parser, Debug)]
#[command(name = "topofield", version, about = "Single-view implicit-surface reconstruction with topology-aware deformation fields")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a procedural dataset of posed renders.
    GenData(GenDataArgs),
    /// Run training phases.
    Train(TrainArgs),
    /// Extract a mesh (and a depth render) for one image.
    Reconstruct(ReconstructArgs),
    /// Compare reconstructions of every instance with its ground truth.
    Eval(EvalArgs),
    /// Paint stripes on one reconstruction and carry them to another.
    TextureTransfer(TextureArgs),
}

#[derive(Args, Debug, Default)]
pub struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of instances.
    #[arg(long)]
    pub count: Option<usize>,
    /// Fraction of torus-family (genus-1) instances.
    #[arg(long)]
    pub genus_mix: Option<f64>,
    /// Image width and height in pixels.
    #[arg(long)]
    pub res: Option<usize>,
    #[arg(long)]
    pub views_per_instance: Option<usize>,
    /// Output dataset directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write into a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// all, 0a, 1, 0b or 2
    #[arg(long, default_value = "all")]
    pub stage: String,
    /// Continue from existing checkpoints of the requested stages.
    #[arg(long)]
    pub resume: bool,
    /// Dataset directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Run directory for checkpoints and the loss log.
    #[arg(long)]
    pub run: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct ModelArgs {
    /// Run directory; the most advanced completed checkpoint is used.
    #[arg(long)]
    pub run: Option<PathBuf>,
    /// A specific checkpoint directory (overrides --run).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Dataset directory used to resolve image ids.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Marching-cubes grid resolution.
    #[arg(long)]
    pub res: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReconstructArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Sample or instance id in the dataset, or a sample directory.
    #[arg(long)]
    pub image: String,
    /// Also write a mesh coloured by canonical coordinates.
    #[arg(long)]
    pub canonical_colors: bool,
    /// obj or ply
    #[arg(long)]
    pub format: Option<String>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Precision/recall threshold.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Surface samples per shape.
    #[arg(long)]
    pub points: Option<usize>,
    /// Report path stem; `.json` and `.csv` are written.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TextureArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub source: String,
    #[arg(long)]
    pub target: String,
    /// Stripe axis: x, y or z.
    #[arg(long)]
    pub paint: Option<String>,
    #[arg(long)]
    pub stripes: Option<usize>,
}

/// Maps an error to the process exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Invalid(_) | Error::Json(_) => 2,
        Error::NonFinite(_) | Error::NonFiniteGradient(_) | Error::NotConverged(_) => 3,
        Error::Prerequisite(_) => 4,
        _ => 1,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    configure_threads();
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var("TOPOFIELD_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // fails only if the pool already exists
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

pub fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData(a) => cmd_gen_data(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Reconstruct(a) => cmd_reconstruct(&a).map(|_| ()),
        Command::Eval(a) => cmd_eval(&a).map(|_| ()),
        Command::TextureTransfer(a) => cmd_texture_transfer(&a).map(|_| ()),
    }
}

fn base_config(c: &Common) -> Result<RunConfig> {
    match &c.config {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

pub fn cmd_gen_data(a: &GenDataArgs) -> Result<()> {
    let mut cfg = base_config(&a.common)?;
    if let Some(v) = a.seed {
        cfg.gen.seed = v;
    }
    if let Some(v) = a.count {
        cfg.gen.count = v;
    }
    if let Some(v) = a.genus_mix {
        cfg.gen.genus_mix = v;
    }
    if let Some(v) = a.res {
        cfg.gen.resolution = v;
    }
    if let Some(v) = a.views_per_instance {
        cfg.gen.views_per_instance = v;
    }
    if let Some(v) = &a.out {
        cfg.data_dir = v.clone();
    }
    cfg.gen.validate()?;
    let out = &cfg.data_dir;
    if out.exists() && fs::read_dir(out)?.next().is_some() {
        if !a.force {
            return Err(Error::Invalid(format!("{} is not empty (use --force)", out.display())));
        }
        fs::remove_dir_all(out)?;
    }
    let m = generate_dataset(&cfg.gen, out, Some(cfg.hash()))?;
    log::info!("wrote {} instances to {}", m.instances.len(), out.display());
    Ok(())
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut cfg = base_config(&a.common)?;
    if let Some(v) = &a.data {
        cfg.data_dir = v.clone();
    }
    if let Some(v) = &a.run {
        cfg.run_dir = v.clone();
    }
    if let Some(v) = a.seed {
        cfg.train.seed = v;
    }
    let stages: Vec<Phase> = match a.stage.as_str() {
        "all" => Phase::ORDER.to_vec(),
        s => vec![Phase::parse(s)?],
    };
    let needs_data = stages.iter().any(|p| matches!(p, Phase::Direct | Phase::Deform));
    let dataset = if needs_data {
        let ds = Dataset::load(&cfg.data_dir).map_err(|e| Error::Prerequisite(format!("dataset: {e}")))?;
        if ds.manifest.resolution != cfg.train.resolution {
            log::info!("using the dataset resolution {} for the encoder", ds.manifest.resolution);
            cfg.train.resolution = ds.manifest.resolution;
        }
        Some(ds)
    } else {
        None
    };
    let mut trainer = Trainer::new(cfg.train.clone(), &cfg.run_dir)?;
    trainer.config_hash = cfg.hash();
    fs::create_dir_all(&cfg.run_dir)?;
    write_json(&cfg.run_dir.join("config.json"), &cfg)?;
    for p in stages {
        let s = trainer.run_phase(p, dataset.as_ref(), a.resume)?;
        if s.skipped {
            log::info!("stage {} skipped (complete)", p.name());
        } else {
            let last = s.history.last().map(|r| r.total).unwrap_or(f64::NAN);
            log::info!("stage {}: {} iterations, final loss {last:.5}", p.name(), s.iterations);
        }
    }
    Ok(())
}

/// Resolved model, configuration and dataset for the inference commands.
pub struct Session {
    pub cfg: RunConfig,
    pub model: Model,
    pub meta: CheckpointMeta,
    pub dataset: Option<Dataset>,
    pub resolution: usize,
    pub out: PathBuf,
}

impl Session {
    pub fn open(common: &Common, m: &ModelArgs) -> Result<Self> {
        let mut cfg = base_config(common)?;
        if let Some(v) = &m.run {
            cfg.run_dir = v.clone();
        }
        if let Some(v) = &m.data {
            cfg.data_dir = v.clone();
        }
        if let Some(v) = &m.out {
            cfg.output_dir = v.clone();
        }
        if let Some(v) = m.res {
            cfg.reconstruct.resolution = v;
        }
        let (model, meta) = match &m.checkpoint {
            Some(dir) => {
                if !dir.join("meta.json").exists() {
                    return Err(Error::Prerequisite(format!("no checkpoint at {}", dir.display())));
                }
                load_model(dir)?
            }
            None => latest_model(&cfg.run_dir)?,
        };
        let dataset = if cfg.data_dir.join("manifest.json").exists() {
            Some(Dataset::load(&cfg.data_dir)?)
        } else {
            None
        };
        fs::create_dir_all(&cfg.output_dir)?;
        Ok(Session {
            resolution: cfg.reconstruct.resolution,
            out: cfg.output_dir.clone(),
            cfg,
            model,
            meta,
            dataset,
        })
    }

    pub fn hash(&self) -> String {
        self.cfg.hash()
    }

    fn comments(&self) -> Vec<String> {
        vec![
            format!("topofield config_hash {}", self.hash()),
            format!("checkpoint stage {} iteration {}", self.meta.phase.name(), self.meta.iteration),
        ]
    }

    /// A sample by id (sample or instance) or by directory path.
    pub fn sample(&self, key: &str) -> Result<TrainingSample> {
        if let Some(s) = self.dataset.as_ref().and_then(|d| d.find(key)) {
            return Ok(s.clone());
        }
        let p = Path::new(key);
        if p.join("camera.json").exists() {
            return load_sample(p);
        }
        Err(Error::Prerequisite(format!("image `{key}` not found")))
    }

    pub fn reconstruct(&self, sample: &TrainingSample) -> Result<Reconstruction> {
        let latent = self.model.latent_for(sample)?;
        let fields = self.model.fields(&latent, self.meta.mode)?;
        self.model.reconstruct(&fields, self.resolution)
    }

    fn mesh_path(&self, stem: &str) -> PathBuf {
        self.out.join(format!("{stem}.{}", self.cfg.reconstruct.format))
    }

    pub fn export(&self, mesh: &Mesh, stem: &str) -> Result<PathBuf> {
        let path = self.mesh_path(stem);
        export_mesh_with_comments(mesh, &path, &self.comments())?;
        Ok(path)
    }
}

/// Paths written by `reconstruct`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReconstructOutput {
    pub config_hash: String,
    pub image: String,
    pub mesh: PathBuf,
    pub canonical_mesh: Option<PathBuf>,
    pub depth: PathBuf,
    pub vertices: usize,
    pub triangles: usize,
    pub euler_characteristic: i64,
}

pub fn cmd_reconstruct(a: &ReconstructArgs) -> Result<ReconstructOutput> {
    let mut session = Session::open(&a.common, &a.model)?;
    if let Some(f) = &a.format {
        session.cfg.reconstruct.format = f.clone();
    }
    if a.canonical_colors {
        session.cfg.reconstruct.canonical_colors = true;
    }
    if !matches!(session.cfg.reconstruct.format.as_str(), "obj" | "ply") {
        return Err(Error::Invalid(format!("unknown mesh format `{}`", session.cfg.reconstruct.format)));
    }
    let sample = session.sample(&a.image)?;
    let rec = session.reconstruct(&sample)?;
    let id = sample.sample_id.clone();
    let mut plain = rec.mesh.clone();
    plain.colors = None;
    let mesh = session.export(&plain, &id)?;
    let canonical_mesh = if session.cfg.reconstruct.canonical_colors {
        Some(session.export(&rec.mesh, &format!("{id}_canonical"))?)
    } else {
        None
    };
    let fields = session.model.fields(&session.model.latent_for(&sample)?, session.meta.mode)?;
    let render = session.model.render(&fields, &sample.camera)?;
    let dist = sample.camera.distance();
    let depth = session.out.join(format!("{id}_depth.png"));
    write_depth_png(&depth, &render.depth, render.width, render.height, dist - 1.0, dist + 1.0)?;
    let out = ReconstructOutput {
        config_hash: session.hash(),
        image: id.clone(),
        mesh,
        canonical_mesh,
        depth,
        vertices: rec.mesh.vertices.len(),
        triangles: rec.mesh.triangles.len(),
        euler_characteristic: euler_characteristic(&rec.mesh).value,
    };
    write_json(&session.out.join(format!("{id}_reconstruct.json")), &out)?;
    Ok(out)
}

/// Closed mesh of an analytic shape.
pub fn ground_truth_mesh(spec: &ShapeSpec, resolution: usize) -> Result<Mesh> {
    let grid = GridField::sample(resolution, 4096, |pts| Ok(pts.iter().map(|&p| analytic_sdf(spec, p)).collect()))?;
    marching_cubes(&grid, 0.0)
}

/// Metrics between two meshes after normalising each to the unit cube.
pub fn compare_meshes(pred: &Mesh, gt: &Mesh, cfg: &EvalConfig, seed: u64) -> Result<MetricsReport> {
    let p = normalize_to_unit_cube(&sample_surface_points_seeded(pred, cfg.points, seed)?)?;
    let g = normalize_to_unit_cube(&sample_surface_points_seeded(gt, cfg.points, seed ^ 0x9e37_79b9)?)?;
    evaluate(&p, &g, cfg.threshold, cfg.emd_points)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InstanceEval {
    pub instance_id: String,
    pub sample_id: String,
    pub genus: u8,
    pub euler_characteristic: i64,
    pub vertices: usize,
    /// `None` when the reconstruction is empty.
    pub metrics: Option<MetricsReport>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub checkpoint_stage: String,
    pub threshold: f64,
    pub instances: Vec<InstanceEval>,
    /// Mean over instances with a non-empty reconstruction.
    pub mean: Option<MetricsReport>,
}

impl EvalReport {
    pub fn csv(&self) -> String {
        let mut s = format!("# config_hash {}\ninstance,{}\n", self.config_hash, MetricsReport::CSV_HEADER);
        for i in &self.instances {
            match &i.metrics {
                Some(m) => s.push_str(&format!("{},{}\n", i.instance_id, m.csv_row())),
                None => s.push_str(&format!("{},nan,nan,nan,nan,nan,nan,nan\n", i.instance_id)),
            }
        }
        if let Some(m) = &self.mean {
            s.push_str(&format!("mean,{}\n", m.csv_row()));
        }
        s
    }
}

pub fn cmd_eval(a: &EvalArgs) -> Result<EvalReport> {
    let mut session = Session::open(&a.common, &a.model)?;
    if let Some(t) = a.threshold {
        session.cfg.eval.threshold = t;
    }
    if let Some(n) = a.points {
        session.cfg.eval.points = n;
    }
    let ds = session
        .dataset
        .as_ref()
        .ok_or_else(|| Error::Prerequisite(format!("no dataset at {}", session.cfg.data_dir.display())))?;
    let mut instances = Vec::new();
    for (i, s) in ds.first_views().into_iter().enumerate() {
        let rec = session.reconstruct(s)?;
        let gt = ground_truth_mesh(&s.spec, session.cfg.eval.gt_resolution)?;
        let metrics = if rec.mesh.is_empty() {
            None
        } else {
            Some(compare_meshes(&rec.mesh, &gt, &session.cfg.eval, i as u64)?)
        };
        instances.push(InstanceEval {
            instance_id: s.instance_id.clone(),
            sample_id: s.sample_id.clone(),
            genus: s.spec.genus,
            euler_characteristic: euler_characteristic(&rec.mesh).value,
            vertices: rec.mesh.vertices.len(),
            metrics,
        });
    }
    let valid: Vec<MetricsReport> = instances.iter().filter_map(|i| i.metrics).collect();
    let report = EvalReport {
        config_hash: session.hash(),
        checkpoint_stage: session.meta.phase.name().into(),
        threshold: session.cfg.eval.threshold,
        mean: MetricsReport::mean(&valid),
        instances,
    };
    let stem = a.report.clone().unwrap_or_else(|| session.out.join("report"));
    if let Some(dir) = stem.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_json(&stem.with_extension("json"), &report)?;
    fs::write(stem.with_extension("csv"), report.csv())?;
    Ok(report)
}

/// Paths written by `texture-transfer`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TextureOutput {
    pub config_hash: String,
    pub source_mesh: PathBuf,
    pub target_mesh: PathBuf,
}

pub fn parse_axis(s: &str) -> Result<usize> {
    match s {
        "x" | "0" => Ok(0),
        "y" | "1" => Ok(1),
        "z" | "2" => Ok(2),
        _ => Err(Error::Invalid(format!("stripe axis `{s}` (expected x, y or z)"))),
    }
}

pub fn cmd_texture_transfer(a: &TextureArgs) -> Result<TextureOutput> {
    let mut session = Session::open(&a.common, &a.model)?;
    if let Some(p) = &a.paint {
        session.cfg.texture.axis = parse_axis(p)?;
    }
    if let Some(n) = a.stripes {
        session.cfg.texture.stripes = n;
    }
    let source = session.sample(&a.source)?;
    let target = session.sample(&a.target)?;
    let src = session.reconstruct(&source)?;
    let tgt = if target.sample_id == source.sample_id {
        src.clone()
    } else {
        session.reconstruct(&target)?
    };
    let painted = paint_stripes(&src.mesh, session.cfg.texture.axis, session.cfg.texture.stripes)?;
    let moved = texture_transfer(&painted, &src.canonical, &tgt.mesh, &tgt.canonical)?;
    let out = TextureOutput {
        config_hash: session.hash(),
        source_mesh: session.export(&painted, &format!("{}_painted", source.sample_id))?,
        target_mesh: session.export(&moved, &format!("{}_from_{}", target.sample_id, source.sample_id))?,
    };
    write_json(
        &session
            .out
            .join(format!("transfer_{}_{}.json", source.sample_id, target.sample_id)),
        &out,
    )?;
    Ok(out)
}

/// Checkpoint metadata of `stage` under `run_dir`, if present.
pub fn stage_meta(run_dir: &Path, stage: Phase) -> Option<CheckpointMeta> {
    read_checkpoint_meta(&checkpoint_dir(run_dir, stage)).ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_rejects_unknown_keys_and_roundtrips() {
        let c = RunConfig::default();
        let json = serde_json::to_string_pretty(&c).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
        assert!(serde_json::from_str::<RunConfig>(r#"{"train": {"lr": 1}}"#).is_err());
        let partial: RunConfig = serde_json::from_str(r#"{"gen": {"count": 3}}"#).unwrap();
        assert_eq!(partial.gen.count, 3);
        assert_eq!(partial.train, TrainConfig::default());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Invalid("x".into())), 2);
        assert_eq!(exit_code(&Error::NonFinite("x".into())), 3);
        assert_eq!(exit_code(&Error::Prerequisite("x".into())), 4);
        assert_eq!(run(["topofield", "bogus"]), 2);
        assert_eq!(run(["topofield", "train", "--stage", "7"]), 2);
    }

    #[test]
    fn axis_names() {
        assert_eq!(parse_axis("x").unwrap(), 0);
        assert_eq!(parse_axis("z").unwrap(), 2);
        assert!(parse_axis("w").is_err());
    }
}
