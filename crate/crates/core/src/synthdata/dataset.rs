use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::distance_transform;
use crate::renderer::{CameraPose, Vec3};
use crate::rng::substream;

use super::render::{render_sample, TrainingSample};
use super::shapes::{sample_shape, Family, ShapeSpec};

pub const CAMERA_DISTANCE: f64 = 2.5;
pub const FOV_DEG: f64 = 50.0;
pub const MIN_ELEVATION_DEG: f64 = -10.0;
pub const MAX_ELEVATION_DEG: f64 = 40.0;
const CAMERA_RETRIES: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub seed: u64,
    pub count: usize,
    /// Fraction of torus-family instances.
    pub genus_mix: f64,
    pub resolution: usize,
    pub views_per_instance: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            seed: 0,
            count: 16,
            genus_mix: 0.5,
            resolution: 64,
            views_per_instance: 1,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 || self.views_per_instance == 0 || self.resolution < 8 {
            return Err(Error::Invalid("count and views must be ≥ 1 and resolution ≥ 8".into()));
        }
        if !(0.0..=1.0).contains(&self.genus_mix) {
            return Err(Error::Invalid(format!("genus_mix {} outside [0, 1]", self.genus_mix)));
        }
        Ok(())
    }

    pub fn torus_count(&self) -> usize {
        (self.count as f64 * self.genus_mix).round() as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceEntry {
    pub id: String,
    pub genus: u8,
    pub samples: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub seed: u64,
    pub resolution: usize,
    pub views_per_instance: usize,
    pub genus_mix: f64,
    pub instances: Vec<InstanceEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl DatasetManifest {
    pub fn sample_ids(&self) -> Vec<String> {
        self.instances.iter().flat_map(|i| i.samples.iter().cloned()).collect()
    }
}

/// Per-sample metadata stored next to the images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleMeta {
    pub instance_id: String,
    pub view: usize,
    pub genus: u8,
    pub spec: ShapeSpec,
}

pub fn instance_id(i: usize) -> String {
    format!("inst{i:04}")
}

pub fn sample_id(instance: &str, view: usize) -> String {
    format!("{instance}_v{view:02}")
}

/// Look-at camera on the radius-2.5 sphere.
pub fn camera_at(azimuth: f64, elevation: f64, resolution: usize) -> Result<CameraPose> {
    let eye = [
        CAMERA_DISTANCE * elevation.cos() * azimuth.sin(),
        CAMERA_DISTANCE * elevation.sin(),
        CAMERA_DISTANCE * elevation.cos() * azimuth.cos(),
    ];
    CameraPose::look_at(eye, [0.0; 3], [0.0, 1.0, 0.0], FOV_DEG, resolution, resolution)
}

fn sample_angles(rng: &mut impl Rng) -> (f64, f64) {
    let az = rng.gen_range(0.0..std::f64::consts::TAU);
    let el = rng.gen_range(MIN_ELEVATION_DEG..=MAX_ELEVATION_DEG).to_radians();
    (az, el)
}

/// Which instances are torus-family: exactly `torus_count` of them, chosen
/// by a seeded shuffle.
pub fn family_assignment(cfg: &GenConfig) -> Vec<Family> {
    let mut order: Vec<usize> = (0..cfg.count).collect();
    let mut rng = substream(cfg.seed, "families", 0);
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let mut fam = vec![Family::Sphere; cfg.count];
    for &i in order.iter().take(cfg.torus_count()) {
        fam[i] = Family::Torus;
    }
    fam
}

/// Shape and rendered views for instance `i`.
pub fn generate_instance(cfg: &GenConfig, i: usize, family: Family) -> Result<Vec<TrainingSample>> {
    let id = instance_id(i);
    let mut rng = substream(cfg.seed, "instance", i as u64);
    let (az0, el0) = sample_angles(&mut rng);
    let spec = sample_shape(&mut rng, family, az0);
    let mut views = Vec::with_capacity(cfg.views_per_instance);
    for v in 0..cfg.views_per_instance {
        let sid = sample_id(&id, v);
        let (mut az, mut el) = if v == 0 { (az0, el0) } else { sample_angles(&mut rng) };
        let mut attempt = 0;
        loop {
            let cam = camera_at(az, el, cfg.resolution)?;
            match render_sample(&spec, &cam, &id, &sid) {
                Ok(s) => {
                    views.push(s);
                    break;
                }
                Err(e) if attempt + 1 >= CAMERA_RETRIES => return Err(e),
                Err(_) => {
                    attempt += 1;
                    (az, el) = sample_angles(&mut rng);
                }
            }
        }
    }
    Ok(views)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path).map_err(|e| Error::Format(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&s).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a sample directory (rgb.png, mask.png, camera.json, meta.json)
/// into a temporary sibling, then renames it into place.
pub fn write_sample(root: &Path, sample: &TrainingSample, view: usize) -> Result<PathBuf> {
    let dir = root.join(&sample.sample_id);
    let tmp = root.join(format!(".{}.partial", sample.sample_id));
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir_all(&tmp)?;
    let (w, h) = (sample.width as u32, sample.height as u32);
    let rgb: Vec<u8> = sample.rgb.iter().flat_map(|c| c.map(to_u8)).collect();
    image::RgbImage::from_raw(w, h, rgb)
        .ok_or_else(|| Error::Image("rgb buffer size".into()))?
        .save(tmp.join("rgb.png"))?;
    let mask: Vec<u8> = sample.mask.iter().map(|&b| if b { 255 } else { 0 }).collect();
    image::GrayImage::from_raw(w, h, mask)
        .ok_or_else(|| Error::Image("mask buffer size".into()))?
        .save(tmp.join("mask.png"))?;
    write_json(&tmp.join("camera.json"), &sample.camera)?;
    write_json(
        &tmp.join("meta.json"),
        &SampleMeta {
            instance_id: sample.instance_id.clone(),
            view,
            genus: sample.spec.genus,
            spec: sample.spec.clone(),
        },
    )?;
    if dir.exists() {
        fs::remove_dir_all(&dir)?;
    }
    fs::rename(&tmp, &dir)?;
    Ok(dir)
}

/// Generates and writes a dataset under `out`, returning its manifest.
pub fn generate_dataset(cfg: &GenConfig, out: &Path, config_hash: Option<String>) -> Result<DatasetManifest> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let families = family_assignment(cfg);
    let entries: Vec<InstanceEntry> = families
        .par_iter()
        .enumerate()
        .map(|(i, &family)| {
            let views = generate_instance(cfg, i, family)?;
            let mut samples = Vec::with_capacity(views.len());
            for (v, s) in views.iter().enumerate() {
                write_sample(out, s, v)?;
                samples.push(s.sample_id.clone());
            }
            Ok(InstanceEntry {
                id: instance_id(i),
                genus: views[0].spec.genus,
                samples,
            })
        })
        .collect::<Result<_>>()?;
    let manifest = DatasetManifest {
        seed: cfg.seed,
        resolution: cfg.resolution,
        views_per_instance: cfg.views_per_instance,
        genus_mix: cfg.genus_mix,
        instances: entries,
        config_hash,
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Loads one sample directory; the distance transform is recomputed.
pub fn load_sample(dir: &Path) -> Result<TrainingSample> {
    let camera: CameraPose = read_json(&dir.join("camera.json"))?;
    camera.validate()?;
    let meta: SampleMeta = read_json(&dir.join("meta.json"))?;
    let rgb_img = image::open(dir.join("rgb.png"))?.to_rgb8();
    let mask_img = image::open(dir.join("mask.png"))?.to_luma8();
    let (w, h) = (camera.width, camera.height);
    if rgb_img.dimensions() != (w as u32, h as u32) || mask_img.dimensions() != (w as u32, h as u32) {
        return Err(Error::Format(format!("{}: image size disagrees with camera", dir.display())));
    }
    let mask: Vec<bool> = mask_img.as_raw().iter().map(|&m| m >= 128).collect();
    let rgb: Vec<Vec3> = rgb_img
        .as_raw()
        .chunks_exact(3)
        .zip(&mask)
        .map(|(c, &m)| {
            if m {
                [c[0] as f64 / 255.0, c[1] as f64 / 255.0, c[2] as f64 / 255.0]
            } else {
                [0.0; 3]
            }
        })
        .collect();
    let dt = distance_transform(&mask, h, w)?;
    let sample_id = dir
        .file_name()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Format(format!("bad sample directory {}", dir.display())))?
        .to_string();
    Ok(TrainingSample {
        sample_id,
        instance_id: meta.instance_id,
        width: w,
        height: h,
        rgb,
        mask,
        dt,
        camera,
        spec: meta.spec,
    })
}

/// A loaded dataset in manifest order.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    pub samples: Vec<TrainingSample>,
}

impl Dataset {
    pub fn load(root: &Path) -> Result<Self> {
        let manifest: DatasetManifest = read_json(&root.join("manifest.json"))?;
        let samples = manifest
            .sample_ids()
            .iter()
            .map(|id| load_sample(&root.join(id)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            root: root.to_path_buf(),
            manifest,
            samples,
        })
    }

    pub fn find(&self, sample_or_instance: &str) -> Option<&TrainingSample> {
        self.samples
            .iter()
            .find(|s| s.sample_id == sample_or_instance)
            .or_else(|| self.samples.iter().find(|s| s.instance_id == sample_or_instance))
    }

    /// First sample of every instance.
    pub fn first_views(&self) -> Vec<&TrainingSample> {
        self.manifest
            .instances
            .iter()
            .filter_map(|inst| inst.samples.first().and_then(|s| self.find(s)))
            .collect()
    }
}
