//! Learnable components: image encoder, hypernetworks, DeformNet, the
//! (canonical) shape generator and the un-conditioned point-feature MLP.

mod encoder;
mod hyper;
mod mlp;
mod posenc;

pub use encoder::{conv2d, im2col, ImageEncoder};
pub use hyper::{HyperNetwork, LayerInit};
pub use mlp::{linear, mlp_forward, GeneratedWeights, MlpOutput, MlpSpec, NormParams};
pub use posenc::{encoded_dim, positional_encode};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Bound, ParamStore, Tape, Tensor};
use crate::error::{Error, Result};

pub fn uniform(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| if bound > 0.0 { rng.gen_range(-bound..=bound) } else { 0.0 })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape product")
}

pub fn kaiming_uniform(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Tensor {
    uniform(rng, shape, (6.0 / fan_in.max(1) as f64).sqrt())
}

/// Network hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    /// Point-feature dimension (0 disables features).
    pub k: usize,
    pub latent_dim: usize,
    pub trunk_width: usize,
    pub trunk_depth: usize,
    pub hyper_hidden: usize,
    /// Positional-encoding frequencies for 3D points.
    pub pe_point_freqs: usize,
    /// Positional-encoding frequencies for point features.
    pub pe_feature_freqs: usize,
    pub uncond_hidden: usize,
    pub encoder_channels: Vec<usize>,
    pub lstm_hidden: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            k: 4,
            latent_dim: 128,
            trunk_width: 128,
            trunk_depth: 4,
            hyper_hidden: 64,
            pe_point_freqs: 6,
            pe_feature_freqs: 2,
            uncond_hidden: 32,
            encoder_channels: vec![16, 32, 64, 128, 128],
            lstm_hidden: 32,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.trunk_width == 0 || self.trunk_depth == 0 || self.hyper_hidden == 0 {
            return Err(Error::Invalid("network dimensions must be ≥ 1".into()));
        }
        if self.encoder_channels.is_empty() || self.lstm_hidden == 0 || self.uncond_hidden == 0 {
            return Err(Error::Invalid("encoder channels, LSTM and feature-MLP widths must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// A generated network ready for evaluation.
#[derive(Clone, Debug)]
pub struct Field {
    pub weights: GeneratedWeights,
    pub norms: NormParams,
}

/// Output of the shape generator for a batch of points.
pub struct ShapeOutput {
    /// `[N, 1]`
    pub sdf: Tensor,
    /// `[N, 3]`, in `[0, 1]`
    pub rgb: Tensor,
    /// `[N, trunk_width]`
    pub trunk: Tensor,
}

/// Maps `(x, point features)` to an SDF value and a colour.
#[derive(Clone, Debug)]
pub struct ShapeGenerator {
    pub hyper: HyperNetwork,
    pub k: usize,
    pub pe_point_freqs: usize,
    pub pe_feature_freqs: usize,
}

impl ShapeGenerator {
    pub fn new(cfg: &NetConfig) -> Result<Self> {
        let in_dim = 3 + encoded_dim(3, cfg.pe_point_freqs) + encoded_dim(cfg.k, cfg.pe_feature_freqs);
        let spec = MlpSpec::new(in_dim, vec![cfg.trunk_width; cfg.trunk_depth], vec![1, 3])?;
        Ok(ShapeGenerator {
            hyper: HyperNetwork::new("shape", spec, cfg.latent_dim, cfg.hyper_hidden),
            k: cfg.k,
            pe_point_freqs: cfg.pe_point_freqs,
            pe_feature_freqs: cfg.pe_feature_freqs,
        })
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        let mut inits = vec![LayerInit::Kaiming; self.hyper.target.hidden.len()];
        inits.push(LayerInit::Scaled(0.1));
        inits.push(LayerInit::Scaled(0.1));
        self.hyper.init(store, &inits, rng)
    }

    pub fn field(&self, tape: &mut Tape, params: &Bound, latent: &Tensor) -> Result<Field> {
        Ok(Field {
            weights: self.hyper.generate(tape, params, latent)?,
            norms: self.hyper.norms(params),
        })
    }

    /// `concat(x, PE(x), PE(features))`.
    pub fn input(&self, tape: &mut Tape, x: &Tensor, features: Option<&Tensor>) -> Result<Tensor> {
        let pe = positional_encode(tape, x, self.pe_point_freqs)?;
        match (self.k, features) {
            (0, _) => tape.concat(&[x, &pe]),
            (k, Some(f)) if f.last_dim() == k => {
                let pf = positional_encode(tape, f, self.pe_feature_freqs)?;
                tape.concat(&[x, &pe, &pf])
            }
            (k, f) => Err(Error::shape(
                "shape_generator_forward",
                format!("point features of width {k}"),
                format!("{:?}", f.map(|t| t.shape().to_vec())),
            )),
        }
    }

    pub fn forward(&self, tape: &mut Tape, field: &Field, x: &Tensor, features: Option<&Tensor>) -> Result<ShapeOutput> {
        let input = self.input(tape, x, features)?;
        let out = mlp_forward(tape, &input, &field.weights, &field.norms)?;
        let rgb = tape.sigmoid(&out.heads[1]);
        Ok(ShapeOutput {
            sdf: out.heads[0].clone(),
            rgb,
            trunk: out.trunk,
        })
    }

    pub fn trunk_width(&self) -> usize {
        self.hyper.target.trunk_width()
    }
}

/// Output of DeformNet for a batch of object-space points.
pub struct DeformOutput {
    /// `[N, 3]` displacement into canonical space
    pub delta: Tensor,
    /// `[N, k]`; `None` when `k = 0`
    pub features: Option<Tensor>,
    /// `[N, 3]`, in `[0, 1]`
    pub rgb: Tensor,
    pub trunk: Tensor,
}

/// Image-conditioned deformation field with point-feature and colour heads.
#[derive(Clone, Debug)]
pub struct DeformNet {
    pub hyper: HyperNetwork,
    pub k: usize,
    pub pe_point_freqs: usize,
}

impl DeformNet {
    pub fn new(cfg: &NetConfig) -> Result<Self> {
        let in_dim = 3 + encoded_dim(3, cfg.pe_point_freqs);
        let mut heads = vec![3];
        if cfg.k > 0 {
            heads.push(cfg.k);
        }
        heads.push(3);
        let spec = MlpSpec::new(in_dim, vec![cfg.trunk_width; cfg.trunk_depth], heads)?;
        Ok(DeformNet {
            hyper: HyperNetwork::new("deform", spec, cfg.latent_dim, cfg.hyper_hidden),
            k: cfg.k,
            pe_point_freqs: cfg.pe_point_freqs,
        })
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        let mut inits = vec![LayerInit::Kaiming; self.hyper.target.hidden.len()];
        inits.push(LayerInit::Zero);
        if self.k > 0 {
            inits.push(LayerInit::Kaiming);
        }
        inits.push(LayerInit::Scaled(0.1));
        self.hyper.init(store, &inits, rng)
    }

    pub fn field(&self, tape: &mut Tape, params: &Bound, latent: &Tensor) -> Result<Field> {
        Ok(Field {
            weights: self.hyper.generate(tape, params, latent)?,
            norms: self.hyper.norms(params),
        })
    }

    pub fn forward(&self, tape: &mut Tape, field: &Field, x: &Tensor) -> Result<DeformOutput> {
        let pe = positional_encode(tape, x, self.pe_point_freqs)?;
        let input = tape.concat(&[x, &pe])?;
        let out = mlp_forward(tape, &input, &field.weights, &field.norms)?;
        let mut heads = out.heads.into_iter();
        let delta = heads.next().unwrap();
        let features = if self.k > 0 { heads.next() } else { None };
        let rgb_logits = heads.next().unwrap();
        let rgb = tape.sigmoid(&rgb_logits);
        Ok(DeformOutput {
            delta,
            features,
            rgb,
            trunk: out.trunk,
        })
    }

    pub fn trunk_width(&self) -> usize {
        self.hyper.target.trunk_width()
    }
}

/// Point in the higher-dimensional canonical space.
pub struct CanonicalPoint {
    /// `[N, 3]`
    pub xyz: Tensor,
    /// `[N, k]`; `None` when `k = 0`
    pub feat: Option<Tensor>,
}

impl CanonicalPoint {
    pub fn dim(&self) -> usize {
        3 + self.feat.as_ref().map_or(0, |f| f.last_dim())
    }
}

/// `x + delta` with the predicted point features attached.
pub fn compose_canonical(tape: &mut Tape, x: &Tensor, out: &DeformOutput) -> Result<CanonicalPoint> {
    Ok(CanonicalPoint {
        xyz: tape.add(x, &out.delta)?,
        feat: out.features.clone(),
    })
}

/// Two-layer point-feature MLP that ignores the image.
#[derive(Clone, Debug)]
pub struct UncondFeatures {
    pub k: usize,
    pub hidden: usize,
}

impl UncondFeatures {
    pub fn new(cfg: &NetConfig) -> Self {
        UncondFeatures {
            k: cfg.k,
            hidden: cfg.uncond_hidden,
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        if self.k == 0 {
            return Ok(());
        }
        store.insert("uncond/w1", kaiming_uniform(rng, &[3, self.hidden], 3))?;
        store.insert("uncond/b1", Tensor::zeros(&[self.hidden]))?;
        store.insert("uncond/w2", kaiming_uniform(rng, &[self.hidden, self.k], self.hidden))?;
        store.insert("uncond/b2", Tensor::zeros(&[self.k]))?;
        Ok(())
    }

    /// `[N, 3] → [N, k]`, or `None` when `k = 0`.
    pub fn forward(&self, tape: &mut Tape, params: &Bound, x: &Tensor) -> Result<Option<Tensor>> {
        if self.k == 0 {
            return Ok(None);
        }
        let h = linear(tape, x, params.get("uncond/w1"), params.get("uncond/b1"))?;
        let h = tape.relu(&h);
        Ok(Some(linear(tape, &h, params.get("uncond/w2"), params.get("uncond/b2"))?))
    }
}
