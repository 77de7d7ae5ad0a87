use rand::Rng;

use super::mlp::{GeneratedWeights, MlpSpec, NormParams};
use super::{kaiming_uniform, uniform};
use crate::autodiff::{Bound, ParamStore, Tape, Tensor};
use crate::error::{Error, Result};

/// How the base (latent-independent) part of a generated layer starts out.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LayerInit {
    /// Kaiming-uniform weights, zero bias.
    Kaiming,
    /// Kaiming-uniform weights multiplied by a factor, zero bias.
    Scaled(f64),
    /// All zeros: the layer outputs exactly zero at init.
    Zero,
}

/// One small MLP per target layer mapping a latent code to that layer's
/// flattened weights followed by its bias.
///
/// The sub-MLP output bias carries a conventionally initialised copy of the
/// target layer, and its output weights start at `1/fan_in` of their usual
/// scale, so early generated networks sit close to a plain initialisation.
#[derive(Clone, Debug)]
pub struct HyperNetwork {
    pub prefix: String,
    pub target: MlpSpec,
    pub latent_dim: usize,
    pub hidden: usize,
}

impl HyperNetwork {
    pub fn new(prefix: impl Into<String>, target: MlpSpec, latent_dim: usize, hidden: usize) -> Self {
        HyperNetwork {
            prefix: prefix.into(),
            target,
            latent_dim,
            hidden,
        }
    }

    /// Output size of sub-MLP `i`: `fan_in·fan_out + fan_out`.
    pub fn output_sizes(&self) -> Vec<usize> {
        self.target.layer_shapes().iter().map(|(i, o)| i * o + o).collect()
    }

    fn pname(&self, layer: usize, what: &str) -> String {
        format!("{}/hyper{layer}/{what}", self.prefix)
    }

    /// Registers the hypernetwork and layer-norm parameters in `store`.
    ///
    /// `inits` gives one entry per target layer (hidden layers then heads).
    pub fn init(&self, store: &mut ParamStore, inits: &[LayerInit], rng: &mut impl Rng) -> Result<()> {
        let shapes = self.target.layer_shapes();
        if inits.len() != shapes.len() {
            return Err(Error::Invalid(format!(
                "{}: {} layer inits for {} layers",
                self.prefix,
                inits.len(),
                shapes.len()
            )));
        }
        let l = self.latent_dim;
        let h = self.hidden;
        for (i, (&(fi, fo), init)) in shapes.iter().zip(inits).enumerate() {
            let p = fi * fo + fo;
            store.insert(self.pname(i, "w1"), kaiming_uniform(rng, &[l, h], l))?;
            store.insert(self.pname(i, "b1"), Tensor::zeros(&[h]))?;
            let bound = (6.0 / h as f64).sqrt() / fi as f64;
            store.insert(self.pname(i, "w2"), uniform(rng, &[h, p], bound))?;
            let mut base = vec![0.0; p];
            match *init {
                LayerInit::Zero => {}
                LayerInit::Kaiming | LayerInit::Scaled(_) => {
                    let factor = if let LayerInit::Scaled(s) = *init { s } else { 1.0 };
                    let b = (6.0 / fi as f64).sqrt() * factor;
                    for v in base.iter_mut().take(fi * fo) {
                        *v = rng.gen_range(-b..=b);
                    }
                }
            }
            if *init == LayerInit::Zero {
                // a zero layer stays exactly zero until trained
                store.set_value(&self.pname(i, "w2"), vec![0.0; h * p])?;
            }
            store.insert(self.pname(i, "b2"), Tensor::from_vec(base))?;
        }
        for (i, &w) in self.target.hidden.iter().enumerate() {
            store.insert(format!("{}/ln{i}/gain", self.prefix), Tensor::full(&[w], 1.0))?;
            store.insert(format!("{}/ln{i}/bias", self.prefix), Tensor::zeros(&[w]))?;
        }
        Ok(())
    }

    pub fn norms(&self, params: &Bound) -> NormParams {
        NormParams::from_bound(params, &self.prefix, self.target.hidden.len())
    }

    /// Generates target-network weights from `latent` (`[latent_dim]` or `[1, latent_dim]`).
    pub fn generate(&self, tape: &mut Tape, params: &Bound, latent: &Tensor) -> Result<GeneratedWeights> {
        if latent.len() != self.latent_dim {
            return Err(Error::shape(
                "hypernet_generate",
                format!("latent of dim {}", self.latent_dim),
                format!("{:?}", latent.shape()),
            ));
        }
        let z = tape.reshape(latent, &[1, self.latent_dim])?;
        let mut layers = Vec::new();
        for (i, (fi, fo)) in self.target.layer_shapes().into_iter().enumerate() {
            let h = tape.matmul(&z, params.get(&self.pname(i, "w1")))?;
            let h = tape.add(&h, params.get(&self.pname(i, "b1")))?;
            let h = tape.relu(&h);
            let o = tape.matmul(&h, params.get(&self.pname(i, "w2")))?;
            let o = tape.add(&o, params.get(&self.pname(i, "b2")))?;
            let w = tape.slice(&o, 0, fi * fo)?;
            let w = tape.reshape(&w, &[fi, fo])?;
            let b = tape.slice(&o, fi * fo, fo)?;
            let b = tape.reshape(&b, &[fo])?;
            layers.push((w, b));
        }
        GeneratedWeights::new(self.target.clone(), layers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> HyperNetwork {
        HyperNetwork::new("h", MlpSpec::new(3, vec![4, 5], vec![1, 2]).unwrap(), 6, 7)
    }

    fn inits() -> Vec<LayerInit> {
        vec![LayerInit::Kaiming, LayerInit::Kaiming, LayerInit::Scaled(0.1), LayerInit::Zero]
    }

    #[test]
    fn output_sizes_match_target_layers() {
        let hn = small();
        assert_eq!(hn.output_sizes(), vec![3 * 4 + 4, 4 * 5 + 5, 5 + 1, 5 * 2 + 2]);
        let mut store = ParamStore::new();
        hn.init(&mut store, &inits(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for (i, p) in hn.output_sizes().into_iter().enumerate() {
            assert_eq!(store.value(&format!("h/hyper{i}/b2")).len(), p);
        }
        let mut tape = Tape::inference();
        let bound = store.frozen();
        let w = hn.generate(&mut tape, &bound, &Tensor::full(&[6], 0.3)).unwrap();
        assert_eq!(w.param_count(), hn.target.param_count());
    }

    #[test]
    fn zero_latent_zero_params_give_zero_weights() {
        let hn = small();
        let mut store = ParamStore::new();
        hn.init(&mut store, &inits(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let names: Vec<String> = store.names().cloned().collect();
        for n in names {
            let len = store.value(&n).len();
            store.set_value(&n, vec![0.0; len]).unwrap();
        }
        let mut tape = Tape::inference();
        let w = hn.generate(&mut tape, &store.frozen(), &Tensor::zeros(&[6])).unwrap();
        assert!(w.layers.iter().all(|(a, b)| a.data().iter().chain(b.data()).all(|&v| v == 0.0)));
    }

    #[test]
    fn latent_dim_mismatch_fails() {
        let hn = small();
        let mut store = ParamStore::new();
        hn.init(&mut store, &inits(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut tape = Tape::inference();
        assert!(hn.generate(&mut tape, &store.frozen(), &Tensor::zeros(&[5])).is_err());
    }

    #[test]
    fn perturbing_a_hyper_parameter_changes_weights() {
        let hn = small();
        let mut store = ParamStore::new();
        hn.init(&mut store, &inits(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let latent = Tensor::full(&[6], 0.5);
        let gen = |s: &ParamStore| {
            let mut tape = Tape::inference();
            let w = hn.generate(&mut tape, &s.frozen(), &latent).unwrap();
            w.layers.iter().flat_map(|(a, b)| a.to_vec().into_iter().chain(b.to_vec())).collect::<Vec<_>>()
        };
        let before = gen(&store);
        let mut v = store.value("h/hyper1/b2").to_vec();
        v[3] += 1e-3;
        store.set_value("h/hyper1/b2", v).unwrap();
        let after = gen(&store);
        assert!(before.iter().zip(&after).any(|(a, b)| a != b));
    }
}
