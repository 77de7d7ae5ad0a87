use crate::autodiff::{Bound, Tape, Tensor};
use crate::error::{Error, Result};

/// Layer layout of a trunk-plus-heads MLP.
///
/// Hidden layers are `linear → layer-norm → relu`; heads are plain linear
/// maps from the last hidden layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MlpSpec {
    pub in_dim: usize,
    pub hidden: Vec<usize>,
    pub heads: Vec<usize>,
}

impl MlpSpec {
    pub fn new(in_dim: usize, hidden: Vec<usize>, heads: Vec<usize>) -> Result<Self> {
        if hidden.is_empty() {
            return Err(Error::Invalid("MLP needs at least one hidden layer".into()));
        }
        if in_dim == 0 || hidden.iter().chain(&heads).any(|&d| d == 0) {
            return Err(Error::Invalid(format!(
                "MLP dims must be ≥ 1 (in {in_dim}, hidden {hidden:?}, heads {heads:?})"
            )));
        }
        Ok(MlpSpec { in_dim, hidden, heads })
    }

    /// `(fan_in, fan_out)` of every linear layer: hidden layers, then heads.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.hidden.len() + self.heads.len());
        let mut prev = self.in_dim;
        for &h in &self.hidden {
            out.push((prev, h));
            prev = h;
        }
        for &h in &self.heads {
            out.push((prev, h));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }

    pub fn trunk_width(&self) -> usize {
        *self.hidden.last().unwrap()
    }
}

/// Weights and biases for every layer of an [`MlpSpec`], in layer order.
#[derive(Clone, Debug)]
pub struct GeneratedWeights {
    pub spec: MlpSpec,
    /// `(weight [fan_in, fan_out], bias [fan_out])`
    pub layers: Vec<(Tensor, Tensor)>,
}

impl GeneratedWeights {
    pub fn new(spec: MlpSpec, layers: Vec<(Tensor, Tensor)>) -> Result<Self> {
        let shapes = spec.layer_shapes();
        if shapes.len() != layers.len() {
            return Err(Error::shape(
                "generated_weights",
                format!("{} layers", shapes.len()),
                format!("{} layers", layers.len()),
            ));
        }
        for (&(fi, fo), (w, b)) in shapes.iter().zip(&layers) {
            if w.shape() != [fi, fo] || b.len() != fo {
                return Err(Error::shape(
                    "generated_weights",
                    format!("[{fi}, {fo}] + [{fo}]"),
                    format!("{:?} + {:?}", w.shape(), b.shape()),
                ));
            }
        }
        Ok(GeneratedWeights { spec, layers })
    }

    /// All-zero weights for `spec` (untracked).
    pub fn zeros(spec: &MlpSpec) -> Self {
        let layers = spec
            .layer_shapes()
            .into_iter()
            .map(|(i, o)| (Tensor::zeros(&[i, o]), Tensor::zeros(&[o])))
            .collect();
        GeneratedWeights {
            spec: spec.clone(),
            layers,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|(w, b)| w.len() + b.len()).sum()
    }
}

/// Learnable layer-norm affine parameters, one pair per hidden layer.
#[derive(Clone, Debug, Default)]
pub struct NormParams {
    pub layers: Vec<(Tensor, Tensor)>,
}

impl NormParams {
    pub fn from_bound(params: &Bound, prefix: &str, count: usize) -> Self {
        NormParams {
            layers: (0..count)
                .map(|i| {
                    (
                        params.get(&format!("{prefix}/ln{i}/gain")).clone(),
                        params.get(&format!("{prefix}/ln{i}/bias")).clone(),
                    )
                })
                .collect(),
        }
    }
}

pub struct MlpOutput {
    /// Activations of the last hidden layer.
    pub trunk: Tensor,
    pub heads: Vec<Tensor>,
}

pub fn linear(tape: &mut Tape, x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let y = tape.matmul(x, w)?;
    tape.add(&y, b)
}

/// Runs `x: [N, in_dim]` through the trunk and every head.
pub fn mlp_forward(tape: &mut Tape, x: &Tensor, weights: &GeneratedWeights, norms: &NormParams) -> Result<MlpOutput> {
    let spec = &weights.spec;
    if x.shape().len() != 2 || x.shape()[1] != spec.in_dim {
        return Err(Error::shape("mlp_forward", format!("[N, {}]", spec.in_dim), format!("{:?}", x.shape())));
    }
    let nh = spec.hidden.len();
    let mut h = x.clone();
    for (i, (w, b)) in weights.layers[..nh].iter().enumerate() {
        let z = linear(tape, &h, w, b)?;
        let z = match norms.layers.get(i) {
            Some((g, bb)) => tape.layer_norm(&z, Some(g), Some(bb))?,
            None => tape.layer_norm(&z, None, None)?,
        };
        h = tape.relu(&z);
    }
    let heads = weights.layers[nh..]
        .iter()
        .map(|(w, b)| linear(tape, &h, w, b))
        .collect::<Result<Vec<_>>>()?;
    Ok(MlpOutput { trunk: h, heads })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_validation() {
        let spec = MlpSpec::new(5, vec![4, 4], vec![1, 3]).unwrap();
        assert_eq!(spec.param_count(), (5 * 4 + 4) + (4 * 4 + 4) + (4 + 1) + (4 * 3 + 3));
        assert!(MlpSpec::new(5, vec![], vec![1]).is_err());
        assert!(MlpSpec::new(5, vec![0], vec![1]).is_err());
        let z = GeneratedWeights::zeros(&spec);
        assert_eq!(z.param_count(), spec.param_count());
    }

    #[test]
    fn zero_weights_give_zero_heads() {
        let spec = MlpSpec::new(3, vec![8], vec![2]).unwrap();
        let w = GeneratedWeights::zeros(&spec);
        let mut tape = Tape::inference();
        let x = Tensor::new(vec![2, 3], vec![0.1, 0.2, 0.3, -1.0, 0.5, 0.0]).unwrap();
        let out = mlp_forward(&mut tape, &x, &w, &NormParams::default()).unwrap();
        assert!(out.heads[0].data().iter().all(|&v| v == 0.0));
    }
}
