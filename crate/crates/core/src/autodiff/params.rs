use std::io::{Read, Write};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::tape::{Gradients, Tape};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Magic bytes of the parameter container.
pub const CKPT_MAGIC: &[u8; 8] = b"TOPOCKPT";
pub const CKPT_VERSION: u32 = 1;

/// One named trainable tensor with its Adam moments.
#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub value: Tensor,
    pub grad: Vec<f64>,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
}

impl ParamEntry {
    fn new(value: Tensor) -> Self {
        let n = value.len();
        ParamEntry {
            value,
            grad: vec![0.0; n],
            adam_m: vec![0.0; n],
            adam_v: vec![0.0; n],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Leaf handles of a [`ParamStore`] registered on one tape.
#[derive(Clone, Debug, Default)]
pub struct Bound {
    leaves: IndexMap<String, Tensor>,
}

impl Bound {
    pub fn get(&self, name: &str) -> &Tensor {
        self.leaves
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` not bound"))
    }

    pub fn try_get(&self, name: &str) -> Option<&Tensor> {
        self.leaves.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.leaves.iter()
    }
}

/// Named parameters, their gradients and optimizer state.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: IndexMap<String, ParamEntry>,
    step_count: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a parameter; names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Invalid(format!("duplicate parameter name `{name}`")));
        }
        self.entries.insert(name, ParamEntry::new(value.detach()));
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.get(name)
    }

    pub fn value(&self, name: &str) -> &Tensor {
        &self
            .entries
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
            .value
    }

    /// Overwrites a parameter value (shape must match).
    pub fn set_value(&mut self, name: &str, data: Vec<f64>) -> Result<()> {
        let e = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::Invalid(format!("unknown parameter `{name}`")))?;
        e.value = Tensor::new(e.value.shape().to_vec(), data)?;
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamEntry)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Registers every parameter as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            leaves: self
                .entries
                .iter()
                .map(|(k, e)| (k.clone(), tape.leaf(&e.value)))
                .collect(),
        }
    }

    /// Constant (untracked) handles, for frozen evaluation.
    pub fn frozen(&self) -> Bound {
        Bound {
            leaves: self.entries.iter().map(|(k, e)| (k.clone(), e.value.detach())).collect(),
        }
    }

    /// Adds the gradients of the bound leaves into the stored accumulators.
    pub fn accumulate(&mut self, bound: &Bound, grads: &Gradients) {
        for (name, leaf) in bound.iter() {
            if let (Some(e), Some(g)) = (self.entries.get_mut(name), grads.get(leaf)) {
                for (a, b) in e.grad.iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for e in self.entries.values_mut() {
            e.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Sum of squared accumulated gradients.
    pub fn grad_sq_norm(&self) -> f64 {
        self.entries.values().flat_map(|e| e.grad.iter()).map(|g| g * g).sum()
    }

    pub fn scale_grad(&mut self, factor: f64) {
        for e in self.entries.values_mut() {
            e.grad.iter_mut().for_each(|g| *g *= factor);
        }
    }

    pub fn grad(&self, name: &str) -> Option<&[f64]> {
        self.entries.get(name).map(|e| e.grad.as_slice())
    }

    /// One Adam update with bias correction, then zero the gradients.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        for (name, e) in &self.entries {
            if e.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for e in self.entries.values_mut() {
            let mut value = e.value.to_vec();
            for i in 0..value.len() {
                let g = e.grad[i];
                e.adam_m[i] = cfg.beta1 * e.adam_m[i] + (1.0 - cfg.beta1) * g;
                e.adam_v[i] = cfg.beta2 * e.adam_v[i] + (1.0 - cfg.beta2) * g * g;
                let m_hat = e.adam_m[i] / bc1;
                let v_hat = e.adam_v[i] / bc2;
                value[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
                e.grad[i] = 0.0;
            }
            e.value = Tensor::new(e.value.shape().to_vec(), value)?;
        }
        Ok(())
    }

    /// Writes the binary container (values, moments, step count).
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(CKPT_MAGIC)?;
        w.write_all(&CKPT_VERSION.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for (name, e) in &self.entries {
            let bytes = name.as_bytes();
            w.write_all(&(bytes.len() as u64).to_le_bytes())?;
            w.write_all(bytes)?;
            let shape = e.value.shape();
            w.write_all(&(shape.len() as u64).to_le_bytes())?;
            for &d in shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for buf in [e.value.data(), &e.adam_m, &e.adam_v] {
                for v in buf {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        w.write_all(&self.step_count.to_le_bytes())?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CKPT_MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = read_u32(r)?;
        if version != CKPT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let count = read_u64(r)?;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let name_len = read_u64(r)? as usize;
            if name_len > 1 << 20 {
                return Err(Error::Format(format!("name length {name_len} too large")));
            }
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|e| Error::Format(e.to_string()))?;
            let rank = read_u64(r)? as usize;
            if rank > 16 {
                return Err(Error::Format(format!("rank {rank} too large")));
            }
            let shape: Vec<usize> = (0..rank).map(|_| read_u64(r).map(|d| d as usize)).collect::<Result<_>>()?;
            let n: usize = shape.iter().product();
            let value = read_f64s(r, n)?;
            let adam_m = read_f64s(r, n)?;
            let adam_v = read_f64s(r, n)?;
            store.insert(name.clone(), Tensor::new(shape, value)?)?;
            let e = store.entries.get_mut(&name).unwrap();
            e.adam_m = adam_m;
            e.adam_v = adam_v;
        }
        store.step_count = read_u64(r)?;
        Ok(store)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
            self.write_to(&mut f)?;
            f.flush()?;
        }
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Central-difference gradient of `f` for every parameter scalar.
pub fn finite_difference_gradient(
    f: impl Fn(&ParamStore) -> f64,
    params: &ParamStore,
    h: f64,
) -> Result<IndexMap<String, Vec<f64>>> {
    if h <= 0.0 {
        return Err(Error::Invalid(format!("finite-difference step must be positive, got {h}")));
    }
    let mut probe = params.clone();
    let mut out = IndexMap::new();
    for name in params.names() {
        let base = params.value(name).to_vec();
        let mut grad = Vec::with_capacity(base.len());
        for i in 0..base.len() {
            let mut plus = base.clone();
            plus[i] += h;
            probe.set_value(name, plus)?;
            let fp = f(&probe);
            let mut minus = base.clone();
            minus[i] -= h;
            probe.set_value(name, minus)?;
            let fm = f(&probe);
            grad.push((fp - fm) / (2.0 * h));
        }
        probe.set_value(name, base)?;
        out.insert(name.clone(), grad);
    }
    Ok(out)
}
