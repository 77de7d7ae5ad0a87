use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::renderer::Vec3;

/// Scalar samples on a regular grid over `[−1, 1]³`.
///
/// Value `(i, j, k)` lives at `i + r·(j + r·k)` (x fastest) and position
/// `−1 + 2·(i, j, k)/(r − 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    pub resolution: usize,
    pub values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct GridHeader {
    resolution: usize,
    bounds: [f64; 2],
    layout: String,
    dtype: String,
}

impl GridField {
    pub fn coord(&self, i: usize) -> f64 {
        -1.0 + 2.0 * i as f64 / (self.resolution - 1) as f64
    }

    pub fn position(&self, i: usize, j: usize, k: usize) -> Vec3 {
        [self.coord(i), self.coord(j), self.coord(k)]
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        let r = self.resolution;
        self.values[i + r * (j + r * k)]
    }

    pub fn points(resolution: usize) -> Vec<Vec3> {
        let c = |i: usize| -1.0 + 2.0 * i as f64 / (resolution - 1) as f64;
        let mut pts = Vec::with_capacity(resolution.pow(3));
        for k in 0..resolution {
            for j in 0..resolution {
                for i in 0..resolution {
                    pts.push([c(i), c(j), c(k)]);
                }
            }
        }
        pts
    }

    /// Evaluates `field` on every grid point in chunks of `chunk` points.
    /// Chunks run in parallel; the result does not depend on scheduling.
    pub fn sample(
        resolution: usize,
        chunk: usize,
        field: impl Fn(&[Vec3]) -> Result<Vec<f64>> + Sync,
    ) -> Result<GridField> {
        if resolution < 2 {
            return Err(Error::Invalid(format!("grid resolution {resolution} < 2")));
        }
        let pts = Self::points(resolution);
        let parts: Vec<Vec<f64>> = pts
            .par_chunks(chunk.max(1))
            .map(|c| {
                let v = field(c)?;
                if v.len() != c.len() {
                    return Err(Error::shape("sample_grid", c.len().to_string(), v.len().to_string()));
                }
                Ok(v)
            })
            .collect::<Result<_>>()?;
        let values: Vec<f64> = parts.into_iter().flatten().collect();
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("grid value at {:?}", pts[i])));
        }
        Ok(GridField { resolution, values })
    }

    /// Debug dump: raw little-endian f32 values plus a JSON header.
    pub fn dump(&self, raw_path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self.values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
        std::fs::write(raw_path, bytes)?;
        let header = GridHeader {
            resolution: self.resolution,
            bounds: [-1.0, 1.0],
            layout: "x-fastest".into(),
            dtype: "f32le".into(),
        };
        std::fs::write(raw_path.with_extension("json"), serde_json::to_string_pretty(&header)?)?;
        Ok(())
    }
}
