use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn normalize(a: Vec3) -> Vec3 {
    let n = norm(a);
    [a[0] / n, a[1] / n, a[2] / n]
}

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

/// Pinhole camera. The camera looks down its local −z axis with +y up.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraPose {
    /// World→camera rotation, row-major.
    pub rotation: [f64; 9],
    /// World→camera translation: `x_cam = R·x_world + t`.
    pub translation: Vec3,
    /// Vertical field of view in degrees.
    pub fov_deg: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraPose {
    /// Camera at `eye` looking at `target`.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, fov_deg: f64, width: usize, height: usize) -> Result<Self> {
        let forward = normalize(sub(target, eye));
        let right = cross(forward, up);
        if norm(right) < 1e-9 {
            return Err(Error::Invalid("look_at: up vector parallel to view direction".into()));
        }
        let right = normalize(right);
        let cam_up = cross(right, forward);
        let back = scale(forward, -1.0);
        let rotation = [
            right[0], right[1], right[2], cam_up[0], cam_up[1], cam_up[2], back[0], back[1], back[2],
        ];
        let r = |i: usize| [rotation[3 * i], rotation[3 * i + 1], rotation[3 * i + 2]];
        let translation = [-dot(r(0), eye), -dot(r(1), eye), -dot(r(2), eye)];
        let cam = CameraPose {
            rotation,
            translation,
            fov_deg,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    fn row(&self, i: usize) -> Vec3 {
        [self.rotation[3 * i], self.rotation[3 * i + 1], self.rotation[3 * i + 2]]
    }

    /// Checks `RᵀR = I` and `det R = +1` within 1e-9.
    pub fn validate(&self) -> Result<()> {
        for i in 0..3 {
            for j in 0..3 {
                let d = dot(self.row(i), self.row(j));
                let want = if i == j { 1.0 } else { 0.0 };
                if (d - want).abs() > 1e-9 {
                    return Err(Error::Invalid(format!("camera rotation not orthonormal (row {i}·row {j} = {d})")));
                }
            }
        }
        let det = dot(self.row(0), cross(self.row(1), self.row(2)));
        if (det - 1.0).abs() > 1e-9 {
            return Err(Error::Invalid(format!("camera rotation has determinant {det}")));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) || self.width == 0 || self.height == 0 {
            return Err(Error::Invalid("camera intrinsics out of range".into()));
        }
        Ok(())
    }

    /// Camera centre in world coordinates, `−Rᵀt`.
    pub fn center(&self) -> Vec3 {
        let t = self.translation;
        let mut c = [0.0; 3];
        for (j, cj) in c.iter_mut().enumerate() {
            *cj = -(self.rotation[j] * t[0] + self.rotation[3 + j] * t[1] + self.rotation[6 + j] * t[2]);
        }
        c
    }

    /// Distance from the camera centre to the world origin.
    pub fn distance(&self) -> f64 {
        norm(self.center())
    }

    /// Unit world-space direction through pixel `(u, v)` (column, row);
    /// integer coordinates address pixel centres.
    pub fn pixel_direction(&self, u: f64, v: f64) -> Vec3 {
        let tan_half = (self.fov_deg.to_radians() / 2.0).tan();
        let aspect = self.width as f64 / self.height as f64;
        let x = (2.0 * (u + 0.5) / self.width as f64 - 1.0) * tan_half * aspect;
        let y = -(2.0 * (v + 0.5) / self.height as f64 - 1.0) * tan_half;
        let d_cam = [x, y, -1.0];
        // Rᵀ·d
        let mut d = [0.0; 3];
        for (j, dj) in d.iter_mut().enumerate() {
            *dj = self.rotation[j] * d_cam[0] + self.rotation[3 + j] * d_cam[1] + self.rotation[6 + j] * d_cam[2];
        }
        normalize(d)
    }

    /// World units per pixel at the distance of the world origin.
    pub fn pixel_footprint(&self) -> f64 {
        2.0 * (self.fov_deg.to_radians() / 2.0).tan() * self.distance() / self.width as f64
    }
}
