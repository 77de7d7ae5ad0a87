//! Point-cloud reconstruction metrics: Chamfer (accuracy / coverage),
//! exact EMD, precision / recall / F-score.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::renderer::Vec3;
use crate::spatial::KdTree;

pub const DEFAULT_THRESHOLD: f64 = 0.1;
/// Largest cloud accepted by [`emd`].
pub const EMD_MAX_POINTS: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chamfer {
    /// Mean distance from each predicted point to the ground truth.
    pub acc: f64,
    /// Mean distance from each ground-truth point to the prediction.
    pub cov: f64,
    pub overall: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub chamfer_acc: f64,
    pub chamfer_cov: f64,
    pub chamfer_overall: f64,
    pub emd: f64,
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "acc,cov,overall,emd,precision,recall,fscore";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.chamfer_acc, self.chamfer_cov, self.chamfer_overall, self.emd, self.precision, self.recall, self.fscore
        )
    }

    pub fn mean(reports: &[MetricsReport]) -> Option<MetricsReport> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        let s = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        Some(MetricsReport {
            chamfer_acc: s(|r| r.chamfer_acc),
            chamfer_cov: s(|r| r.chamfer_cov),
            chamfer_overall: s(|r| r.chamfer_overall),
            emd: s(|r| r.emd),
            precision: s(|r| r.precision),
            recall: s(|r| r.recall),
            fscore: s(|r| r.fscore),
        })
    }
}

fn check(name: &str, cloud: &[Vec3]) -> Result<()> {
    if cloud.is_empty() {
        return Err(Error::Invalid(format!("{name} point cloud is empty")));
    }
    if cloud.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{name} point cloud")));
    }
    Ok(())
}

fn nn_distances(from: &[Vec3], to: &[Vec3]) -> Vec<f64> {
    let tree = KdTree::new(to);
    from.iter().map(|&p| tree.nearest(p).expect("non-empty").1).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Symmetric Chamfer with unsquared L2 distances.
pub fn chamfer(pred: &[Vec3], gt: &[Vec3]) -> Result<Chamfer> {
    check("pred", pred)?;
    check("gt", gt)?;
    let acc = mean(&nn_distances(pred, gt));
    let cov = mean(&nn_distances(gt, pred));
    Ok(Chamfer {
        acc,
        cov,
        overall: (acc + cov) / 2.0,
    })
}

/// Precision: fraction of predicted points within `t` of the ground truth.
/// Recall: fraction of ground-truth points within `t` of the prediction.
pub fn precision_recall_f(pred: &[Vec3], gt: &[Vec3], t: f64) -> Result<PrecisionRecall> {
    if !(t > 0.0) {
        return Err(Error::Invalid(format!("threshold must be positive, got {t}")));
    }
    check("pred", pred)?;
    check("gt", gt)?;
    let frac = |d: Vec<f64>| d.iter().filter(|&&x| x <= t).count() as f64 / d.len() as f64;
    let precision = frac(nn_distances(pred, gt));
    let recall = frac(nn_distances(gt, pred));
    let fscore = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    Ok(PrecisionRecall {
        precision,
        recall,
        fscore,
    })
}

/// Minimum-cost assignment for a square cost matrix (row-major `n × n`).
/// Returns `assignment[row] = column`.
pub fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    // shortest augmenting paths with potentials; 1-based with a dummy column 0
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

fn dist(a: Vec3, b: Vec3) -> f64 {
    crate::renderer::norm(crate::renderer::sub(a, b))
}

/// Exact EMD: mean L2 cost of the optimal bijection.
pub fn emd(pred: &[Vec3], gt: &[Vec3]) -> Result<f64> {
    check("pred", pred)?;
    check("gt", gt)?;
    if pred.len() != gt.len() {
        return Err(Error::Invalid(format!(
            "emd needs equal point counts ({} vs {}); resample both clouds to the same size",
            pred.len(),
            gt.len()
        )));
    }
    let n = pred.len();
    if n > EMD_MAX_POINTS {
        return Err(Error::Invalid(format!("emd limited to {EMD_MAX_POINTS} points, got {n}")));
    }
    let cost: Vec<f64> = pred.iter().flat_map(|&a| gt.iter().map(move |&b| dist(a, b))).collect();
    let assign = hungarian(&cost, n);
    // summed in row order so the value does not depend on solver internals
    Ok(assign.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum::<f64>() / n as f64)
}

/// Bounding-box centre to origin, longest extent scaled to 2.
pub fn normalize_to_unit_cube(points: &[Vec3]) -> Result<Vec<Vec3>> {
    let (center, s) = unit_cube_transform(points)?;
    Ok(points.iter().map(|p| [(p[0] - center[0]) * s, (p[1] - center[1]) * s, (p[2] - center[2]) * s]).collect())
}

/// `(bounding-box centre, scale)` used by [`normalize_to_unit_cube`].
pub fn unit_cube_transform(points: &[Vec3]) -> Result<(Vec3, f64)> {
    check("input", points)?;
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let extent = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
    if !(extent > 0.0) {
        return Err(Error::Invalid("cannot normalise a cloud with zero extent".into()));
    }
    let center = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0, (lo[2] + hi[2]) / 2.0];
    Ok((center, 2.0 / extent))
}

/// All metrics for one shape pair; EMD uses the first `emd_points` of each.
pub fn evaluate(pred: &[Vec3], gt: &[Vec3], t: f64, emd_points: usize) -> Result<MetricsReport> {
    let c = chamfer(pred, gt)?;
    let pr = precision_recall_f(pred, gt, t)?;
    let m = emd_points.min(pred.len()).min(gt.len());
    let e = emd(&pred[..m], &gt[..m])?;
    Ok(MetricsReport {
        chamfer_acc: c.acc,
        chamfer_cov: c.cov,
        chamfer_overall: c.overall,
        emd: e,
        precision: pr.precision,
        recall: pr.recall,
        fscore: pr.fscore,
    })
}
