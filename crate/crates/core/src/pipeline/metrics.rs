//! Trajectory and bathymetry error metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::surface::HeightField;

/// RMS horizontal position error, matched by ping index. No alignment is
/// applied: both trajectories start from the same fix.
pub fn compute_ate(est: &[Pose], gt: &[Pose]) -> Result<f64> {
    if est.len() != gt.len() {
        return Err(Error::InvalidData(format!(
            "trajectory lengths differ: {} vs {}",
            est.len(),
            gt.len()
        )));
    }
    if est.is_empty() {
        return Err(Error::Empty("trajectory"));
    }
    let sum: f64 = est
        .iter()
        .zip(gt)
        .map(|(e, g)| (e.position - g.position).xy().norm_squared())
        .sum();
    Ok((sum / est.len() as f64).sqrt())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl MeanStd {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Self::default();
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
            count: v.len(),
        }
    }
}

/// Translation error of one estimated relative pose against the truth.
pub fn relative_translation_error(est: &Pose, gt: &Pose) -> f64 {
    (est.position - gt.position).norm()
}

/// Mean and standard deviation of the translation errors of `(est, gt)`
/// relative-pose pairs.
pub fn compute_rte(pairs: &[(Pose, Pose)]) -> MeanStd {
    MeanStd::of(pairs.iter().map(|(e, g)| relative_translation_error(e, g)))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BathyError {
    /// Signed error `estimate − reference`.
    pub mean: f64,
    pub std: f64,
    pub mae: f64,
    pub samples: usize,
}

/// Grid cell centres of `bounds` lying within `radius` of any trajectory
/// position.
pub fn coverage_mask(trajectory: &[Pose], radius: f64, bounds: [f64; 4], cell: f64) -> Vec<(f64, f64)> {
    let [x0, x1, y0, y1] = bounds;
    let nx = ((x1 - x0) / cell).floor().max(0.0) as usize;
    let ny = ((y1 - y0) / cell).floor().max(0.0) as usize;
    let mut inside = vec![false; nx * ny];
    let r2 = radius * radius;
    let reach = (radius / cell).ceil() as i64 + 1;
    let mut last: Option<(f64, f64)> = None;
    for p in trajectory {
        let (px, py) = (p.position.x, p.position.y);
        // Dense pings add nothing once the footprint has been stamped nearby.
        if last.is_some_and(|(lx, ly)| (px - lx).hypot(py - ly) < 0.5 * cell) {
            continue;
        }
        last = Some((px, py));
        let ci = ((px - x0) / cell).floor() as i64;
        let cj = ((py - y0) / cell).floor() as i64;
        for j in (cj - reach).max(0)..(cj + reach + 1).min(ny as i64) {
            for i in (ci - reach).max(0)..(ci + reach + 1).min(nx as i64) {
                let cx = x0 + (i as f64 + 0.5) * cell;
                let cy = y0 + (j as f64 + 0.5) * cell;
                if (cx - px).powi(2) + (cy - py).powi(2) <= r2 {
                    inside[j as usize * nx + i as usize] = true;
                }
            }
        }
    }
    let mut out = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            if inside[j * nx + i] {
                out.push((x0 + (i as f64 + 0.5) * cell, y0 + (j as f64 + 0.5) * cell));
            }
        }
    }
    out
}

pub fn compute_bathy_error(
    estimate: &impl HeightField,
    reference: &impl HeightField,
    samples: &[(f64, f64)],
) -> Result<BathyError> {
    if samples.is_empty() {
        return Err(Error::Empty("bathymetry mask"));
    }
    let d: Vec<f64> = samples
        .iter()
        .map(|&(x, y)| estimate.height(x, y) - reference.height(x, y))
        .collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("bathymetry error"));
    }
    let ms = MeanStd::of(d.iter().copied());
    Ok(BathyError {
        mean: ms.mean,
        std: ms.std,
        mae: d.iter().map(|v| v.abs()).sum::<f64>() / d.len() as f64,
        samples: d.len(),
    })
}
