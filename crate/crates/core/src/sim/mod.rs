//! Synthetic lawn-mower surveys over an analytic terrain: ground truth and
//! dead-reckoned trajectories, rendered waterfalls, altimeter readings and
//! oracle landmark associations.

mod io;
pub mod terrain;

#[cfg(test)]
mod tests;

pub use io::{read_associations, read_survey, read_trajectory, write_associations, write_survey, write_trajectory};
pub use terrain::{Feature, Terrain, TerrainSpec};

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    bin_center_range, bin_to_column, partition_submaps, AssociationEntry, DataAssociation, Ping, Pose, Side, Vec3,
};
use crate::render::{gd_intersect, shade, transmittance, RenderConfig};
use crate::surface::HeightField;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurveyPlan {
    pub n_lines: usize,
    pub line_length: f64,
    pub line_spacing: f64,
    /// m/s
    pub speed: f64,
    /// Hz
    pub ping_rate: f64,
    pub altitude: f64,
    /// rad/s
    pub yaw_noise_density: f64,
    pub altimeter_noise: f64,
    /// Log-normal speckle on rendered intensities.
    pub speckle_sigma: f64,
    pub slant_range_max: f64,
    pub n_bins: usize,
    pub landmarks: usize,
    pub submap_size: usize,
    /// Start of the first line.
    pub origin: [f64; 2],
    /// Largest along-track offset (m) at which a landmark counts as lying
    /// in a ping's plane.
    pub plane_tolerance: f64,
    pub render: RenderConfig,
    pub seed: u64,
}

impl Default for SurveyPlan {
    fn default() -> Self {
        Self {
            n_lines: 10,
            line_length: 400.0,
            line_spacing: 30.0,
            speed: 2.0,
            ping_rate: 10.0,
            altitude: 15.0,
            yaw_noise_density: 5e-3,
            altimeter_noise: 0.05,
            speckle_sigma: 0.1,
            slant_range_max: 50.0,
            n_bins: 128,
            landmarks: 2000,
            submap_size: 200,
            origin: [0.0, 0.0],
            plane_tolerance: 0.15,
            render: RenderConfig {
                gd_steps: 40,
                ..RenderConfig::default()
            },
            seed: 0,
        }
    }
}

impl SurveyPlan {
    pub fn validate(&self) -> Result<()> {
        let positive = self.n_lines > 0
            && self.line_length > 0.0
            && self.line_spacing > 0.0
            && self.speed > 0.0
            && self.ping_rate > 0.0
            && self.altitude > 0.0
            && self.slant_range_max > self.altitude
            && self.n_bins > 0
            && self.submap_size > 0
            && self.plane_tolerance > 0.0;
        if !positive {
            return Err(Error::Config(
                "survey lengths, rates and counts must be positive and the range must exceed the altitude".into(),
            ));
        }
        if self.yaw_noise_density < 0.0 || self.altimeter_noise < 0.0 || self.speckle_sigma < 0.0 {
            return Err(Error::Config("noise levels must be non-negative".into()));
        }
        if self.line_spacing >= 2.0 * self.slant_range_max {
            return Err(Error::Config(format!(
                "line spacing {} leaves no swath overlap at range {}",
                self.line_spacing, self.slant_range_max
            )));
        }
        self.render.validate()
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.ping_rate
    }

    pub fn turn_radius(&self) -> f64 {
        0.5 * self.line_spacing
    }

    /// Horizontal reach of the swath at the planned altitude.
    pub fn swath(&self) -> f64 {
        (self.slant_range_max.powi(2) - self.altitude.powi(2)).sqrt()
    }

    /// Region covered by the swaths, `[x0, x1, y0, y1]`.
    pub fn area(&self) -> [f64; 4] {
        let m = self.swath().max(self.turn_radius());
        let [ox, oy] = self.origin;
        [
            ox - m,
            ox + self.line_length + m,
            oy - m,
            oy + (self.n_lines - 1) as f64 * self.line_spacing + m,
        ]
    }

    fn path_length(&self) -> f64 {
        self.n_lines as f64 * self.line_length + (self.n_lines - 1) as f64 * PI * self.turn_radius()
    }

    /// Horizontal position, heading and line index at arc length `s`.
    fn path_at(&self, s: f64) -> (f64, f64, f64, usize) {
        let [ox, oy] = self.origin;
        let l = self.line_length;
        let r = self.turn_radius();
        let turn = PI * r;
        let seg = l + turn;
        let k = ((s / seg).floor() as usize).min(self.n_lines - 1);
        let u = s - k as f64 * seg;
        let y = oy + k as f64 * self.line_spacing;
        let east = k % 2 == 0;
        if u <= l || k == self.n_lines - 1 {
            let u = u.min(l);
            return if east {
                (ox + u, y, 0.0, k)
            } else {
                (ox + l - u, y, PI, k)
            };
        }
        let a = (u - l) / r;
        let cy = y + r;
        if east {
            // Counter-clockwise around the east end.
            let th = -PI / 2.0 + a;
            (ox + l + r * th.cos(), cy + r * th.sin(), th + PI / 2.0, k)
        } else {
            // Clockwise around the west end.
            let th = 3.0 * PI / 2.0 - a;
            (ox + r * th.cos(), cy + r * th.sin(), th - PI / 2.0, k)
        }
    }
}

/// Geometry needed to project a landmark into a ping.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SonarGeometry {
    pub n_bins: usize,
    pub slant_range_max: f64,
    pub plane_tolerance: f64,
}

impl SonarGeometry {
    pub fn of(plan: &SurveyPlan) -> Self {
        Self {
            n_bins: plan.n_bins,
            slant_range_max: plan.slant_range_max,
            plane_tolerance: plan.plane_tolerance,
        }
    }

    pub fn bin_width(&self) -> f64 {
        self.slant_range_max / self.n_bins as f64
    }
}

/// Bin and side in which `landmark` shows up in the ping at `pose`, or
/// `None` if it is off the ping plane, out of range, outside the vertical
/// opening or shadowed by the terrain. Bin `n` covers ranges `[n·w, (n+1)·w)`.
pub fn project_landmark_to_bin(
    terrain: &impl HeightField,
    pose: &Pose,
    landmark: &Vec3,
    geom: &SonarGeometry,
    cfg: &RenderConfig,
) -> Option<(usize, Side)> {
    let p = pose.inverse_transform_point(landmark);
    if p.x.abs() > geom.plane_tolerance {
        return None;
    }
    let r = p.norm();
    if !(r > 0.0 && r < geom.slant_range_max) {
        return None;
    }
    let phi = (-p.z).atan2(p.y.abs());
    let [lo, hi] = cfg.vertical_opening;
    if !(lo..=hi).contains(&phi) {
        return None;
    }
    if transmittance(terrain, landmark, &(pose.position - landmark), cfg) < 0.5 {
        return None;
    }
    let bin = ((r / geom.bin_width()).floor() as usize).min(geom.n_bins - 1);
    Some((bin, Side::of_lateral(p.y)))
}

/// Beam pattern of the simulated transducer.
pub fn true_beam(phi: f64) -> f64 {
    let d = (phi - 0.5) / 0.45;
    (-0.5 * d * d).exp()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Survey {
    pub plan: SurveyPlan,
    pub terrain: TerrainSpec,
    pub times: Vec<f64>,
    pub gt: Vec<Pose>,
    pub dr: Vec<Pose>,
    /// Pings carry the dead-reckoned pose.
    pub pings: Vec<Ping>,
    pub line_of: Vec<usize>,
    pub associations: DataAssociation,
    pub landmarks: Vec<Vec3>,
}

impl Survey {
    pub fn n_lines(&self) -> usize {
        self.line_of.last().map_or(0, |l| l + 1)
    }

    /// `(first, last)` ping of every line.
    pub fn lines(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = Vec::new();
        for (i, &l) in self.line_of.iter().enumerate() {
            if l == out.len() {
                out.push((i, i));
            } else {
                out[l].1 = i;
            }
        }
        out
    }
}

fn ping_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(0xA076_1D64_78BD_642F) ^ (i as u64).wrapping_add(0x51).wrapping_mul(0xE703_7ED1_A0B4_28DB)
}

/// Ground truth poses, times and line indices along the plan.
fn ground_truth(terrain: &Terrain, plan: &SurveyPlan) -> (Vec<f64>, Vec<Pose>, Vec<usize>) {
    let dt = plan.dt();
    let total = plan.path_length();
    let n = (total / (plan.speed * dt)).floor() as usize + 1;
    let mut times = Vec::with_capacity(n);
    let mut poses = Vec::with_capacity(n);
    let mut lines = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 * dt;
        let (x, y, yaw, k) = plan.path_at(plan.speed * t);
        let z = terrain.smooth_height(x, y) + plan.altitude;
        times.push(t);
        poses.push(Pose::from_xyz_rpy(x, y, z, 0.0, 0.0, yaw));
        lines.push(k);
    }
    (times, poses, lines)
}

/// Integrates the true horizontal displacements with a heading that
/// random-walks by `q·dt` per ping. Depth, roll and pitch stay exact.
pub fn dead_reckon(gt: &[Pose], q: f64, dt: f64, seed: u64) -> Vec<Pose> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0D0E_AD5E);
    let noise = Normal::new(0.0, q * dt).expect("finite yaw noise");
    let mut out = Vec::with_capacity(gt.len());
    let mut err_yaw = 0.0f64;
    let mut err_pos = Vec3::zeros();
    for (i, g) in gt.iter().enumerate() {
        if i > 0 {
            let d = g.position - gt[i - 1].position;
            let (s, c) = err_yaw.sin_cos();
            // (Rz(e) − I)·d, exactly zero when e is.
            err_pos.x += (c - 1.0) * d.x - s * d.y;
            err_pos.y += s * d.x + (c - 1.0) * d.y;
            if q > 0.0 {
                err_yaw += noise.sample(&mut rng);
            }
        }
        let (roll, pitch, yaw) = g.rpy();
        let p = g.position + err_pos;
        out.push(if err_yaw == 0.0 && err_pos == Vec3::zeros() {
            *g
        } else {
            Pose::from_xyz_rpy(p.x, p.y, p.z, roll, pitch, yaw + err_yaw)
        });
    }
    out
}

/// Oracle associations: each landmark is matched to its best ping on every
/// line that sees it, and every pair of sightings from different submaps
/// becomes an entry.
fn associate(
    terrain: &Terrain,
    plan: &SurveyPlan,
    gt: &[Pose],
    line_of: &[usize],
    landmarks: &[Vec3],
) -> Result<DataAssociation> {
    let geom = SonarGeometry::of(plan);
    let submaps = partition_submaps(gt.len(), plan.submap_size);
    let mut submap_of = vec![0usize; gt.len()];
    for (k, s) in submaps.iter().enumerate() {
        submap_of[s.first..=s.last].fill(k);
    }
    let reach2 = plan.slant_range_max * plan.slant_range_max;
    let per_landmark: Vec<Vec<AssociationEntry>> = landmarks
        .par_iter()
        .enumerate()
        .map(|(id, l)| {
            // line -> (|x offset|, ping, column)
            let mut best: Vec<Option<(f64, usize, u32)>> = vec![None; plan.n_lines];
            for (i, pose) in gt.iter().enumerate() {
                let d = pose.position - l;
                if d.x * d.x + d.y * d.y > reach2 {
                    continue;
                }
                let Some((bin, side)) = project_landmark_to_bin(terrain, pose, l, &geom, &plan.render) else {
                    continue;
                };
                let off = pose.inverse_transform_point(l).x.abs();
                let slot = &mut best[line_of[i]];
                if slot.is_none_or(|(o, _, _)| off < o) {
                    *slot = Some((off, i, bin_to_column(side, bin, plan.n_bins)));
                }
            }
            let seen: Vec<(usize, u32)> = best.into_iter().flatten().map(|(_, i, c)| (i, c)).collect();
            let mut out = Vec::new();
            for (a, &(pa, ca)) in seen.iter().enumerate() {
                for &(pb, cb) in &seen[a + 1..] {
                    if submap_of[pa] != submap_of[pb] {
                        out.push(AssociationEntry {
                            alpha_ping: pa,
                            beta_ping: pb,
                            landmark_id: id as u32,
                            alpha_bin: ca,
                            beta_bin: cb,
                        });
                    }
                }
            }
            out
        })
        .collect();
    let mut entries: Vec<AssociationEntry> = per_landmark.into_iter().flatten().collect();
    if entries.is_empty() {
        return Err(Error::NoOverlap);
    }
    entries.sort_by_key(|e| (e.beta_ping, e.alpha_ping, e.landmark_id));
    DataAssociation::new(entries)
}

/// Renders both sides of one ping over the true terrain.
fn render_true_ping(terrain: &Terrain, plan: &SurveyPlan, pose: &Pose, altitude: f64, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let speckle = Normal::new(0.0, plan.speckle_sigma).expect("finite speckle");
    let bias = -0.5 * plan.speckle_sigma * plan.speckle_sigma;
    let mut side = |s: Side| -> Vec<f64> {
        (0..plan.n_bins)
            .map(|n| {
                let r = bin_center_range(n, plan.n_bins, plan.slant_range_max);
                let hit = gd_intersect(terrain, pose, r, s, Some(altitude), &plan.render);
                let clean = shade(terrain, true_beam, |_, _| 1.0, 1.0, hit, &plan.render).intensity;
                let k = if plan.speckle_sigma > 0.0 {
                    (speckle.sample(&mut rng) + bias).exp()
                } else {
                    1.0
                };
                clean * k
            })
            .collect()
    };
    let port = side(Side::Port);
    let starboard = side(Side::Starboard);
    (port, starboard)
}

pub fn generate_survey(terrain_spec: &TerrainSpec, plan: &SurveyPlan) -> Result<Survey> {
    plan.validate()?;
    let terrain = Terrain::new(terrain_spec.clone())?;
    let (times, gt, line_of) = ground_truth(&terrain, plan);
    let dr = dead_reckon(&gt, plan.yaw_noise_density, plan.dt(), plan.seed);

    let landmarks: Vec<Vec3> = terrain.landmarks().into_iter().map(|[x, y, z]| Vec3::new(x, y, z)).collect();
    let associations = associate(&terrain, plan, &gt, &line_of, &landmarks)?;

    let pings: Vec<Ping> = (0..gt.len())
        .into_par_iter()
        .map(|i| {
            let g = &gt[i];
            let truth = g.position.z - terrain.height(g.position.x, g.position.y);
            let seed = ping_seed(plan.seed, i);
            let (port_bins, starboard_bins) = render_true_ping(&terrain, plan, g, truth, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA1);
            let alt_noise = if plan.altimeter_noise > 0.0 {
                Normal::new(0.0, plan.altimeter_noise).expect("finite noise").sample(&mut rng)
            } else {
                0.0
            };
            Ping {
                index: i,
                pose: dr[i],
                altimeter: Some(truth + alt_noise),
                port_bins,
                starboard_bins,
                slant_range_max: plan.slant_range_max,
            }
        })
        .collect();

    Ok(Survey {
        plan: plan.clone(),
        terrain: terrain_spec.clone(),
        times,
        gt,
        dr,
        pings,
        line_of,
        associations,
        landmarks,
    })
}

/// Default survey: complex terrain sized to the plan's swath area.
pub fn default_terrain(plan: &SurveyPlan) -> TerrainSpec {
    TerrainSpec::complex(plan.area(), plan.landmarks, plan.seed)
}
