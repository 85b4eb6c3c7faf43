//! Differentiable sidescan intensity model.
//!
//! A bin at slant range `r` is rendered by finding the elevation angle where
//! the range arc meets the surface, then multiplying gain, beam pattern,
//! reflectivity, Lambertian response, nadir density and shadow transmittance.

mod waterfall;

pub use waterfall::{read_waterfall, write_waterfall, Waterfall, WaterfallSide};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Pose, Side, Vec3};
use crate::surface::rbf::logistic;
use crate::surface::{HeightField, SurfaceModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub gd_steps: usize,
    pub gd_step_size: f64,
    /// Depression angles below horizontal, radians.
    pub vertical_opening: [f64; 2],
    /// Nadir spread in m².
    pub nadir_spread: f64,
    pub shadow_samples: usize,
    pub shadow_back_distance: f64,
    /// Occlusion sharpness in 1/m.
    pub occlusion_sharpness: f64,
    /// Clearance (m) below which a sample starts to absorb.
    pub occlusion_margin: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            gd_steps: 30,
            gd_step_size: 2.0,
            vertical_opening: [0.02, 1.55],
            nadir_spread: 0.25,
            shadow_samples: 30,
            shadow_back_distance: 2.0,
            occlusion_sharpness: 10.0,
            occlusion_margin: 1.0,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.vertical_opening;
        let positive = self.gd_steps > 0
            && self.gd_step_size > 0.0
            && self.nadir_spread > 0.0
            && self.shadow_samples > 0
            && self.shadow_back_distance > 0.0
            && self.occlusion_sharpness > 0.0
            && self.occlusion_margin >= 0.0;
        if !positive {
            return Err(Error::Config("render parameters must be positive".into()));
        }
        if !(lo < hi) {
            return Err(Error::Config(format!("vertical opening [{lo}, {hi}] is empty")));
        }
        Ok(())
    }
}

/// One bin to render.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BinSample {
    pub ping_index: usize,
    pub bin_index: usize,
    pub slant_range: f64,
    pub side: Side,
}

/// World point on the range arc at depression angle `phi`, and the return
/// ray from that point back to the sonar.
pub fn arc_point(pose: &Pose, r_s: f64, phi: f64, side: Side) -> (Vec3, Vec3) {
    let (s, c) = phi.sin_cos();
    let lateral = side.sign();
    let out = pose.rotation * Vec3::new(0.0, lateral * c, -s);
    (pose.position + r_s * out, -r_s * out)
}

/// `p_z − h(p_x, p_y)`: signed height of a point above the surface.
pub fn clearance(hf: &impl HeightField, p: &Vec3) -> f64 {
    p.z - hf.height(p.x, p.y)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intersection {
    pub phi: f64,
    pub residual: f64,
    pub point: Vec3,
    pub ray: Vec3,
}

/// Angle change (rad) below which the arc search is considered settled.
const GD_STALL: f64 = 1e-10;

/// Shadow samples absorbing less than this add nothing measurable to the
/// gradient and skip their backward pass.
const NEGLIGIBLE_ABSORPTION: f64 = 1e-12;

/// Initial elevation angle for the arc search.
pub fn initial_angle(r_s: f64, altimeter: Option<f64>, cfg: &RenderConfig) -> f64 {
    let [lo, hi] = cfg.vertical_opening;
    match altimeter {
        Some(h) if h > 0.0 => (h / r_s).min(1.0).asin().clamp(lo, hi),
        _ => 0.5 * (lo + hi),
    }
}

/// Gradient descent on the squared residual along the range arc.
///
/// Residual and range are measured in the height field's normalized units,
/// so the update is `φ ← φ − (λ/(r·L))·d(Δ²)/dφ` with `L` its length scale.
/// Convergence needs `L` of at least twice the largest slant range.
pub fn gd_intersect(
    hf: &impl HeightField,
    pose: &Pose,
    r_s: f64,
    side: Side,
    altimeter: Option<f64>,
    cfg: &RenderConfig,
) -> Intersection {
    let [lo, hi] = cfg.vertical_opening;
    let mut phi = initial_angle(r_s, altimeter, cfg);
    let step = cfg.gd_step_size / (r_s * hf.length_scale());
    let lateral = side.sign();
    for _ in 0..cfg.gd_steps {
        let (s, c) = phi.sin_cos();
        let (p, _) = arc_point(pose, r_s, phi, side);
        let (h, gx, gy) = hf.height_grad(p.x, p.y);
        let dp = pose.rotation * Vec3::new(0.0, -lateral * r_s * s, -r_s * c);
        let delta = p.z - h;
        let d_delta = dp.z - gx * dp.x - gy * dp.y;
        let next = (phi - step * 2.0 * delta * d_delta).clamp(lo, hi);
        let moved = (next - phi).abs();
        phi = next;
        if moved < GD_STALL {
            break;
        }
    }
    let (point, ray) = arc_point(pose, r_s, phi, side);
    Intersection {
        phi,
        residual: clearance(hf, &point),
        point,
        ray,
    }
}

/// `max(0, r̂·N̂)²` for the surface normal at `point`.
pub fn lambertian(hf: &impl HeightField, point: &Vec3, ray: &Vec3) -> f64 {
    let (_, gx, gy) = hf.height_grad(point.x, point.y);
    lambertian_from_slopes(gx, gy, ray)
}

fn lambertian_from_slopes(gx: f64, gy: f64, ray: &Vec3) -> f64 {
    let n = (gx * gx + gy * gy + 1.0).sqrt();
    let r = ray.normalize();
    let c = (-r.x * gx - r.y * gy + r.z) / n;
    if c > 0.0 {
        c * c
    } else {
        0.0
    }
}

pub fn nadir_density(residual: f64, spread: f64) -> f64 {
    (-residual * residual / spread).exp()
}

/// Positions where the shadow integral is sampled, and the step length.
fn shadow_samples(point: &Vec3, ray: &Vec3, cfg: &RenderConfig) -> (Vec<Vec3>, f64) {
    let len = ray.norm();
    let dist = cfg.shadow_back_distance.min(len);
    let dir = ray / len;
    let n = cfg.shadow_samples;
    let du = dist / n as f64;
    let pts = (0..n).map(|k| point + ((k as f64 + 0.5) * du) * dir).collect();
    (pts, du)
}

fn density(clearance: f64, cfg: &RenderConfig) -> f64 {
    let s = cfg.occlusion_sharpness;
    s * logistic(-s * (clearance + cfg.occlusion_margin))
}

/// Accumulated transmittance from `point` back toward the sonar.
pub fn transmittance(hf: &impl HeightField, point: &Vec3, ray: &Vec3, cfg: &RenderConfig) -> f64 {
    let (pts, du) = shadow_samples(point, ray, cfg);
    let tau: f64 = pts.iter().map(|p| density(clearance(hf, p), cfg) * du).sum();
    (-tau).exp()
}

/// All factors of one rendered bin.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderedBin {
    pub intensity: f64,
    pub hit: Intersection,
    pub gain: f64,
    pub beam: f64,
    pub reflectivity: f64,
    pub lambertian: f64,
    pub density: f64,
    pub transmittance: f64,
}

/// Renders a bin at a fixed intersection using arbitrary beam and
/// reflectivity functions.
pub fn shade<H, B, R>(hf: &H, beam: B, refl: R, gain: f64, hit: Intersection, cfg: &RenderConfig) -> RenderedBin
where
    H: HeightField,
    B: Fn(f64) -> f64,
    R: Fn(f64, f64) -> f64,
{
    let b = beam(hit.phi);
    let rf = refl(hit.point.x, hit.point.y);
    let m = lambertian(hf, &hit.point, &hit.ray);
    let sigma = nadir_density(hit.residual, cfg.nadir_spread);
    let t = transmittance(hf, &hit.point, &hit.ray, cfg);
    RenderedBin {
        intensity: gain * b * rf * m * sigma * t,
        hit,
        gain,
        beam: b,
        reflectivity: rf,
        lambertian: m,
        density: sigma,
        transmittance: t,
    }
}

/// Intersection with the angle fixed, as used when `phi` is held constant.
pub fn intersection_at(hf: &impl HeightField, pose: &Pose, r_s: f64, phi: f64, side: Side) -> Intersection {
    let (point, ray) = arc_point(pose, r_s, phi, side);
    Intersection {
        phi,
        residual: clearance(hf, &point),
        point,
        ray,
    }
}

/// Renders one bin of line `line` with the learned model.
pub fn render_bin(
    model: &SurfaceModel,
    line: usize,
    pose: &Pose,
    r_s: f64,
    side: Side,
    altimeter: Option<f64>,
    cfg: &RenderConfig,
) -> RenderedBin {
    let hit = gd_intersect(&model.net, pose, r_s, side, altimeter, cfg);
    shade_model(model, line, hit, cfg)
}

pub fn shade_model(model: &SurfaceModel, line: usize, hit: Intersection, cfg: &RenderConfig) -> RenderedBin {
    shade(
        &model.net,
        |phi| model.beam.eval(phi),
        |x, y| model.reflectivity.eval(x, y),
        model.gains.get(line),
        hit,
        cfg,
    )
}

/// Renders every bin of a ping; returns `(port, starboard)`.
pub fn render_ping(
    model: &SurfaceModel,
    line: usize,
    pose: &Pose,
    altimeter: Option<f64>,
    n_bins: usize,
    slant_range_max: f64,
    cfg: &RenderConfig,
) -> (Vec<f64>, Vec<f64>) {
    let side = |side| {
        (0..n_bins)
            .map(|n| {
                let r = crate::geometry::bin_center_range(n, n_bins, slant_range_max);
                render_bin(model, line, pose, r, side, altimeter, cfg).intensity
            })
            .collect()
    };
    (side(Side::Port), side(Side::Starboard))
}

/// Adds `upstream · ∂I/∂params` for a rendered bin into `grad`, which spans
/// the full parameter vector of `model`. The intersection angle is constant.
pub fn backward_bin(
    model: &SurfaceModel,
    line: usize,
    rb: &RenderedBin,
    cfg: &RenderConfig,
    upstream: f64,
    grad: &mut [f64],
) {
    if upstream == 0.0 {
        return;
    }
    let lay = model.layout();
    let (a, b, rf, m, sg, t) = (
        rb.gain,
        rb.beam,
        rb.reflectivity,
        rb.lambertian,
        rb.density,
        rb.transmittance,
    );
    let p = rb.hit.point;

    grad[lay.gains.start + line] += upstream * b * rf * m * sg * t;
    model.beam.backward(rb.hit.phi, upstream * a * rf * m * sg * t, &mut grad[lay.beam.clone()]);
    model
        .reflectivity
        .backward(p.x, p.y, upstream * a * b * m * sg * t, &mut grad[lay.reflectivity.clone()]);

    let k = upstream * a * b * rf;
    if k == 0.0 {
        return;
    }
    let net_grad = &mut grad[lay.net.clone()];

    // Surface value and slopes at the intersection feed σ and M.
    let (_, gx, gy) = model.net.eval_height_grad(p.x, p.y);
    let n = (gx * gx + gy * gy + 1.0).sqrt();
    let r = rb.hit.ray.normalize();
    let c = (-r.x * gx - r.y * gy + r.z) / n;
    let (dm_dgx, dm_dgy) = if c > 0.0 {
        (
            2.0 * c * (-r.x / n - c * gx / (n * n)),
            2.0 * c * (-r.y / n - c * gy / (n * n)),
        )
    } else {
        (0.0, 0.0)
    };
    let dsigma_dh = sg * 2.0 * rb.hit.residual / cfg.nadir_spread;
    model.net.backward(
        p.x,
        p.y,
        k * m * t * dsigma_dh,
        k * sg * t * dm_dgx,
        k * sg * t * dm_dgy,
        net_grad,
    );

    // Each shadow sample contributes through its clearance.
    let kt = k * m * sg;
    if kt == 0.0 {
        return;
    }
    let s = cfg.occlusion_sharpness;
    let (pts, du) = shadow_samples(&p, &rb.hit.ray, cfg);
    for q in &pts {
        let l = logistic(-s * (clearance(&model.net, q) + cfg.occlusion_margin));
        if l < NEGLIGIBLE_ABSORPTION {
            continue;
        }
        let dt_dh = -t * du * s * s * l * (1.0 - l);
        model.net.backward(q.x, q.y, kt * dt_dh, 0.0, 0.0, net_grad);
    }
}
