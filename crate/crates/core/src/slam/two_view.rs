//! Two-submap relative pose estimation with an optional seafloor elevation prior.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, Matrix2x3, Matrix3, Matrix6, SMatrix, SVector, SymmetricEigen, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{skew, so3_log, so3_right_jacobian_inv, Pose, Side, Vec3};
use crate::render::{gd_intersect, RenderConfig};
use crate::surface::HeightField;

type Mat12 = SMatrix<f64, 12, 12>;
type Vec12 = SVector<f64, 12>;
type Mat12x3 = SMatrix<f64, 12, 3>;
type Mat2x6 = SMatrix<f64, 2, 6>;

pub const SIGMA_BEARING: f64 = 0.2;
pub const SIGMA_SURFACE_PRIOR: f64 = 0.3;
pub const SIGMA_LINEAR_PRIOR: f64 = 1.0;
/// Standard deviation of the (effectively fixed) reference centre.
pub const SIGMA_FIXED: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    None,
    Linear,
    Surface,
}

impl PriorKind {
    pub const ALL: [PriorKind; 3] = [PriorKind::None, PriorKind::Linear, PriorKind::Surface];

    pub fn name(self) -> &'static str {
        match self {
            PriorKind::None => "none",
            PriorKind::Linear => "linear",
            PriorKind::Surface => "surface",
        }
    }
}

/// Height interpolated linearly between two seafloor points, constant
/// beyond either end.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearPrior {
    pub a: Vec3,
    pub b: Vec3,
}

impl LinearPrior {
    fn param(&self, x: f64, y: f64) -> (f64, bool) {
        let (ex, ey) = (self.b.x - self.a.x, self.b.y - self.a.y);
        let len2 = ex * ex + ey * ey;
        if len2 < 1e-12 {
            return (0.0, false);
        }
        let t = ((x - self.a.x) * ex + (y - self.a.y) * ey) / len2;
        (t.clamp(0.0, 1.0), t > 0.0 && t < 1.0)
    }
}

impl HeightField for LinearPrior {
    fn height(&self, x: f64, y: f64) -> f64 {
        let (t, _) = self.param(x, y);
        self.a.z + t * (self.b.z - self.a.z)
    }

    fn height_grad(&self, x: f64, y: f64) -> (f64, f64, f64) {
        let (t, inside) = self.param(x, y);
        let h = self.a.z + t * (self.b.z - self.a.z);
        if !inside {
            return (h, 0.0, 0.0);
        }
        let (ex, ey) = (self.b.x - self.a.x, self.b.y - self.a.y);
        let k = (self.b.z - self.a.z) / (ex * ex + ey * ey);
        (h, k * ex, k * ey)
    }

    fn length_scale(&self) -> f64 {
        1000.0
    }
}

/// Prior on landmark heights used by the two-view solve.
#[derive(Clone)]
pub struct ElevationPrior {
    pub kind: PriorKind,
    pub sigma: f64,
    field: Option<Arc<dyn HeightField>>,
}

impl fmt::Debug for ElevationPrior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ElevationPrior")
            .field("kind", &self.kind)
            .field("sigma", &self.sigma)
            .finish()
    }
}

impl ElevationPrior {
    pub fn none() -> Self {
        Self {
            kind: PriorKind::None,
            sigma: 0.0,
            field: None,
        }
    }

    /// Linear interpolation between the seafloor points below two altimeters.
    pub fn linear(a: Vec3, b: Vec3, sigma: f64) -> Result<Self> {
        Self::check_sigma(sigma)?;
        Ok(Self {
            kind: PriorKind::Linear,
            sigma,
            field: Some(Arc::new(LinearPrior { a, b })),
        })
    }

    pub fn surface(field: Arc<dyn HeightField>, sigma: f64) -> Result<Self> {
        Self::check_sigma(sigma)?;
        Ok(Self {
            kind: PriorKind::Surface,
            sigma,
            field: Some(field),
        })
    }

    fn check_sigma(sigma: f64) -> Result<()> {
        if sigma > 0.0 && sigma.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!("elevation prior sigma must be positive, got {sigma}")))
        }
    }

    pub fn field(&self) -> Option<&dyn HeightField> {
        self.field.as_deref()
    }
}

/// One range/bearing observation of a landmark from a ping of either submap.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub landmark: usize,
    /// 0 for the reference submap `a`, 1 for `b`.
    pub view: usize,
    /// Ping pose relative to its submap centre.
    pub ping: Pose,
    pub side: Side,
    pub range: f64,
}

#[derive(Clone, Debug)]
pub struct TwoViewProblem {
    /// Initial (dead-reckoned) submap centre poses.
    pub xa: Pose,
    pub xb: Pose,
    pub observations: Vec<Observation>,
    /// Initial landmark positions.
    pub landmarks: Vec<Vec3>,
    pub sensor_offset: Pose,
    pub sigma_range: f64,
    pub sigma_bearing: f64,
    pub sigma_a: f64,
    /// Standard deviations of the `x_b` prior: x, y, z, roll, pitch, yaw.
    pub sigma_b: [f64; 6],
}

impl TwoViewProblem {
    pub fn validate(&self) -> Result<()> {
        let mut seen = vec![[0u32; 2]; self.landmarks.len()];
        for o in &self.observations {
            if o.landmark >= self.landmarks.len() || o.view > 1 {
                return Err(Error::InvalidData("observation refers to a missing landmark or view".into()));
            }
            if !(o.range > 0.0 && o.range.is_finite()) || !o.ping.is_finite() {
                return Err(Error::InvalidData("observation range or ping pose is invalid".into()));
            }
            seen[o.landmark][o.view] += 1;
        }
        if seen.iter().any(|s| s[0] != 1 || s[1] != 1) {
            return Err(Error::InvalidData("each landmark needs exactly one observation per submap".into()));
        }
        let sigmas = [self.sigma_range, self.sigma_bearing, self.sigma_a]
            .into_iter()
            .chain(self.sigma_b);
        if sigmas.into_iter().any(|s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Config("two-view standard deviations must be positive".into()));
        }
        if !self.xa.is_finite() || !self.xb.is_finite() || self.landmarks.iter().any(|l| !l.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFinite("two-view initial state"));
        }
        Ok(())
    }

    /// Sub-problem restricted to the listed landmarks (re-indexed in order).
    pub fn subset(&self, landmarks: &[usize]) -> TwoViewProblem {
        let mut remap = vec![usize::MAX; self.landmarks.len()];
        for (k, &j) in landmarks.iter().enumerate() {
            remap[j] = k;
        }
        let observations = self
            .observations
            .iter()
            .filter(|o| remap[o.landmark] != usize::MAX)
            .map(|o| Observation {
                landmark: remap[o.landmark],
                ..*o
            })
            .collect();
        TwoViewProblem {
            observations,
            landmarks: landmarks.iter().map(|&j| self.landmarks[j]).collect(),
            ..self.clone()
        }
    }

    /// `[obs from a, obs from b]` for every landmark.
    fn pairs(&self) -> Vec<[Observation; 2]> {
        let mut out: Vec<[Option<Observation>; 2]> = vec![[None, None]; self.landmarks.len()];
        for o in &self.observations {
            out[o.landmark][o.view] = Some(*o);
        }
        out.into_iter()
            .map(|[a, b]| [a.expect("validated"), b.expect("validated")])
            .collect()
    }
}

/// Sensor-frame point and its Jacobians w.r.t. the centre pose perturbation
/// `[δt, δθ]` and the landmark.
fn sensor_point(center: &Pose, obs: &Observation, offset: &Pose, l: &Vec3) -> (Vec3, SMatrix<f64, 3, 6>, Matrix3<f64>) {
    let g = obs.ping.compose(offset);
    let q = center.inverse_transform_point(l);
    let pi = g.inverse_transform_point(&q);
    let rg_t = g.rotation.matrix().transpose();
    let rc_t = center.rotation.matrix().transpose();
    let mut jp = SMatrix::<f64, 3, 6>::zeros();
    jp.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-rg_t * rc_t));
    jp.fixed_view_mut::<3, 3>(0, 3).copy_from(&(rg_t * skew(&q)));
    (pi, jp, rg_t * rc_t)
}

/// Whitened range and bearing residuals of one observation.
pub fn observation_residual(
    center: &Pose,
    obs: &Observation,
    offset: &Pose,
    l: &Vec3,
    sigma_range: f64,
    sigma_bearing: f64,
) -> Result<(Vector2<f64>, Mat2x6, Matrix2x3<f64>)> {
    let (pi, jp, jl) = sensor_point(center, obs, offset, l);
    let rho = pi.norm();
    if !rho.is_finite() {
        return Err(Error::NonFinite("sensor-frame landmark"));
    }
    if rho < 1e-9 {
        return Err(Error::DegenerateLandmark);
    }
    let u = pi / rho;
    let r = Vector2::new((rho - obs.range) / sigma_range, pi.x / sigma_bearing);
    let mut dp = Mat2x6::zeros();
    let mut dl = Matrix2x3::zeros();
    dp.row_mut(0).copy_from(&(u.transpose() * jp / sigma_range));
    dp.row_mut(1).copy_from(&(jp.row(0) / sigma_bearing));
    dl.row_mut(0).copy_from(&(u.transpose() * jl / sigma_range));
    dl.row_mut(1).copy_from(&(jl.row(0) / sigma_bearing));
    Ok((r, dp, dl))
}

/// Whitened pose prior residual `[t − t̂, Log(R̂ᵀR)] / σ`.
pub fn pose_prior_residual(pose: &Pose, reference: &Pose, sigma: &[f64; 6]) -> (SVector<f64, 6>, Matrix6<f64>) {
    let et = pose.position - reference.position;
    let er = so3_log(&(reference.rotation.inverse() * pose.rotation));
    let jr = so3_right_jacobian_inv(&er);
    let mut r = SVector::<f64, 6>::zeros();
    let mut j = Matrix6::zeros();
    for k in 0..3 {
        r[k] = et[k] / sigma[k];
        r[k + 3] = er[k] / sigma[k + 3];
        j[(k, k)] = 1.0 / sigma[k];
        for c in 0..3 {
            j[(k + 3, c + 3)] = jr[(k, c)] / sigma[k + 3];
        }
    }
    (r, j)
}

/// Whitened elevation residual `(l_z − h(l_x, l_y)) / σ_l` and its gradient.
pub fn elevation_residual(field: &dyn HeightField, sigma: f64, l: &Vec3) -> (f64, Vector3<f64>) {
    let (h, gx, gy) = field.height_grad(l.x, l.y);
    ((l.z - h) / sigma, Vector3::new(-gx, -gy, 1.0) / sigma)
}

/// Gauss–Newton normal equations with landmarks kept block-diagonal.
struct Normal {
    cost: f64,
    hpp: Mat12,
    gp: Vec12,
    hpl: Vec<Mat12x3>,
    hll: Vec<Matrix3<f64>>,
    gl: Vec<Vector3<f64>>,
}

fn linearize(
    problem: &TwoViewProblem,
    prior: &ElevationPrior,
    poses: &[Pose; 2],
    lms: &[Vec3],
    pose_priors: bool,
) -> Result<Normal> {
    let m = lms.len();
    let mut n = Normal {
        cost: 0.0,
        hpp: Mat12::zeros(),
        gp: Vec12::zeros(),
        hpl: vec![Mat12x3::zeros(); m],
        hll: vec![Matrix3::zeros(); m],
        gl: vec![Vector3::zeros(); m],
    };
    for o in &problem.observations {
        let (r, jp, jl) = observation_residual(
            &poses[o.view],
            o,
            &problem.sensor_offset,
            &lms[o.landmark],
            problem.sigma_range,
            problem.sigma_bearing,
        )?;
        let v = 6 * o.view;
        n.cost += r.norm_squared();
        let hpp = jp.transpose() * jp;
        let mut blk = n.hpp.fixed_view_mut::<6, 6>(v, v);
        blk += hpp;
        let mut g = n.gp.fixed_view_mut::<6, 1>(v, 0);
        g += jp.transpose() * r;
        let mut hpl = n.hpl[o.landmark].fixed_view_mut::<6, 3>(v, 0);
        hpl += jp.transpose() * jl;
        n.hll[o.landmark] += jl.transpose() * jl;
        n.gl[o.landmark] += jl.transpose() * r;
    }
    if let Some(field) = prior.field() {
        for (j, l) in lms.iter().enumerate() {
            let (r, jl) = elevation_residual(field, prior.sigma, l);
            n.cost += r * r;
            n.hll[j] += jl * jl.transpose();
            n.gl[j] += jl * r;
        }
    }
    if pose_priors {
        let priors = [
            (&poses[0], &problem.xa, [problem.sigma_a; 6]),
            (&poses[1], &problem.xb, problem.sigma_b),
        ];
        for (v, (pose, reference, sigma)) in priors.into_iter().enumerate() {
            let (r, j) = pose_prior_residual(pose, reference, &sigma);
            n.cost += r.norm_squared();
            let mut blk = n.hpp.fixed_view_mut::<6, 6>(6 * v, 6 * v);
            blk += j.transpose() * j;
            let mut g = n.gp.fixed_view_mut::<6, 1>(6 * v, 0);
            g += j.transpose() * r;
        }
    }
    if !n.cost.is_finite() {
        return Err(Error::NonFinite("two-view cost"));
    }
    Ok(n)
}

fn total_cost(problem: &TwoViewProblem, prior: &ElevationPrior, poses: &[Pose; 2], lms: &[Vec3]) -> Result<f64> {
    Ok(linearize(problem, prior, poses, lms, true)?.cost)
}

fn inverse_psd3(m: &Matrix3<f64>) -> Matrix3<f64> {
    m.cholesky().map(|c| c.inverse()).unwrap_or_else(|| {
        m.pseudo_inverse(1e-12 * m.norm().max(1e-300))
            .unwrap_or_else(|_| Matrix3::zeros())
    })
}

/// Reduced pose system after eliminating landmarks; `damping` scales the
/// Marquardt diagonal.
fn schur(n: &Normal, damping: f64) -> (Mat12, Vec12, Vec<Matrix3<f64>>) {
    let mut s = n.hpp;
    for k in 0..12 {
        s[(k, k)] += damping * n.hpp[(k, k)];
    }
    let mut rhs = -n.gp;
    let mut inv = Vec::with_capacity(n.hll.len());
    for j in 0..n.hll.len() {
        let mut hll = n.hll[j];
        for k in 0..3 {
            hll[(k, k)] += damping * n.hll[j][(k, k)];
        }
        let hi = inverse_psd3(&hll);
        let t = n.hpl[j] * hi;
        s -= t * n.hpl[j].transpose();
        rhs += t * n.gl[j];
        inv.push(hi);
    }
    (s, rhs, inv)
}

fn eigen_range(m: DMatrix<f64>) -> (f64, f64) {
    let sym = (&m + m.transpose()) * 0.5;
    let e = SymmetricEigen::new(sym).eigenvalues;
    let lo = e.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

#[derive(Clone, Debug)]
pub struct TwoViewSolution {
    pub xa: Pose,
    pub xb: Pose,
    pub landmarks: Vec<Vec3>,
    /// Covariance of `x_b` relative to `x_a` (perturbation `[δt, δθ]` in the
    /// frame of `x_a`), landmarks marginalized.
    pub covariance: Matrix6<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub initial_cost: f64,
    pub cost: f64,
    /// Condition number of the reduced pose system at the solution.
    pub condition: f64,
    /// Smallest over largest eigenvalue of the landmark-marginalized
    /// information on `x_b`'s x, y and yaw from the measurements and
    /// elevation prior alone; see [`degeneracy`].
    pub degeneracy: f64,
}

impl TwoViewSolution {
    /// Relative pose `x_a⁻¹ ∘ x_b`.
    pub fn relative(&self) -> Pose {
        self.xa.between(&self.xb)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmOptions {
    pub max_iterations: usize,
    pub initial_damping: f64,
    pub tolerance: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            initial_damping: 1e-4,
            tolerance: 1e-10,
        }
    }
}

/// Levenberg–Marquardt MAP estimate of both centres and all landmarks.
pub fn solve_two_view(problem: &TwoViewProblem, prior: &ElevationPrior, opts: &LmOptions) -> Result<TwoViewSolution> {
    problem.validate()?;
    if problem.landmarks.is_empty() {
        return Err(Error::Empty("two-view landmarks"));
    }
    let mut poses = [problem.xa, problem.xb];
    let mut lms = problem.landmarks.clone();
    let mut n = linearize(problem, prior, &poses, &lms, true)?;
    let initial_cost = n.cost;
    let mut lambda = opts.initial_damping;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        iterations += 1;
        if n.cost < 1e-20 {
            converged = true;
            break;
        }
        let (s, rhs, inv) = schur(&n, lambda);
        let Some(chol) = s.cholesky() else {
            lambda *= 10.0;
            continue;
        };
        let dp = chol.solve(&rhs);
        let dl: Vec<Vector3<f64>> = (0..lms.len())
            .map(|j| inv[j] * (-n.gl[j] - n.hpl[j].transpose() * dp))
            .collect();
        let trial_poses = [poses[0].retract(&dp.as_slice()[0..6]), poses[1].retract(&dp.as_slice()[6..12])];
        let trial_lms: Vec<Vec3> = lms.iter().zip(&dl).map(|(l, d)| l + d).collect();
        let trial = total_cost(problem, prior, &trial_poses, &trial_lms);
        match trial {
            Ok(c) if c <= n.cost => {
                let rel = (n.cost - c) / n.cost.max(1e-300);
                let step = dp.norm() + dl.iter().map(|d| d.norm_squared()).sum::<f64>().sqrt();
                poses = trial_poses;
                lms = trial_lms;
                n = linearize(problem, prior, &poses, &lms, true)?;
                lambda = (lambda * 0.1).max(1e-12);
                if rel < opts.tolerance || step < 1e-12 {
                    converged = true;
                    break;
                }
            }
            _ => {
                lambda *= 10.0;
                if lambda > 1e12 {
                    // No descent direction left: at a minimum to working precision.
                    converged = true;
                    break;
                }
            }
        }
    }

    let (s, _, _) = schur(&n, 0.0);
    let (lo, hi) = eigen_range(DMatrix::from_column_slice(12, 12, s.as_slice()));
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    let cov_full = s
        .cholesky()
        .map(|c| c.inverse())
        .unwrap_or_else(|| s.pseudo_inverse(1e-14 * hi.abs().max(1e-300)).unwrap_or_else(|_| Mat12::zeros()));
    let cov_b: Matrix6<f64> = cov_full.fixed_view::<6, 6>(6, 6).into();
    let ra_t = poses[0].rotation.matrix().transpose();
    let mut t = Matrix6::identity();
    t.fixed_view_mut::<3, 3>(0, 0).copy_from(&ra_t);
    let covariance = t * cov_b * t.transpose();

    Ok(TwoViewSolution {
        xa: poses[0],
        xb: poses[1],
        degeneracy: degeneracy(problem, prior, &poses, &lms)?,
        landmarks: lms,
        covariance,
        converged,
        iterations,
        initial_cost,
        cost: n.cost,
        condition,
    })
}

/// Degeneracy certificate of a two-view configuration: the measurement and
/// elevation-prior information on `x_b`, with `x_a` fixed and landmarks
/// marginalized, restricted to the unconstrained x, y and yaw directions
/// (yaw scaled by the RMS landmark distance). Returns its smallest over
/// largest eigenvalue.
pub fn degeneracy(problem: &TwoViewProblem, prior: &ElevationPrior, poses: &[Pose; 2], lms: &[Vec3]) -> Result<f64> {
    let n = linearize(problem, prior, poses, lms, false)?;
    let mut s: Matrix6<f64> = n.hpp.fixed_view::<6, 6>(6, 6).into();
    for j in 0..lms.len() {
        let hpl: SMatrix<f64, 6, 3> = n.hpl[j].fixed_view::<6, 3>(6, 0).into();
        s -= hpl * inverse_psd3(&n.hll[j]) * hpl.transpose();
    }
    let idx = [0, 1, 5];
    let mut sub = Matrix3::zeros();
    for (a, &i) in idx.iter().enumerate() {
        for (b, &k) in idx.iter().enumerate() {
            sub[(a, b)] = s[(i, k)];
        }
    }
    // Yaw expressed as arc length at the typical landmark distance.
    let lever = (lms
        .iter()
        .map(|l| (l.xy() - poses[1].position.xy()).norm_squared())
        .sum::<f64>()
        / lms.len().max(1) as f64)
        .sqrt()
        .max(1.0);
    let scale = [1.0, 1.0, lever];
    for a in 0..3 {
        for b in 0..3 {
            sub[(a, b)] /= scale[a] * scale[b];
        }
    }
    let (lo, hi) = eigen_range(DMatrix::from_column_slice(3, 3, sub.as_slice()));
    Ok((lo / hi).max(0.0))
}

fn sensor_world_pose(center: &Pose, obs: &Observation, offset: &Pose) -> Pose {
    center.compose(&obs.ping).compose(offset)
}

/// Triangulation error of the listed landmarks with both centres held fixed.
///
/// Each landmark is re-triangulated from its two observations (starting at
/// the prior surface below the mid-point of the two arc intersections, or at
/// its stored position without a prior); returns the RMS over landmarks of
/// the remaining residual norm in metres.
pub fn tri_err(problem: &TwoViewProblem, landmarks: &[usize], xa: &Pose, xb: &Pose, prior: &ElevationPrior) -> Result<f64> {
    if landmarks.is_empty() {
        return Err(Error::Empty("triangulation landmark set"));
    }
    problem.validate()?;
    let sq = tri_residuals(problem, landmarks, xa, xb, prior)?;
    Ok((sq.iter().sum::<f64>() / sq.len() as f64).sqrt())
}

/// Squared triangulation residual of each listed landmark; the caller has
/// validated `problem`.
pub(crate) fn tri_residuals(
    problem: &TwoViewProblem,
    landmarks: &[usize],
    xa: &Pose,
    xb: &Pose,
    prior: &ElevationPrior,
) -> Result<Vec<f64>> {
    let pairs = problem.pairs();
    let centers = [*xa, *xb];
    let arc_cfg = RenderConfig::default();
    let mut out = Vec::with_capacity(landmarks.len());
    for &j in landmarks {
        let pair = pairs.get(j).ok_or_else(|| Error::InvalidData(format!("landmark {j} out of range")))?;
        let mut l = match prior.field() {
            Some(field) => {
                let hits: Vec<Vec3> = pair
                    .iter()
                    .map(|o| {
                        let pose = sensor_world_pose(&centers[o.view], o, &problem.sensor_offset);
                        // Start from the height above the prior, as an altimeter would.
                        let alt = pose.position.z - field.height(pose.position.x, pose.position.y);
                        gd_intersect(&field, &pose, o.range, o.side, Some(alt), &arc_cfg).point
                    })
                    .collect();
                let mid = (hits[0] + hits[1]) * 0.5;
                Vec3::new(mid.x, mid.y, field.height(mid.x, mid.y))
            }
            None => problem.landmarks[j],
        };
        let residual = |l: &Vec3| -> Result<(SVector<f64, 4>, SMatrix<f64, 4, 3>)> {
            let mut r = SVector::<f64, 4>::zeros();
            let mut jac = SMatrix::<f64, 4, 3>::zeros();
            for (k, o) in pair.iter().enumerate() {
                let (rk, _, jk) = observation_residual(&centers[o.view], o, &problem.sensor_offset, l, 1.0, 1.0)?;
                r.fixed_view_mut::<2, 1>(2 * k, 0).copy_from(&rk);
                jac.fixed_view_mut::<2, 3>(2 * k, 0).copy_from(&jk);
            }
            Ok((r, jac))
        };
        let (mut r, mut jac) = residual(&l)?;
        let mut lambda = 1e-6;
        for _ in 0..50 {
            let mut h = jac.transpose() * jac;
            for k in 0..3 {
                h[(k, k)] *= 1.0 + lambda;
                h[(k, k)] += 1e-12;
            }
            let Some(chol) = h.cholesky() else { break };
            let step = chol.solve(&(-jac.transpose() * r));
            let cand = l + step;
            match residual(&cand) {
                Ok((rc, jc)) if rc.norm_squared() <= r.norm_squared() => {
                    let done = step.norm() < 1e-10;
                    l = cand;
                    r = rc;
                    jac = jc;
                    lambda = (lambda * 0.1).max(1e-12);
                    if done {
                        break;
                    }
                }
                _ => {
                    lambda *= 10.0;
                    if lambda > 1e8 {
                        break;
                    }
                }
            }
        }
        out.push(r.norm_squared());
    }
    Ok(out)
}
