//! Pose graph over per-ping vehicle poses with odometry and loop-closure edges.

use std::io::Write;

use nalgebra::{Matrix6, SMatrix, SVector, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::sparse::BlockSparse;
use super::two_view::pose_prior_residual;
use crate::error::{Error, Result};
use crate::geometry::{skew, so3_log, so3_right_jacobian_inv, Pose};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Dr,
    Lc,
}

impl EdgeKind {
    pub fn name(self) -> &'static str {
        match self {
            EdgeKind::Dr => "dr",
            EdgeKind::Lc => "lc",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    pub kind: EdgeKind,
    pub from: usize,
    pub to: usize,
    /// Pose of `to` in the frame of `from`.
    pub measurement: Pose,
    pub covariance: Matrix6<f64>,
    /// `L⁻¹` for `covariance = L Lᵀ`.
    whiten: Matrix6<f64>,
}

impl Edge {
    pub fn new(kind: EdgeKind, from: usize, to: usize, measurement: Pose, covariance: Matrix6<f64>) -> Result<Self> {
        if !measurement.is_finite() || covariance.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("pose-graph edge"));
        }
        let sym = (covariance + covariance.transpose()) * 0.5;
        let l = sym
            .cholesky()
            .ok_or_else(|| Error::InvalidData(format!("edge {from}->{to} covariance is not positive definite")))?
            .l();
        let whiten = l
            .try_inverse()
            .ok_or_else(|| Error::InvalidData(format!("edge {from}->{to} covariance is singular")))?;
        Ok(Self {
            kind,
            from,
            to,
            measurement,
            covariance: sym,
            whiten,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphConfig {
    /// Standard deviation of the per-vertex depth prior.
    pub sigma_depth: f64,
    /// Standard deviation of the per-vertex roll/pitch prior.
    pub sigma_level: f64,
    /// Standard deviation holding the first vertex in place.
    pub sigma_anchor: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            sigma_depth: 0.01,
            sigma_level: 1e-3,
            sigma_anchor: 1e-6,
            max_iterations: 50,
            tolerance: 1e-10,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, Default)]
pub struct PoseGraph {
    pub vertices: Vec<Pose>,
    /// Absolute depth and attitude references, taken from the pose each
    /// vertex was added with.
    references: Vec<Pose>,
    pub edges: Vec<Edge>,
}

type Block = Matrix6<f64>;
type Res6 = SVector<f64, 6>;

/// Whitened relative-pose residual `[R_iᵀ(t_j − t_i) − t_z, Log(R_zᵀ R_iᵀ R_j)]`
/// and its Jacobians w.r.t. right perturbations of both vertices.
pub fn edge_residual(xi: &Pose, xj: &Pose, edge: &Edge) -> (Res6, Block, Block) {
    let ri_t = xi.rotation.matrix().transpose();
    let d = xj.position - xi.position;
    let z = &edge.measurement;
    let et = ri_t * d - z.position;
    let rel = xi.rotation.inverse() * xj.rotation;
    let er = so3_log(&(z.rotation.inverse() * rel));
    let jr = so3_right_jacobian_inv(&er);

    let mut e = Res6::zeros();
    e.fixed_view_mut::<3, 1>(0, 0).copy_from(&et);
    e.fixed_view_mut::<3, 1>(3, 0).copy_from(&er);
    let mut ji = Block::zeros();
    ji.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-ri_t));
    ji.fixed_view_mut::<3, 3>(0, 3).copy_from(&skew(&(ri_t * d)));
    ji.fixed_view_mut::<3, 3>(3, 3)
        .copy_from(&(-jr * rel.matrix().transpose()));
    let mut jj = Block::zeros();
    jj.fixed_view_mut::<3, 3>(0, 0).copy_from(&ri_t);
    jj.fixed_view_mut::<3, 3>(3, 3).copy_from(&jr);
    (edge.whiten * e, edge.whiten * ji, edge.whiten * jj)
}

/// Depth and gravity-direction residual against an absolute reference.
pub fn level_residual(x: &Pose, reference: &Pose, cfg: &GraphConfig) -> (SVector<f64, 3>, SMatrix<f64, 3, 6>) {
    let up = Vector3::z();
    let g = x.rotation.inverse() * up;
    let g0 = reference.rotation.inverse() * up;
    let r = SVector::<f64, 3>::new(
        (x.position.z - reference.position.z) / cfg.sigma_depth,
        (g.x - g0.x) / cfg.sigma_level,
        (g.y - g0.y) / cfg.sigma_level,
    );
    let dg = skew(&g);
    let mut j = SMatrix::<f64, 3, 6>::zeros();
    j[(0, 2)] = 1.0 / cfg.sigma_depth;
    for c in 0..3 {
        j[(1, 3 + c)] = dg[(0, c)] / cfg.sigma_level;
        j[(2, 3 + c)] = dg[(1, c)] / cfg.sigma_level;
    }
    (r, j)
}

impl PoseGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_vertex(&mut self, pose: Pose) -> usize {
        self.vertices.push(pose);
        self.references.push(pose);
        self.vertices.len() - 1
    }

    fn check_vertex(&self, v: usize) -> Result<()> {
        if v < self.vertices.len() {
            Ok(())
        } else {
            Err(Error::InvalidData(format!("vertex {v} does not exist")))
        }
    }

    /// Odometry edge between consecutive vertices.
    pub fn add_dr_edge(&mut self, from: usize, to: usize, measurement: Pose, covariance: Matrix6<f64>) -> Result<()> {
        self.check_vertex(from)?;
        self.check_vertex(to)?;
        if to != from + 1 {
            return Err(Error::InvalidData(format!("odometry edge {from}->{to} is not between consecutive vertices")));
        }
        if self.edges.iter().any(|e| e.kind == EdgeKind::Dr && e.from == from) {
            return Err(Error::InvalidData(format!("duplicate odometry edge from {from}")));
        }
        self.edges.push(Edge::new(EdgeKind::Dr, from, to, measurement, covariance)?);
        Ok(())
    }

    pub fn add_lc_edge(&mut self, from: usize, to: usize, measurement: Pose, covariance: Matrix6<f64>) -> Result<()> {
        self.check_vertex(from)?;
        self.check_vertex(to)?;
        if from == to {
            return Err(Error::InvalidData("loop closure links a vertex to itself".into()));
        }
        self.edges.push(Edge::new(EdgeKind::Lc, from, to, measurement, covariance)?);
        Ok(())
    }

    pub fn lc_count(&self) -> usize {
        self.edges.iter().filter(|e| e.kind == EdgeKind::Lc).count()
    }

    fn check_connected(&self) -> Result<()> {
        let n = self.vertices.len();
        if n == 0 {
            return Err(Error::Empty("pose graph vertices"));
        }
        let mut linked = vec![false; n.saturating_sub(1)];
        for e in self.edges.iter().filter(|e| e.kind == EdgeKind::Dr) {
            linked[e.from] = true;
        }
        match linked.iter().position(|l| !l) {
            Some(i) => Err(Error::Disconnected(i + 1)),
            None => Ok(()),
        }
    }

    /// Edge indices in a canonical order so the result does not depend on
    /// insertion order.
    fn edge_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.edges.len()).collect();
        idx.sort_by(|&a, &b| {
            let (ea, eb) = (&self.edges[a], &self.edges[b]);
            (ea.kind, ea.from, ea.to)
                .cmp(&(eb.kind, eb.from, eb.to))
                .then_with(|| {
                    let ka: Vec<f64> = ea.measurement.position.iter().copied().collect();
                    let kb: Vec<f64> = eb.measurement.position.iter().copied().collect();
                    ka.partial_cmp(&kb).unwrap_or(std::cmp::Ordering::Equal)
                })
        });
        idx
    }

    fn cost(&self, poses: &[Pose], order: &[usize], cfg: &GraphConfig) -> f64 {
        let mut c = 0.0;
        for &k in order {
            let e = &self.edges[k];
            c += edge_residual(&poses[e.from], &poses[e.to], e).0.norm_squared();
        }
        c + self.prior_cost(poses, cfg)
    }

    fn prior_cost(&self, poses: &[Pose], cfg: &GraphConfig) -> f64 {
        let mut c = pose_prior_residual(&poses[0], &self.references[0], &[cfg.sigma_anchor; 6])
            .0
            .norm_squared();
        for (x, r) in poses.iter().zip(&self.references) {
            c += level_residual(x, r, cfg).0.norm_squared();
        }
        c
    }

    fn linearize(&self, poses: &[Pose], order: &[usize], cfg: &GraphConfig) -> (BlockSparse, Vec<Vector6<f64>>, f64) {
        let n = poses.len();
        let mut h = BlockSparse::new(n);
        let mut g = vec![Vector6::zeros(); n];
        let mut cost = 0.0;
        for &k in order {
            let e = &self.edges[k];
            let (r, ji, jj) = edge_residual(&poses[e.from], &poses[e.to], e);
            cost += r.norm_squared();
            h.add(e.from, e.from, &(ji.transpose() * ji));
            h.add(e.to, e.to, &(jj.transpose() * jj));
            h.add(e.from, e.to, &(ji.transpose() * jj));
            g[e.from] += ji.transpose() * r;
            g[e.to] += jj.transpose() * r;
        }
        let (r, j) = pose_prior_residual(&poses[0], &self.references[0], &[cfg.sigma_anchor; 6]);
        cost += r.norm_squared();
        h.add(0, 0, &(j.transpose() * j));
        g[0] += j.transpose() * r;
        for (v, (x, reference)) in poses.iter().zip(&self.references).enumerate() {
            let (r, j) = level_residual(x, reference, cfg);
            cost += r.norm_squared();
            h.add(v, v, &(j.transpose() * j));
            g[v] += j.transpose() * r;
        }
        (h, g, cost)
    }

    /// Whitened squared residual of the current vertices.
    pub fn residual(&self, cfg: &GraphConfig) -> f64 {
        self.cost(&self.vertices, &self.edge_order(), cfg)
    }

    /// Levenberg–Marquardt over all vertex poses; only cost-decreasing steps
    /// are accepted.
    pub fn optimize(&mut self, cfg: &GraphConfig) -> Result<GraphReport> {
        self.check_connected()?;
        let order = self.edge_order();
        let mut poses = self.vertices.clone();
        let (mut h, mut g, mut cost) = self.linearize(&poses, &order, cfg);
        let initial_cost = cost;
        if !cost.is_finite() {
            return Err(Error::NonFinite("pose-graph cost"));
        }
        let mut lambda = 1e-6;
        let mut iterations = 0;
        while iterations < cfg.max_iterations && cost > 1e-24 {
            iterations += 1;
            let mut damped = h.clone();
            for d in damped.diag.iter_mut() {
                for k in 0..6 {
                    d[(k, k)] *= 1.0 + lambda;
                    d[(k, k)] += 1e-12;
                }
            }
            let rhs: Vec<Vector6<f64>> = g.iter().map(|v| -v).collect();
            let step = match damped.solve(&rhs) {
                Ok(s) => s,
                Err(_) => {
                    lambda *= 10.0;
                    if lambda > 1e10 {
                        break;
                    }
                    continue;
                }
            };
            let trial: Vec<Pose> = poses
                .iter()
                .zip(&step)
                .map(|(p, d)| p.retract(d.as_slice()))
                .collect();
            let c = self.cost(&trial, &order, cfg);
            if c.is_finite() && c <= cost {
                let rel = (cost - c) / cost.max(1e-300);
                poses = trial;
                (h, g, cost) = self.linearize(&poses, &order, cfg);
                lambda = (lambda * 0.1).max(1e-12);
                if rel < cfg.tolerance {
                    break;
                }
            } else {
                lambda *= 10.0;
                if lambda > 1e10 {
                    break;
                }
            }
        }
        self.vertices = poses;
        Ok(GraphReport {
            initial_cost,
            final_cost: cost,
            iterations,
        })
    }

    /// Edges CSV: kind, endpoints, 6-DoF measurement and the upper triangle
    /// of its covariance, row-major.
    pub fn write_edges(&self, w: &mut impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<String> = ["type", "from", "to", "x", "y", "z", "roll", "pitch", "yaw"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for i in 0..6 {
            for j in i..6 {
                header.push(format!("c{i}{j}"));
            }
        }
        out.write_record(&header)?;
        for e in &self.edges {
            let (roll, pitch, yaw) = e.measurement.rpy();
            let p = e.measurement.position;
            let mut rec = vec![e.kind.name().to_string(), e.from.to_string(), e.to.to_string()];
            rec.extend([p.x, p.y, p.z, roll, pitch, yaw].iter().map(|v| v.to_string()));
            for i in 0..6 {
                for j in i..6 {
                    rec.push(e.covariance[(i, j)].to_string());
                }
            }
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}
