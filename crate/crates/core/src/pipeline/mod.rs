//! Iterative mapping and localization: fit the surface to the current
//! trajectory, close loops against it, repeat.

mod export;
pub mod metrics;


pub use export::{export_run, write_attempts, write_thres2_sweep, THRES2_SWEEP};
pub use metrics::{compute_ate, compute_bathy_error, compute_rte, coverage_mask, BathyError, MeanStd};

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{bin_center_range, column_to_bin, partition_submaps, AssociationEntry, Ping, Pose, Vec3};
use crate::render::{gd_intersect, RenderConfig};
use crate::sim::{Survey, Terrain};
use crate::slam::{
    dr_edge_covariance, dr_prior_sigmas, ransac_relative_pose, ElevationPrior, GraphConfig, Observation, PoseGraph,
    PriorKind, RansacConfig, TwoViewProblem, SIGMA_BEARING, SIGMA_FIXED, SIGMA_LINEAR_PRIOR, SIGMA_SURFACE_PRIOR,
};
use crate::surface::{SirenNetwork, SurfaceModel};
use crate::train::{train, TrainConfig, TrainReport};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub iterations: usize,
    pub submap_size: usize,
    /// `min_shared` is the shared-landmark trigger, `sample_size` the
    /// landmarks per sample, `iterations` the sample count and `max_ratio`
    /// the acceptance threshold.
    pub ransac: RansacConfig,
    pub train: TrainConfig,
    /// Arc intersection settings for placing landmarks on the surface.
    pub render: RenderConfig,
    pub graph: GraphConfig,
    pub prior: PriorKind,
    /// Range standard deviation in bin widths.
    pub sigma_range_bins: f64,
    /// Continue training from the previous iteration's model.
    pub warm_start: bool,
    /// Bathymetry evaluation grid spacing, m.
    pub eval_cell: f64,
    pub output: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            iterations: 2,
            submap_size: 200,
            ransac: RansacConfig::default(),
            train: TrainConfig::default(),
            render: RenderConfig {
                gd_steps: 100,
                ..RenderConfig::default()
            },
            graph: GraphConfig::default(),
            prior: PriorKind::Surface,
            sigma_range_bins: 2.0,
            warm_start: true,
            eval_cell: 2.0,
            output: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("at least one iteration is required".into()));
        }
        if self.submap_size == 0 || !(self.sigma_range_bins > 0.0) || !(self.eval_cell > 0.0) {
            return Err(Error::Config("submap size, range sigma and evaluation cell must be positive".into()));
        }
        self.ransac.validate()?;
        self.train.validate()?;
        self.render.validate()
    }
}

/// One loop-closure attempt of a SLAM pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LcAttempt {
    pub submap: usize,
    pub a_center: usize,
    pub b_center: usize,
    pub landmarks: usize,
    /// Best held-out triangulation ratio (infinite when no sample solved).
    pub ratio: f64,
    pub accepted: bool,
    /// Translation error of the solved relative pose, if any.
    pub rte: Option<f64>,
    /// Translation error of the relative pose before the solve.
    pub rte_before: f64,
}

#[derive(Clone, Debug)]
pub struct SlamPass {
    pub trajectory: Vec<Pose>,
    pub attempts: Vec<LcAttempt>,
    pub graph: PoseGraph,
}

impl SlamPass {
    pub fn accepted(&self) -> usize {
        self.attempts.iter().filter(|a| a.accepted).count()
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.attempts.is_empty() {
            0.0
        } else {
            self.accepted() as f64 / self.attempts.len() as f64
        }
    }
}

/// Per-iteration evaluation. Row `j` describes trajectory `j` (row 0 is
/// dead reckoning), the surface fitted to it, and the loop closures of the
/// pass that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub ate: f64,
    pub rte: Option<MeanStd>,
    pub lc_attempts: usize,
    pub lc_accepted: usize,
    pub bathy: BathyError,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub iterations: Vec<IterationMetrics>,
    pub terrain_amplitude: f64,
}

pub struct RunOutput {
    /// `J + 1` trajectories, starting with dead reckoning.
    pub trajectories: Vec<Vec<Pose>>,
    /// `J + 1` models; model `j` is fitted to trajectory `j`.
    pub models: Vec<SurfaceModel>,
    pub train_reports: Vec<TrainReport>,
    pub passes: Vec<SlamPass>,
    pub report: EvalReport,
}

fn with_poses(pings: &[Ping], poses: &[Pose]) -> Vec<Ping> {
    pings
        .iter()
        .zip(poses)
        .map(|(p, &pose)| Ping { pose, ..p.clone() })
        .collect()
}

/// Splits sightings into clusters of nearby earlier pings.
fn cluster_by_alpha(mut entries: Vec<AssociationEntry>, gap: usize) -> Vec<Vec<AssociationEntry>> {
    entries.sort_by_key(|e| (e.alpha_ping, e.landmark_id));
    let mut out: Vec<Vec<AssociationEntry>> = Vec::new();
    for e in entries {
        match out.last_mut() {
            Some(c) if e.alpha_ping - c.last().unwrap().alpha_ping <= gap => c.push(e),
            _ => out.push(vec![e]),
        }
    }
    // A landmark is used once per attempt.
    for c in &mut out {
        let mut seen = std::collections::BTreeSet::new();
        c.retain(|e| seen.insert(e.landmark_id));
    }
    out
}

/// Sweeps the survey once: dead-reckoned vertices submap by submap, with
/// loop closures against earlier submaps gated by RANSAC. `surface` places
/// the landmarks and, for the surface prior, constrains their heights.
pub fn slam_pass(survey: &Survey, surface: &Arc<SirenNetwork>, prior: PriorKind, cfg: &PipelineConfig) -> Result<SlamPass> {
    let n = survey.pings.len();
    if n == 0 {
        return Err(Error::Empty("survey"));
    }
    let plan = &survey.plan;
    let (q, dt) = (plan.yaw_noise_density, plan.dt());
    let dr = &survey.dr;
    let mut travelled = vec![0.0; n];
    for i in 1..n {
        travelled[i] = travelled[i - 1] + (dr[i].position - dr[i - 1].position).norm();
    }
    let submaps = partition_submaps(n, cfg.submap_size);
    let mut submap_of = vec![0usize; n];
    for (k, s) in submaps.iter().enumerate() {
        submap_of[s.first..=s.last].fill(k);
    }
    let mut by_beta: Vec<Vec<AssociationEntry>> = vec![Vec::new(); submaps.len()];
    for e in &survey.associations.entries {
        if e.alpha_ping >= n || e.beta_ping >= n {
            return Err(Error::InvalidData("association refers to a missing ping".into()));
        }
        let (a, b) = if e.alpha_ping < e.beta_ping {
            (e.alpha_ping, e.beta_ping)
        } else {
            (e.beta_ping, e.alpha_ping)
        };
        if submap_of[a] + 1 < submap_of[b] {
            let e = if a == e.alpha_ping {
                *e
            } else {
                AssociationEntry {
                    alpha_ping: a,
                    beta_ping: b,
                    landmark_id: e.landmark_id,
                    alpha_bin: e.beta_bin,
                    beta_bin: e.alpha_bin,
                }
            };
            by_beta[submap_of[b]].push(e);
        }
    }

    let n_bins = plan.n_bins;
    let sigma_range = cfg.sigma_range_bins * plan.slant_range_max / n_bins as f64;
    let surface_prior = match prior {
        PriorKind::Surface => Some(ElevationPrior::surface(surface.clone(), SIGMA_SURFACE_PRIOR)?),
        _ => None,
    };

    let mut graph = PoseGraph::new();
    let mut attempts = Vec::new();
    for (bi, sub) in submaps.iter().enumerate() {
        for i in sub.first..=sub.last {
            if i == 0 {
                graph.add_vertex(dr[0]);
                continue;
            }
            let u = dr[i - 1].between(&dr[i]);
            let v = graph.vertices[i - 1].compose(&u);
            graph.add_vertex(v);
            graph.add_dr_edge(i - 1, i, u, dr_edge_covariance(q, dt, u.position.norm()))?;
        }
        for (ci, cluster) in cluster_by_alpha(std::mem::take(&mut by_beta[bi]), cfg.submap_size)
            .into_iter()
            .enumerate()
        {
            if cluster.len() < cfg.ransac.min_shared {
                continue;
            }
            let mut alphas: Vec<usize> = cluster.iter().map(|e| e.alpha_ping).collect();
            alphas.sort_unstable();
            let a_center = alphas[alphas.len() / 2];
            let b_center = sub.center;
            let xa = graph.vertices[a_center];
            let xb = graph.vertices[b_center];

            let mut observations = Vec::with_capacity(2 * cluster.len());
            let mut landmarks = Vec::with_capacity(cluster.len());
            for (k, e) in cluster.iter().enumerate() {
                for (view, ping, col, center) in
                    [(0, e.alpha_ping, e.alpha_bin, a_center), (1, e.beta_ping, e.beta_bin, b_center)]
                {
                    let (side, bin) = column_to_bin(col, n_bins);
                    let offset = dr[center].between(&dr[ping]);
                    let range = bin_center_range(bin, n_bins, plan.slant_range_max);
                    if view == 0 {
                        let pose = xa.compose(&offset);
                        let hit = gd_intersect(surface.as_ref(), &pose, range, side, survey.pings[ping].altimeter, &cfg.render);
                        landmarks.push(hit.point);
                    }
                    observations.push(Observation {
                        landmark: k,
                        view,
                        ping: offset,
                        side,
                        range,
                    });
                }
            }
            let steps = b_center.abs_diff(a_center);
            let distance = (travelled[b_center] - travelled[a_center]).abs();
            let problem = TwoViewProblem {
                xa,
                xb,
                observations,
                landmarks,
                sensor_offset: Pose::identity(),
                sigma_range,
                sigma_bearing: SIGMA_BEARING,
                sigma_a: SIGMA_FIXED,
                sigma_b: dr_prior_sigmas(q, dt, steps, distance),
            };
            let elevation = match prior {
                PriorKind::None => ElevationPrior::none(),
                PriorKind::Linear => {
                    let ground = |x: &Pose, ping: usize| -> Vec3 {
                        let alt = survey.pings[ping].altimeter.unwrap_or(plan.altitude);
                        x.position - Vec3::new(0.0, 0.0, alt)
                    };
                    ElevationPrior::linear(ground(&xa, a_center), ground(&xb, b_center), SIGMA_LINEAR_PRIOR)?
                }
                PriorKind::Surface => surface_prior.clone().expect("surface prior built above"),
            };
            let rcfg = RansacConfig {
                seed: cfg.ransac.seed ^ ((bi as u64) << 20) ^ ci as u64,
                ..cfg.ransac.clone()
            };
            let outcome = ransac_relative_pose(&problem, &elevation, &rcfg)
                .map_err(|e| e.context(format!("loop closure for submap {bi}")))?;
            let truth = survey.gt[a_center].between(&survey.gt[b_center]);
            attempts.push(LcAttempt {
                submap: bi,
                a_center,
                b_center,
                landmarks: cluster.len(),
                ratio: outcome.ratio,
                accepted: outcome.accepted,
                rte: outcome
                    .solution
                    .as_ref()
                    .map(|s| metrics::relative_translation_error(&s.relative(), &truth)),
                rte_before: metrics::relative_translation_error(&xa.between(&xb), &truth),
            });
            if let Some(lc) = outcome.edge() {
                graph.add_lc_edge(a_center, b_center, lc.measurement, lc.covariance)?;
                graph
                    .optimize(&cfg.graph)
                    .map_err(|e| e.context(format!("graph update after submap {bi}")))?;
            }
        }
    }
    graph.optimize(&cfg.graph).map_err(|e| e.context("final graph optimization"))?;
    Ok(SlamPass {
        trajectory: graph.vertices.clone(),
        attempts,
        graph,
    })
}

/// Bathymetry error of `net` against the survey terrain inside the swath
/// coverage of the ground-truth track.
pub fn evaluate_surface(survey: &Survey, net: &SirenNetwork, cell: f64) -> Result<BathyError> {
    let terrain = Terrain::new(survey.terrain.clone())?;
    let mask = coverage_mask(&survey.gt, survey.plan.swath(), survey.plan.area(), cell);
    compute_bathy_error(net, &terrain, &mask)
}

pub fn terrain_amplitude(survey: &Survey) -> Result<f64> {
    let terrain = Terrain::new(survey.terrain.clone())?;
    Ok(terrain.amplitude(survey.plan.area(), 2.0))
}

fn fit(survey: &Survey, poses: &[Pose], cfg: &PipelineConfig, init: Option<SurfaceModel>) -> Result<(SurfaceModel, TrainReport)> {
    let pings = with_poses(&survey.pings, poses);
    let out = train(&pings, &survey.line_of, &cfg.train, init)?;
    Ok((out.model, out.report))
}

/// Runs `J` rounds of surface fitting and SLAM, then fits a last surface
/// to the final trajectory.
pub fn run(survey: &Survey, cfg: &PipelineConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let mut trajectories = vec![survey.dr.clone()];
    let mut models: Vec<SurfaceModel> = Vec::new();
    let mut train_reports = Vec::new();
    let mut passes = Vec::new();
    for j in 0..=cfg.iterations {
        let init = if cfg.warm_start { models.last().cloned() } else { None };
        let (model, report) =
            fit(survey, &trajectories[j], cfg, init).map_err(|e| e.context(format!("iteration {j}: training")))?;
        log::info!("iteration {j}: surface fitted in {:.1} s", report.wall_time_s);
        models.push(model);
        train_reports.push(report);
        if j == cfg.iterations {
            break;
        }
        let net = Arc::new(models[j].net.clone());
        let pass = slam_pass(survey, &net, cfg.prior, cfg).map_err(|e| e.context(format!("iteration {j}: SLAM")))?;
        log::info!(
            "iteration {j}: {} of {} loop closures accepted",
            pass.accepted(),
            pass.attempts.len()
        );
        trajectories.push(pass.trajectory.clone());
        passes.push(pass);
    }

    let mut rows = Vec::with_capacity(cfg.iterations + 1);
    for (j, (traj, model)) in trajectories.iter().zip(&models).enumerate() {
        let pass = j.checked_sub(1).map(|k| &passes[k]);
        let rte = pass.map(|p| MeanStd::of(p.attempts.iter().filter(|a| a.accepted).filter_map(|a| a.rte)));
        rows.push(IterationMetrics {
            iteration: j,
            ate: compute_ate(traj, &survey.gt)?,
            rte,
            lc_attempts: pass.map_or(0, |p| p.attempts.len()),
            lc_accepted: pass.map_or(0, |p| p.accepted()),
            bathy: evaluate_surface(survey, &model.net, cfg.eval_cell)?,
        });
    }
    let report = EvalReport {
        iterations: rows,
        terrain_amplitude: terrain_amplitude(survey)?,
    };
    let out = RunOutput {
        trajectories,
        models,
        train_reports,
        passes,
        report,
    };
    if let Some(dir) = &cfg.output {
        export_run(dir, survey, &out, cfg)?;
    }
    Ok(out)
}
