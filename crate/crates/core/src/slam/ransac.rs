//! Loop-closure gating: robust relative pose from sampled landmark subsets.

use nalgebra::Matrix6;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::two_view::{solve_two_view, tri_residuals, ElevationPrior, LmOptions, TwoViewProblem, TwoViewSolution};
use crate::error::{Error, Result};
use crate::geometry::Pose;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    /// Minimum number of shared landmarks before a closure is attempted.
    pub min_shared: usize,
    pub sample_size: usize,
    pub iterations: usize,
    /// Acceptance threshold on the triangulation-error ratio.
    pub max_ratio: f64,
    /// A sampled solve only counts if the mean whitened squared residual of
    /// its own observations stays below this.
    pub max_sample_cost: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            min_shared: 10,
            sample_size: 6,
            iterations: 50,
            max_ratio: 0.7,
            max_sample_cost: 9.0,
            seed: 0,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_size == 0 || self.iterations == 0 {
            return Err(Error::Config("RANSAC sample size and iteration count must be positive".into()));
        }
        if self.min_shared <= self.sample_size {
            return Err(Error::Config(format!(
                "min_shared ({}) must exceed sample_size ({}) so a held-out set exists",
                self.min_shared, self.sample_size
            )));
        }
        if !(self.max_sample_cost > 0.0) {
            return Err(Error::Config("max_sample_cost must be positive".into()));
        }
        if !(self.max_ratio >= 0.0 && self.max_ratio.is_finite()) {
            return Err(Error::Config("max_ratio must be a non-negative number".into()));
        }
        Ok(())
    }
}

/// Relative-pose constraint between two submap centres.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoopClosure {
    pub measurement: Pose,
    pub covariance: Matrix6<f64>,
}

#[derive(Clone, Debug)]
pub struct RansacOutcome {
    /// Best `e_after / e_before` over all iterations (infinite if none ran).
    pub ratio: f64,
    pub e_before: f64,
    pub e_after: f64,
    pub solution: Option<TwoViewSolution>,
    pub accepted: bool,
}

impl RansacOutcome {
    pub fn edge(&self) -> Option<LoopClosure> {
        if !self.accepted {
            return None;
        }
        self.solution.as_ref().map(|s| LoopClosure {
            measurement: s.relative(),
            covariance: s.covariance,
        })
    }

    /// Whether this outcome would pass a different threshold.
    pub fn passes(&self, max_ratio: f64) -> bool {
        self.solution.is_some() && self.ratio < max_ratio
    }
}

fn iteration_seed(seed: u64, it: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (it as u64).wrapping_add(1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

struct Trial {
    ratio: f64,
    e_before: f64,
    e_after: f64,
    solution: TwoViewSolution,
}

/// Runs the sampled two-view solves and keeps the one with the smallest
/// triangulation-error ratio on its held-out landmarks. Solves that cannot
/// explain their own sample are discarded.
pub fn ransac_relative_pose(problem: &TwoViewProblem, prior: &ElevationPrior, cfg: &RansacConfig) -> Result<RansacOutcome> {
    cfg.validate()?;
    problem.validate()?;
    let n = problem.landmarks.len();
    let rejected = RansacOutcome {
        ratio: f64::INFINITY,
        e_before: f64::NAN,
        e_after: f64::NAN,
        solution: None,
        accepted: false,
    };
    if n < cfg.min_shared {
        return Ok(rejected);
    }
    let opts = LmOptions::default();
    // The error before a solve depends only on the held-out set.
    let all: Vec<usize> = (0..n).collect();
    let before = tri_residuals(problem, &all, &problem.xa, &problem.xb, prior)?;
    let rms = |sq: &[f64]| (sq.iter().sum::<f64>() / sq.len() as f64).sqrt();
    let trials: Vec<Option<Trial>> = (0..cfg.iterations)
        .into_par_iter()
        .map(|it| {
            let mut rng = ChaCha8Rng::seed_from_u64(iteration_seed(cfg.seed, it));
            let mut picked = sample(&mut rng, n, cfg.sample_size).into_vec();
            picked.sort_unstable();
            let held: Vec<usize> = (0..n).filter(|j| picked.binary_search(j).is_err()).collect();
            let sub = problem.subset(&picked);
            let sol = solve_two_view(&sub, prior, &opts).ok()?;
            if sol.cost > cfg.max_sample_cost * (2 * sub.observations.len()) as f64 {
                return None;
            }
            let e_before = rms(&held.iter().map(|&j| before[j]).collect::<Vec<_>>());
            let e_after = rms(&tri_residuals(problem, &held, &sol.xa, &sol.xb, prior).ok()?);
            let ratio = e_after / e_before.max(1e-12);
            ratio.is_finite().then_some(Trial {
                ratio,
                e_before,
                e_after,
                solution: sol,
            })
        })
        .collect();
    let best = trials
        .into_iter()
        .flatten()
        .fold(None::<Trial>, |acc, t| match acc {
            Some(a) if a.ratio <= t.ratio => Some(a),
            _ => Some(t),
        });
    Ok(match best {
        Some(t) => RansacOutcome {
            accepted: t.ratio < cfg.max_ratio,
            ratio: t.ratio,
            e_before: t.e_before,
            e_after: t.e_after,
            solution: Some(t.solution),
        },
        None => rejected,
    })
}
