//! Submap loop closure with an elevation prior, and the pose graph it feeds.

mod graph;
mod ransac;
pub mod sparse;
mod two_view;


pub use graph::{edge_residual, level_residual, Edge, EdgeKind, GraphConfig, GraphReport, PoseGraph};
pub use ransac::{ransac_relative_pose, LoopClosure, RansacConfig, RansacOutcome};
pub use two_view::{
    degeneracy, elevation_residual, observation_residual, pose_prior_residual, solve_two_view, tri_err, ElevationPrior, LinearPrior, LmOptions, Observation, PriorKind, TwoViewProblem,
    TwoViewSolution, SIGMA_BEARING, SIGMA_FIXED, SIGMA_LINEAR_PRIOR, SIGMA_SURFACE_PRIOR,
};

use nalgebra::Matrix6;

/// Floor on translational standard deviations, metres.
const MIN_SIGMA_T: f64 = 1e-3;
/// Floor on roll/pitch standard deviations, radians.
const MIN_SIGMA_R: f64 = 1e-4;
/// Floor on the per-step yaw standard deviation, radians.
const MIN_SIGMA_YAW: f64 = 1e-5;

/// Covariance of one dead-reckoning step under a yaw random walk with the
/// given noise density. Heading is the only corrupted quantity, so the
/// body-frame step itself is known up to a small floor.
pub fn dr_edge_covariance(yaw_noise_density: f64, dt: f64, distance: f64) -> Matrix6<f64> {
    let s_yaw = (yaw_noise_density * dt).max(MIN_SIGMA_YAW);
    let s_t = MIN_SIGMA_T * (1.0 + distance);
    Matrix6::from_diagonal(&nalgebra::Vector6::new(
        s_t * s_t,
        s_t * s_t,
        s_t * s_t,
        MIN_SIGMA_R * MIN_SIGMA_R,
        MIN_SIGMA_R * MIN_SIGMA_R,
        s_yaw * s_yaw,
    ))
}

/// Prior standard deviations on a submap centre `steps` pings and
/// `distance` metres after the reference centre: accumulated yaw error, the
/// resulting lateral drift, and tight depth/roll/pitch.
pub fn dr_prior_sigmas(yaw_noise_density: f64, dt: f64, steps: usize, distance: f64) -> [f64; 6] {
    let s_yaw = (yaw_noise_density * dt * (steps.max(1) as f64).sqrt()).max(1e-3);
    let s_xy = (s_yaw * distance / 3f64.sqrt()).max(0.1);
    [s_xy, s_xy, 0.01, 1e-3, 1e-3, s_yaw]
}
