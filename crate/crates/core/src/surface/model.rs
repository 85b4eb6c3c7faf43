use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::rbf::{BeamPattern, LineGains, Reflectivity};
use super::siren::{Normalization, SirenNetwork, DEFAULT_OMEGA0};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden_layers: usize,
    pub width: usize,
    pub omega0: f64,
    pub beam_kernels: usize,
    pub reflectivity_grid: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_layers: 4,
            width: 128,
            omega0: DEFAULT_OMEGA0,
            beam_kernels: 32,
            reflectivity_grid: 32,
        }
    }
}

/// Offsets of each parameter group inside the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    pub net: Range<usize>,
    pub beam: Range<usize>,
    pub reflectivity: Range<usize>,
    pub gains: Range<usize>,
}

impl ParamLayout {
    pub fn len(&self) -> usize {
        self.gains.end
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Every quantity learned from sidescan data: the surface network, beam
/// pattern, reflectivity and per-line gains.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceModel {
    pub net: SirenNetwork,
    pub beam: BeamPattern,
    pub reflectivity: Reflectivity,
    pub gains: LineGains,
}

impl SurfaceModel {
    /// `bounds` is `[x0, x1, y0, y1]` in metres; `height_range` the expected
    /// `[min, max]` seafloor height used to scale the network output.
    pub fn new<R: Rng + ?Sized>(
        cfg: &ModelConfig,
        bounds: [f64; 4],
        height_range: [f64; 2],
        phi_range: [f64; 2],
        n_lines: usize,
        rng: &mut R,
    ) -> Self {
        let [x0, x1, y0, y1] = bounds;
        let offset = 0.5 * (height_range[0] + height_range[1]);
        let scale = (0.5 * (height_range[1] - height_range[0])).max(1.0);
        let norm = Normalization::from_bounds(x0, x1, y0, y1, offset, scale);
        Self {
            net: SirenNetwork::new(cfg.hidden_layers, cfg.width, cfg.omega0, norm, rng),
            beam: BeamPattern::new(phi_range[0], phi_range[1], cfg.beam_kernels),
            reflectivity: Reflectivity::new(x0, x1, y0, y1, cfg.reflectivity_grid, cfg.reflectivity_grid),
            gains: LineGains::new(n_lines.max(1)),
        }
    }

    pub fn layout(&self) -> ParamLayout {
        let n = self.net.param_count();
        let b = n + self.beam.weights.len();
        let r = b + self.reflectivity.weights.len();
        let g = r + self.gains.gains.len();
        ParamLayout {
            net: 0..n,
            beam: n..b,
            reflectivity: b..r,
            gains: r..g,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().len()
    }

    pub fn params(&self) -> Vec<f64> {
        let lay = self.layout();
        let mut p = vec![0.0; lay.len()];
        self.net.write_params(&mut p[lay.net.clone()]);
        p[lay.beam].copy_from_slice(&self.beam.weights);
        p[lay.reflectivity].copy_from_slice(&self.reflectivity.weights);
        p[lay.gains].copy_from_slice(&self.gains.gains);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let lay = self.layout();
        assert_eq!(p.len(), lay.len(), "parameter vector length");
        self.net.read_params(&p[lay.net.clone()]);
        self.beam.weights.copy_from_slice(&p[lay.beam]);
        self.reflectivity.weights.copy_from_slice(&p[lay.reflectivity]);
        self.gains.gains.copy_from_slice(&p[lay.gains]);
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.beam.validate()?;
        self.reflectivity.validate()
    }
}
