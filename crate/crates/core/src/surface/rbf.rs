//! Gaussian radial-basis models for the beam pattern and seabed reflectivity.
//! Both pass the kernel sum through a softplus so the output is never negative.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn softplus(a: f64) -> f64 {
    if a > 30.0 {
        a
    } else {
        a.exp().ln_1p()
    }
}

pub fn logistic(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

/// `softplus⁻¹(y)` for `y > 0`.
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

/// Kernel-sum value that makes a flat RBF field evaluate to `target` away
/// from its edges, given kernel spacing and width (1-D).
fn flat_weight_1d(target: f64, spacing: f64, width: f64) -> f64 {
    softplus_inv(target) / ((2.0 * std::f64::consts::PI).sqrt() * width / spacing)
}

/// Sonar beam pattern over elevation angle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamPattern {
    pub phi_min: f64,
    pub phi_max: f64,
    pub centers: Vec<f64>,
    pub width: f64,
    pub weights: Vec<f64>,
}

impl BeamPattern {
    /// `n` evenly spaced kernels over `[phi_min, phi_max]`, width 1.5× spacing,
    /// weights chosen so the pattern starts near 1 in the interior.
    pub fn new(phi_min: f64, phi_max: f64, n: usize) -> Self {
        assert!(n >= 2 && phi_max > phi_min);
        let spacing = (phi_max - phi_min) / (n - 1) as f64;
        let centers = (0..n).map(|k| phi_min + k as f64 * spacing).collect();
        let width = 1.5 * spacing;
        let w = flat_weight_1d(1.0, spacing, width);
        Self {
            phi_min,
            phi_max,
            centers,
            width,
            weights: vec![w; n],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0) || self.centers.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("beam kernels must be increasing with positive width".into()));
        }
        if self.weights.len() != self.centers.len() {
            return Err(Error::Config("beam weight count mismatch".into()));
        }
        Ok(())
    }

    fn kernel(&self, k: usize, phi: f64) -> f64 {
        let d = phi - self.centers[k];
        (-d * d / (2.0 * self.width * self.width)).exp()
    }

    fn activation(&self, phi: f64) -> f64 {
        let phi = phi.clamp(self.phi_min, self.phi_max);
        (0..self.centers.len()).map(|k| self.weights[k] * self.kernel(k, phi)).sum()
    }

    pub fn eval(&self, phi: f64) -> f64 {
        softplus(self.activation(phi))
    }

    /// Adds `upstream · ∂eval/∂w` into `grad`.
    pub fn backward(&self, phi: f64, upstream: f64, grad: &mut [f64]) {
        let phi = phi.clamp(self.phi_min, self.phi_max);
        let s = logistic(self.activation(phi)) * upstream;
        for (k, g) in grad.iter_mut().enumerate() {
            *g += s * self.kernel(k, phi);
        }
    }
}

/// Seabed reflectivity over a regular grid of 2-D kernels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reflectivity {
    pub origin: [f64; 2],
    pub extent: [f64; 2],
    pub nx: usize,
    pub ny: usize,
    pub width: f64,
    /// Row-major, `ny` rows of `nx`.
    pub weights: Vec<f64>,
}

/// Kernels further than this many widths from a query are skipped.
const KERNEL_CUTOFF: f64 = 4.0;

impl Reflectivity {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64, nx: usize, ny: usize) -> Self {
        assert!(nx >= 2 && ny >= 2 && x1 > x0 && y1 > y0);
        let dx = (x1 - x0) / (nx - 1) as f64;
        let dy = (y1 - y0) / (ny - 1) as f64;
        let width = 1.5 * dx.max(dy);
        let per_axis = |sp: f64| (2.0 * std::f64::consts::PI).sqrt() * width / sp;
        let w = softplus_inv(1.0) / (per_axis(dx) * per_axis(dy));
        Self {
            origin: [x0, y0],
            extent: [x1 - x0, y1 - y0],
            nx,
            ny,
            width,
            weights: vec![w; nx * ny],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0) || self.weights.len() != self.nx * self.ny {
            return Err(Error::Config("reflectivity grid is malformed".into()));
        }
        Ok(())
    }

    fn spacing(&self) -> (f64, f64) {
        (
            self.extent[0] / (self.nx - 1) as f64,
            self.extent[1] / (self.ny - 1) as f64,
        )
    }

    /// Calls `f(index, kernel value)` for every kernel within the cutoff.
    fn for_each_kernel(&self, x: f64, y: f64, mut f: impl FnMut(usize, f64)) {
        let (dx, dy) = self.spacing();
        let r = KERNEL_CUTOFF * self.width;
        let fx = (x - self.origin[0]) / dx;
        let fy = (y - self.origin[1]) / dy;
        let i0 = ((fx - r / dx).ceil().max(0.0)) as usize;
        let i1 = ((fx + r / dx).floor().min((self.nx - 1) as f64)).max(-1.0);
        let j0 = ((fy - r / dy).ceil().max(0.0)) as usize;
        let j1 = ((fy + r / dy).floor().min((self.ny - 1) as f64)).max(-1.0);
        if i1 < 0.0 || j1 < 0.0 {
            return;
        }
        let inv = 1.0 / (2.0 * self.width * self.width);
        for j in j0..=(j1 as usize) {
            let cy = self.origin[1] + j as f64 * dy;
            for i in i0..=(i1 as usize) {
                let cx = self.origin[0] + i as f64 * dx;
                let d2 = (x - cx).powi(2) + (y - cy).powi(2);
                f(j * self.nx + i, (-d2 * inv).exp());
            }
        }
    }

    fn activation(&self, x: f64, y: f64) -> f64 {
        let mut a = 0.0;
        self.for_each_kernel(x, y, |k, g| a += self.weights[k] * g);
        a
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        softplus(self.activation(x, y))
    }

    pub fn backward(&self, x: f64, y: f64, upstream: f64, grad: &mut [f64]) {
        let s = logistic(self.activation(x, y)) * upstream;
        self.for_each_kernel(x, y, |k, g| grad[k] += s * g);
    }
}

/// One gain per sidescan line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineGains {
    pub gains: Vec<f64>,
}

impl LineGains {
    pub fn new(n_lines: usize) -> Self {
        Self {
            gains: vec![1.0; n_lines],
        }
    }

    pub fn get(&self, line: usize) -> f64 {
        self.gains[line]
    }
}
