//! Implicit bathymetry surface and the auxiliary learned scattering fields.

mod checkpoint;
mod model;
pub mod rbf;
pub mod siren;

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use model::{ModelConfig, ParamLayout, SurfaceModel};
pub use rbf::{BeamPattern, LineGains, Reflectivity};
pub use siren::{normal_from_gradient, Normalization, SirenNetwork, DEFAULT_OMEGA0};

/// Anything that can report seafloor height and slope at a horizontal position.
pub trait HeightField: Send + Sync {
    fn height(&self, x: f64, y: f64) -> f64;

    /// `(h, ∂h/∂x, ∂h/∂y)`.
    fn height_grad(&self, x: f64, y: f64) -> (f64, f64, f64);

    /// Metres per unit of the coordinates the arc search steps in.
    fn length_scale(&self) -> f64;
}

impl HeightField for SirenNetwork {
    fn height(&self, x: f64, y: f64) -> f64 {
        self.eval_height(x, y)
    }

    fn height_grad(&self, x: f64, y: f64) -> (f64, f64, f64) {
        self.eval_height_grad(x, y)
    }

    fn length_scale(&self) -> f64 {
        self.norm.input_scale
    }
}

impl<T: HeightField + ?Sized> HeightField for &T {
    fn height(&self, x: f64, y: f64) -> f64 {
        (**self).height(x, y)
    }

    fn height_grad(&self, x: f64, y: f64) -> (f64, f64, f64) {
        (**self).height_grad(x, y)
    }

    fn length_scale(&self) -> f64 {
        (**self).length_scale()
    }
}

impl<T: HeightField + ?Sized> HeightField for std::sync::Arc<T> {
    fn height(&self, x: f64, y: f64) -> f64 {
        (**self).height(x, y)
    }

    fn height_grad(&self, x: f64, y: f64) -> (f64, f64, f64) {
        (**self).height_grad(x, y)
    }

    fn length_scale(&self) -> f64 {
        (**self).length_scale()
    }
}

/// Constant-depth floor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlatFloor {
    pub z: f64,
    pub scale: f64,
}

impl HeightField for FlatFloor {
    fn height(&self, _: f64, _: f64) -> f64 {
        self.z
    }

    fn height_grad(&self, _: f64, _: f64) -> (f64, f64, f64) {
        (self.z, 0.0, 0.0)
    }

    fn length_scale(&self) -> f64 {
        self.scale
    }
}

/// Plane `z = z0 + ax·x + ay·y`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Plane {
    pub z0: f64,
    pub ax: f64,
    pub ay: f64,
    pub scale: f64,
}

impl HeightField for Plane {
    fn height(&self, x: f64, y: f64) -> f64 {
        self.z0 + self.ax * x + self.ay * y
    }

    fn height_grad(&self, x: f64, y: f64) -> (f64, f64, f64) {
        (self.height(x, y), self.ax, self.ay)
    }

    fn length_scale(&self) -> f64 {
        self.scale
    }
}
