//! Regular heightmaps.
//!
//! File format (`NRGD`): one ASCII header line
//! `NRGD <nx> <ny> <x0> <y0> <dx> <dy>` followed by `nx·ny` little-endian
//! f32 heights, row-major with `ny` rows of `nx`.

use std::io::{BufRead, Write};

use spade::{DelaunayTriangulation, FloatTriangulation, HasPosition, Point2, Triangulation};

use crate::error::{Error, Result};
use crate::surface::HeightField;

#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub x0: f64,
    pub y0: f64,
    pub dx: f64,
    pub dy: f64,
    pub values: Vec<f64>,
}

impl Grid {
    /// `nx × ny` nodes spanning `[x0, x1] × [y0, y1]` inclusive.
    pub fn from_fn(bounds: [f64; 4], nx: usize, ny: usize, f: impl Fn(f64, f64) -> f64) -> Self {
        assert!(nx >= 2 && ny >= 2);
        let [x0, x1, y0, y1] = bounds;
        let dx = (x1 - x0) / (nx - 1) as f64;
        let dy = (y1 - y0) / (ny - 1) as f64;
        let mut values = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                values.push(f(x0 + i as f64 * dx, y0 + j as f64 * dy));
            }
        }
        Self {
            nx,
            ny,
            x0,
            y0,
            dx,
            dy,
            values,
        }
    }

    pub fn node(&self, i: usize, j: usize) -> (f64, f64) {
        (self.x0 + i as f64 * self.dx, self.y0 + j as f64 * self.dy)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.nx + i]
    }

    pub fn bounds(&self) -> [f64; 4] {
        [
            self.x0,
            self.x0 + (self.nx - 1) as f64 * self.dx,
            self.y0,
            self.y0 + (self.ny - 1) as f64 * self.dy,
        ]
    }

    pub fn range(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Bilinear sample with slopes; positions outside the grid are clamped.
    pub fn sample(&self, x: f64, y: f64) -> (f64, f64, f64) {
        let fx = ((x - self.x0) / self.dx).clamp(0.0, (self.nx - 1) as f64);
        let fy = ((y - self.y0) / self.dy).clamp(0.0, (self.ny - 1) as f64);
        let i = (fx.floor() as usize).min(self.nx - 2);
        let j = (fy.floor() as usize).min(self.ny - 2);
        let (tx, ty) = (fx - i as f64, fy - j as f64);
        let (a, b) = (self.get(i, j), self.get(i + 1, j));
        let (c, d) = (self.get(i, j + 1), self.get(i + 1, j + 1));
        let h = a * (1.0 - tx) * (1.0 - ty) + b * tx * (1.0 - ty) + c * (1.0 - tx) * ty + d * tx * ty;
        let gx = ((b - a) * (1.0 - ty) + (d - c) * ty) / self.dx;
        let gy = ((c - a) * (1.0 - tx) + (d - b) * tx) / self.dy;
        (h, gx, gy)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 2 || self.ny < 2 || self.values.len() != self.nx * self.ny {
            return Err(Error::InvalidData("grid dimensions do not match its data".into()));
        }
        if !(self.dx > 0.0 && self.dy > 0.0) {
            return Err(Error::InvalidData("grid spacing must be positive".into()));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("grid value"));
        }
        Ok(())
    }

    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        writeln!(
            w,
            "NRGD {} {} {} {} {} {}",
            self.nx, self.ny, self.x0, self.y0, self.dx, self.dy
        )?;
        let mut buf = Vec::with_capacity(4 * self.values.len());
        for &v in &self.values {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read(r: &mut impl BufRead) -> Result<Self> {
        let mut line = String::new();
        r.read_line(&mut line)?;
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 7 || f[0] != "NRGD" {
            return Err(Error::Format("not an NRGD grid".into()));
        }
        let bad = |_| Error::Format("malformed NRGD header".into());
        let nx: usize = f[1].parse().map_err(|_| Error::Format("malformed NRGD header".into()))?;
        let ny: usize = f[2].parse().map_err(|_| Error::Format("malformed NRGD header".into()))?;
        let x0: f64 = f[3].parse().map_err(bad)?;
        let y0: f64 = f[4].parse().map_err(bad)?;
        let dx: f64 = f[5].parse().map_err(bad)?;
        let dy: f64 = f[6].parse().map_err(bad)?;
        if nx.saturating_mul(ny) > 1 << 28 {
            return Err(Error::Format("grid dimensions are implausible".into()));
        }
        let mut buf = vec![0u8; 4 * nx * ny];
        r.read_exact(&mut buf)?;
        let values = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let g = Self {
            nx,
            ny,
            x0,
            y0,
            dx,
            dy,
            values,
        };
        g.validate()?;
        Ok(g)
    }
}

impl HeightField for Grid {
    fn height(&self, x: f64, y: f64) -> f64 {
        self.sample(x, y).0
    }

    fn height_grad(&self, x: f64, y: f64) -> (f64, f64, f64) {
        self.sample(x, y)
    }

    fn length_scale(&self) -> f64 {
        let [x0, x1, y0, y1] = self.bounds();
        0.5 * (x1 - x0).max(y1 - y0)
    }
}

struct Sample {
    pos: Point2<f64>,
    z: f64,
}

impl HasPosition for Sample {
    type Scalar = f64;

    fn position(&self) -> Point2<f64> {
        self.pos
    }
}

/// Piecewise-linear interpolant of scattered `(x, y, z)` samples over their
/// Delaunay triangulation; outside the convex hull the nearest sample is used.
pub struct ScatteredLinear {
    tri: DelaunayTriangulation<Sample>,
}

impl ScatteredLinear {
    pub fn new(points: &[[f64; 3]]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Empty("scattered height samples"));
        }
        let mut tri = DelaunayTriangulation::new();
        for p in points {
            if !p.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("scattered height sample"));
            }
            tri.insert(Sample {
                pos: Point2::new(p[0], p[1]),
                z: p[2],
            })
            .map_err(|e| Error::InvalidData(format!("triangulation failed: {e:?}")))?;
        }
        Ok(Self { tri })
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let p = Point2::new(x, y);
        self.tri
            .barycentric()
            .interpolate(|v| v.data().z, p)
            .unwrap_or_else(|| self.tri.nearest_neighbor(p).map(|v| v.data().z).unwrap_or(0.0))
    }

    pub fn to_grid(&self, bounds: [f64; 4], nx: usize, ny: usize) -> Grid {
        Grid::from_fn(bounds, nx, ny, |x, y| self.eval(x, y))
    }
}
