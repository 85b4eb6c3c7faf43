//! Analytic seafloor: a base depth, broad Gaussian features and a scatter
//! of small boulders whose peaks serve as landmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::surface::HeightField;

/// Anisotropic Gaussian bump (positive: hill or ridge, negative: sinkhole).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub amplitude: f64,
    pub center: [f64; 2],
    /// Standard deviations along and across `angle`.
    pub sigma: [f64; 2],
    /// Direction of the first axis, radians from x.
    #[serde(default)]
    pub angle: f64,
}

impl Feature {
    fn eval(&self, x: f64, y: f64) -> (f64, f64, f64) {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.center[0], y - self.center[1]);
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        let (su, sv) = (self.sigma[0], self.sigma[1]);
        let e = self.amplitude * (-0.5 * (u * u / (su * su) + v * v / (sv * sv))).exp();
        let du = -u / (su * su) * e;
        let dv = -v / (sv * sv) * e;
        (e, c * du - s * dv, s * du + c * dv)
    }

    /// Upper bound on this feature's slope.
    fn max_slope(&self) -> f64 {
        self.amplitude.abs() * (-0.5f64).exp() / self.sigma[0].min(self.sigma[1])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TerrainSpec {
    pub base_depth: f64,
    pub features: Vec<Feature>,
    pub boulder_count: usize,
    pub boulder_amplitude: f64,
    pub boulder_sigma: f64,
    /// Region `[x0, x1, y0, y1]` the boulders are scattered over.
    pub boulder_area: [f64; 4],
    pub seed: u64,
    /// Length scale reported to the arc search.
    pub arc_scale: f64,
}

impl Default for TerrainSpec {
    fn default() -> Self {
        Self {
            base_depth: -30.0,
            features: Vec::new(),
            boulder_count: 0,
            boulder_amplitude: 0.15,
            boulder_sigma: 1.0,
            boulder_area: [0.0, 0.0, 0.0, 0.0],
            seed: 0,
            arc_scale: 150.0,
        }
    }
}

impl TerrainSpec {
    pub fn flat(depth: f64) -> Self {
        Self {
            base_depth: depth,
            ..Default::default()
        }
    }

    /// A single ridge running diagonally across the survey area.
    pub fn ridge(area: [f64; 4]) -> Self {
        let [x0, x1, y0, y1] = area;
        let (cx, cy) = (0.5 * (x0 + x1), 0.5 * (y0 + y1));
        Self {
            features: vec![Feature {
                amplitude: 8.0,
                center: [cx, cy],
                sigma: [0.6 * (x1 - x0), 25.0],
                angle: 0.4,
            }],
            boulder_area: area,
            ..Default::default()
        }
    }

    /// Ridge plus hills, a sinkhole and boulders; the default survey terrain.
    pub fn complex(area: [f64; 4], boulders: usize, seed: u64) -> Self {
        let [x0, x1, y0, y1] = area;
        let (w, h) = (x1 - x0, y1 - y0);
        let at = |fx: f64, fy: f64| [x0 + fx * w, y0 + fy * h];
        Self {
            features: vec![
                Feature {
                    amplitude: 8.0,
                    center: at(0.5, 0.5),
                    sigma: [0.6 * w, 25.0],
                    angle: 0.4,
                },
                Feature {
                    amplitude: 4.0,
                    center: at(0.2, 0.8),
                    sigma: [35.0, 25.0],
                    angle: 1.0,
                },
                Feature {
                    amplitude: 3.0,
                    center: at(0.8, 0.2),
                    sigma: [30.0, 30.0],
                    angle: 0.0,
                },
                Feature {
                    amplitude: -4.0,
                    center: at(0.7, 0.75),
                    sigma: [18.0, 14.0],
                    angle: -0.6,
                },
            ],
            boulder_count: boulders,
            boulder_area: area,
            seed,
            ..Default::default()
        }
    }

    pub fn preset(name: &str, area: [f64; 4], boulders: usize, seed: u64) -> Result<Self> {
        match name {
            "flat" => Ok(Self {
                boulder_count: boulders,
                boulder_area: area,
                seed,
                ..Self::flat(-30.0)
            }),
            "ridge" => Ok(Self {
                boulder_count: boulders,
                seed,
                ..Self::ridge(area)
            }),
            "complex" => Ok(Self::complex(area, boulders, seed)),
            other => Err(Error::Config(format!("unknown terrain preset '{other}'"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.base_depth.is_finite() || !(self.arc_scale > 0.0) {
            return Err(Error::Config("terrain base depth and arc scale must be finite and positive".into()));
        }
        for f in &self.features {
            if !(f.sigma[0] > 0.0 && f.sigma[1] > 0.0) || !f.amplitude.is_finite() {
                return Err(Error::Config("terrain feature needs finite amplitude and positive widths".into()));
            }
        }
        if self.boulder_count > 0 && !(self.boulder_sigma > 0.0) {
            return Err(Error::Config("boulder width must be positive".into()));
        }
        let [x0, x1, y0, y1] = self.boulder_area;
        if self.boulder_count > 0 && !(x1 > x0 && y1 > y0) {
            return Err(Error::Config("boulder area is empty".into()));
        }
        let slope: f64 = self.features.iter().map(Feature::max_slope).sum::<f64>()
            + if self.boulder_count > 0 {
                // Boulders are kept apart, so at most a couple overlap.
                2.0 * self.boulder_amplitude.abs() * (-0.5f64).exp() / self.boulder_sigma
            } else {
                0.0
            };
        if slope >= 1.0 {
            return Err(Error::Config(format!("terrain slope bound {slope:.2} reaches 45 degrees")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Terrain {
    pub spec: TerrainSpec,
    /// Boulder centres; their peaks are the landmarks.
    pub boulders: Vec<[f64; 2]>,
    buckets: Buckets,
}

/// Dense bucket grid over the boulder area.
#[derive(Clone, Debug)]
struct Buckets {
    x0: f64,
    y0: f64,
    cell: f64,
    nx: i64,
    ny: i64,
    cells: Vec<Vec<u32>>,
}

impl Buckets {
    fn new(area: [f64; 4], cell: f64) -> Self {
        let nx = (((area[1] - area[0]) / cell).ceil() as i64).max(1);
        let ny = (((area[3] - area[2]) / cell).ceil() as i64).max(1);
        Self {
            x0: area[0],
            y0: area[2],
            cell,
            nx,
            ny,
            cells: vec![Vec::new(); (nx * ny) as usize],
        }
    }

    fn key(&self, x: f64, y: f64) -> (i64, i64) {
        (((x - self.x0) / self.cell).floor() as i64, ((y - self.y0) / self.cell).floor() as i64)
    }

    fn get(&self, kx: i64, ky: i64) -> &[u32] {
        if kx < 0 || ky < 0 || kx >= self.nx || ky >= self.ny {
            return &[];
        }
        &self.cells[(ky * self.nx + kx) as usize]
    }

    fn push(&mut self, kx: i64, ky: i64, v: u32) {
        let i = (ky.clamp(0, self.ny - 1) * self.nx + kx.clamp(0, self.nx - 1)) as usize;
        self.cells[i].push(v);
    }
}

impl Terrain {
    pub fn new(spec: TerrainSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x7e55_a1);
        let [x0, x1, y0, y1] = spec.boulder_area;
        let min_sep = 4.0 * spec.boulder_sigma;
        let cell = 4.0 * spec.boulder_sigma;
        let mut boulders: Vec<[f64; 2]> = Vec::with_capacity(spec.boulder_count);
        let mut buckets = Buckets::new(spec.boulder_area, cell);
        let mut attempts = 0;
        while boulders.len() < spec.boulder_count {
            attempts += 1;
            if attempts > 100 * spec.boulder_count + 1000 {
                return Err(Error::Config("boulders do not fit in their area at the required spacing".into()));
            }
            let p = [rng.random_range(x0..x1), rng.random_range(y0..y1)];
            let (kx, ky) = buckets.key(p[0], p[1]);
            let crowded = (-1..=1).any(|i| {
                (-1..=1).any(|j| {
                    buckets.get(kx + i, ky + j).iter().any(|&b| {
                        let q = boulders[b as usize];
                        (q[0] - p[0]).hypot(q[1] - p[1]) < min_sep
                    })
                })
            });
            if crowded {
                continue;
            }
            buckets.push(kx, ky, boulders.len() as u32);
            boulders.push(p);
        }
        Ok(Self {
            spec,
            boulders,
            buckets,
        })
    }

    /// Height without boulders.
    pub fn smooth_height(&self, x: f64, y: f64) -> f64 {
        self.spec.base_depth + self.spec.features.iter().map(|f| f.eval(x, y).0).sum::<f64>()
    }

    pub fn landmarks(&self) -> Vec<[f64; 3]> {
        self.boulders.iter().map(|b| [b[0], b[1], self.height(b[0], b[1])]).collect()
    }

    /// Peak-to-trough height range over a region, sampled at `step` metres.
    pub fn amplitude(&self, area: [f64; 4], step: f64) -> f64 {
        let [x0, x1, y0, y1] = area;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        let mut y = y0;
        while y <= y1 {
            let mut x = x0;
            while x <= x1 {
                let h = self.height(x, y);
                lo = lo.min(h);
                hi = hi.max(h);
                x += step;
            }
            y += step;
        }
        hi - lo
    }
}

impl HeightField for Terrain {
    fn height(&self, x: f64, y: f64) -> f64 {
        self.height_grad(x, y).0
    }

    fn height_grad(&self, x: f64, y: f64) -> (f64, f64, f64) {
        let (mut h, mut gx, mut gy) = (self.spec.base_depth, 0.0, 0.0);
        for f in &self.spec.features {
            let (a, b, c) = f.eval(x, y);
            h += a;
            gx += b;
            gy += c;
        }
        if !self.boulders.is_empty() {
            let (kx, ky) = self.buckets.key(x, y);
            let s2 = self.spec.boulder_sigma * self.spec.boulder_sigma;
            let reach2 = 16.0 * s2;
            for i in -1..=1 {
                for j in -1..=1 {
                    for &b in self.buckets.get(kx + i, ky + j) {
                        let [bx, by] = self.boulders[b as usize];
                        let (dx, dy) = (x - bx, y - by);
                        let d2 = dx * dx + dy * dy;
                        if d2 > reach2 {
                            continue;
                        }
                        let e = self.spec.boulder_amplitude * (-0.5 * d2 / s2).exp();
                        h += e;
                        gx -= dx / s2 * e;
                        gy -= dy / s2 * e;
                    }
                }
            }
        }
        (h, gx, gy)
    }

    fn length_scale(&self) -> f64 {
        self.spec.arc_scale
    }
}
