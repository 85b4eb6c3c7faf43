//! Joint fitting of the surface, beam pattern, reflectivity and line gains
//! to altimeter and sidescan data.

mod adam;

pub use adam::Adam;

use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Ping, Pose, Side, Vec3};
use crate::grid::{Grid, ScatteredLinear};
use crate::render::{backward_bin, render_bin, RenderConfig};
use crate::surface::{ModelConfig, SirenNetwork, SurfaceModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub decay_every: usize,
    pub batch_pings: usize,
    pub batch_altimeter: usize,
    pub pretrain_epochs: usize,
    pub pretrain_grid: usize,
    pub pretrain_batch: usize,
    pub pretrain_lr: f64,
    /// Softening of the absolute-value losses at zero.
    pub loss_eps: f64,
    pub seed: u64,
    pub model: ModelConfig,
    pub render: RenderConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 800,
            lr: 2e-4,
            lr_decay: 0.995,
            decay_every: 2,
            batch_pings: 200,
            batch_altimeter: 800,
            pretrain_epochs: 10,
            pretrain_grid: 64,
            pretrain_batch: 128,
            pretrain_lr: 1e-4,
            loss_eps: 1e-8,
            seed: 0,
            model: ModelConfig::default(),
            render: RenderConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr_decay > 0.0
            && self.lr_decay <= 1.0
            && self.decay_every > 0
            && self.batch_pings > 0
            && self.batch_altimeter > 0
            && self.pretrain_grid >= 2
            && self.pretrain_batch > 0
            && self.pretrain_lr > 0.0
            && self.loss_eps > 0.0
            && self.model.hidden_layers > 0
            && self.model.width > 0
            && self.model.beam_kernels >= 2
            && self.model.reflectivity_grid >= 2;
        if !ok {
            return Err(Error::Config("training parameters out of range".into()));
        }
        self.render.validate()
    }

    /// Learning rate used at epoch `k`.
    pub fn lr_at(&self, k: usize) -> f64 {
        self.lr * self.lr_decay.powi((k / self.decay_every) as i32)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub height: f64,
    pub intensity: f64,
    pub total: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub pretrain: Vec<f64>,
    pub epochs: Vec<EpochLoss>,
    pub wall_time_s: f64,
}

/// One sidescan bin with its measured intensity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BinTarget {
    pub line: usize,
    pub pose: Pose,
    pub altimeter: Option<f64>,
    pub slant_range: f64,
    pub side: Side,
    pub measured: f64,
}

/// Loss terms for one optimizer step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossBatch {
    /// Seafloor points `(x, y, z)` from the altimeter.
    pub ground: Vec<[f64; 3]>,
    pub bins: Vec<BinTarget>,
}

/// `|d|` softened to `√(d² + ε²)`.
fn soft_abs(d: f64, eps: f64) -> (f64, f64) {
    let v = (d * d + eps * eps).sqrt();
    (v, d / v)
}

/// Seafloor point below each ping with an altimeter reading.
pub fn ground_points(pings: &[Ping]) -> Vec<[f64; 3]> {
    pings
        .iter()
        .filter_map(|p| {
            let h = p.altimeter?;
            let g = p.pose.position + p.pose.rotation * Vec3::new(0.0, 0.0, -h);
            Some([g.x, g.y, g.z])
        })
        .collect()
}

pub fn height_loss(net: &SirenNetwork, points: &[[f64; 3]], eps: f64) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::Empty("height loss batch"));
    }
    let mut sum = 0.0;
    for (i, p) in points.iter().enumerate() {
        let l = soft_abs(net.height(p[0], p[1])? - p[2], eps).0;
        if !l.is_finite() {
            return Err(Error::NonFiniteLoss { index: i });
        }
        sum += l;
    }
    Ok(sum / points.len() as f64)
}

pub fn intensity_loss(model: &SurfaceModel, bins: &[BinTarget], cfg: &RenderConfig, eps: f64) -> Result<f64> {
    if bins.is_empty() {
        return Err(Error::Empty("intensity loss batch"));
    }
    let mut sum = 0.0;
    for (i, b) in bins.iter().enumerate() {
        let rb = render_bin(model, b.line, &b.pose, b.slant_range, b.side, b.altimeter, cfg);
        let l = soft_abs(rb.intensity - b.measured, eps).0;
        if !l.is_finite() {
            return Err(Error::NonFiniteLoss { index: i });
        }
        sum += l;
    }
    Ok(sum / bins.len() as f64)
}

const CHUNK: usize = 32;

fn add_into(acc: &mut [f64], x: &[f64]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

/// Loss values `(L_H, L_I)` and the gradient of `L_H + L_I` over every
/// parameter of `model`. Either part is skipped when its batch is empty.
///
/// Terms are processed in fixed-size chunks whose partial gradients are summed
/// in order, so the result does not depend on the thread count. A non-finite
/// term is reported by its index: ground points first, then bins.
pub fn param_gradients(
    model: &SurfaceModel,
    batch: &LossBatch,
    cfg: &RenderConfig,
    eps: f64,
) -> Result<((f64, f64), Vec<f64>)> {
    let n_p = model.param_count();
    let lay = model.layout();
    let mut grad = vec![0.0; n_p];
    let (mut lh, mut li) = (0.0, 0.0);

    if !batch.ground.is_empty() {
        let w = 1.0 / batch.ground.len() as f64;
        let parts: Vec<Result<(f64, Vec<f64>)>> = batch
            .ground
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(c, pts)| {
                let mut g = vec![0.0; lay.net.len()];
                let mut s = 0.0;
                for (k, p) in pts.iter().enumerate() {
                    let (l, dl) = soft_abs(model.net.eval_height(p[0], p[1]) - p[2], eps);
                    if !l.is_finite() {
                        return Err(Error::NonFiniteLoss { index: c * CHUNK + k });
                    }
                    s += l;
                    model.net.backward(p[0], p[1], w * dl, 0.0, 0.0, &mut g);
                }
                Ok((s, g))
            })
            .collect();
        for part in parts {
            let (s, g) = part?;
            lh += s * w;
            add_into(&mut grad[lay.net.clone()], &g);
        }
    }

    if !batch.bins.is_empty() {
        let w = 1.0 / batch.bins.len() as f64;
        let offset = batch.ground.len();
        let parts: Vec<Result<(f64, Vec<f64>)>> = batch
            .bins
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(c, bins)| {
                let mut g = vec![0.0; n_p];
                let mut s = 0.0;
                for (k, b) in bins.iter().enumerate() {
                    let rb = render_bin(model, b.line, &b.pose, b.slant_range, b.side, b.altimeter, cfg);
                    let (l, dl) = soft_abs(rb.intensity - b.measured, eps);
                    if !l.is_finite() {
                        return Err(Error::NonFiniteLoss {
                            index: offset + c * CHUNK + k,
                        });
                    }
                    s += l;
                    backward_bin(model, b.line, &rb, cfg, w * dl, &mut g);
                }
                Ok((s, g))
            })
            .collect();
        for part in parts {
            let (s, g) = part?;
            li += s * w;
            add_into(&mut grad, &g);
        }
    }
    Ok(((lh, li), grad))
}

/// Model domain: ping footprint widened by the slant range, padded so the
/// arc search stays stable at full range. Returns `(bounds, height_range)`.
pub fn model_domain(pings: &[Ping], ground: &[[f64; 3]]) -> Result<([f64; 4], [f64; 2])> {
    if pings.is_empty() {
        return Err(Error::Empty("training pings"));
    }
    let r_max = pings.iter().map(|p| p.slant_range_max).fold(0.0, f64::max);
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in pings {
        let q = p.pose.position;
        x0 = x0.min(q.x);
        x1 = x1.max(q.x);
        y0 = y0.min(q.y);
        y1 = y1.max(q.y);
    }
    let half = (0.5 * (x1 - x0).max(y1 - y0) + r_max).max(2.0 * r_max);
    let (cx, cy) = (0.5 * (x0 + x1), 0.5 * (y0 + y1));
    let bounds = [cx - half, cx + half, cy - half, cy + half];

    let heights = if ground.is_empty() {
        let z = pings.iter().map(|p| p.pose.position.z).sum::<f64>() / pings.len() as f64;
        [z - r_max, z - 0.25 * r_max]
    } else {
        let lo = ground.iter().map(|g| g[2]).fold(f64::INFINITY, f64::min);
        let hi = ground.iter().map(|g| g[2]).fold(f64::NEG_INFINITY, f64::max);
        [lo, hi]
    };
    Ok((bounds, heights))
}

/// Fits the network to a heightmap for `epochs` passes in shuffled
/// minibatches. Returns the mean absolute error of each epoch.
pub fn pretrain_to_grid(
    net: &mut SirenNetwork,
    grid: &Grid,
    epochs: usize,
    batch: usize,
    lr: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    grid.validate()?;
    let mut pts = Vec::with_capacity(grid.values.len());
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let (x, y) = grid.node(i, j);
            pts.push([x, y, grid.get(i, j)]);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = vec![0.0; net.param_count()];
    net.write_params(&mut params);
    let mut adam = Adam::new(params.len());
    let mut history = Vec::with_capacity(epochs);
    let mut rising = 0;
    for epoch in 0..epochs {
        let order = sample(&mut rng, pts.len(), pts.len()).into_vec();
        let mut sum = 0.0;
        for idx in order.chunks(batch) {
            let w = 1.0 / idx.len() as f64;
            let parts: Vec<(f64, Vec<f64>)> = idx
                .par_chunks(CHUNK)
                .map(|c| {
                    let mut g = vec![0.0; params.len()];
                    let mut s = 0.0;
                    for &k in c {
                        let p = pts[k];
                        let (l, dl) = soft_abs(net.eval_height(p[0], p[1]) - p[2], 1e-8);
                        s += l;
                        net.backward(p[0], p[1], w * dl, 0.0, 0.0, &mut g);
                    }
                    (s, g)
                })
                .collect();
            let mut grad = vec![0.0; params.len()];
            for (s, g) in parts {
                sum += s;
                add_into(&mut grad, &g);
            }
            adam.step(&mut params, &grad, lr);
            net.read_params(&params);
        }
        let mae = sum / pts.len() as f64;
        if !mae.is_finite() {
            return Err(Error::Diverged {
                epoch,
                reason: "non-finite pretraining loss".into(),
            });
        }
        if history.last().is_some_and(|&prev| mae > prev) {
            rising += 1;
            if rising >= 10 {
                return Err(Error::Diverged {
                    epoch,
                    reason: "pretraining loss rose for 10 consecutive epochs".into(),
                });
            }
        } else {
            rising = 0;
        }
        history.push(mae);
    }
    Ok(history)
}

/// Mean absolute error between the network and every grid node.
pub fn grid_mae(net: &SirenNetwork, grid: &Grid) -> f64 {
    let mut sum = 0.0;
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let (x, y) = grid.node(i, j);
            sum += (net.eval_height(x, y) - grid.get(i, j)).abs();
        }
    }
    sum / grid.values.len() as f64
}

/// Builds a fresh model over the survey and pretrains it on the linear
/// interpolation of the altimeter ground points.
pub fn initial_model(pings: &[Ping], n_lines: usize, cfg: &TrainConfig) -> Result<(SurfaceModel, Vec<f64>)> {
    let ground = ground_points(pings);
    let (bounds, heights) = model_domain(pings, &ground)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = SurfaceModel::new(
        &cfg.model,
        bounds,
        heights,
        cfg.render.vertical_opening,
        n_lines,
        &mut rng,
    );
    if ground.is_empty() {
        log::warn!("no altimeter readings; skipping surface pretraining");
        return Ok((model, Vec::new()));
    }
    let grid = ScatteredLinear::new(&ground)?.to_grid(ground_bounds(&ground), cfg.pretrain_grid, cfg.pretrain_grid);
    let history = pretrain_to_grid(
        &mut model.net,
        &grid,
        cfg.pretrain_epochs,
        cfg.pretrain_batch,
        cfg.pretrain_lr,
        cfg.seed ^ 0x5eed,
    )?;
    Ok((model, history))
}

/// Bounding box of the ground points, widened to be non-degenerate.
pub fn ground_bounds(ground: &[[f64; 3]]) -> [f64; 4] {
    let mut b = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
    for g in ground {
        b[0] = b[0].min(g[0]);
        b[1] = b[1].max(g[0]);
        b[2] = b[2].min(g[1]);
        b[3] = b[3].max(g[1]);
    }
    for k in [0, 2] {
        if b[k + 1] - b[k] < 1.0 {
            b[k] -= 0.5;
            b[k + 1] += 0.5;
        }
    }
    b
}

/// Every bin of the given pings as loss targets.
pub fn bins_of(pings: &[Ping], line_of: &[usize], which: &[usize]) -> Vec<BinTarget> {
    let mut out = Vec::new();
    for &i in which {
        let p = &pings[i];
        for side in [Side::Port, Side::Starboard] {
            for (n, &measured) in p.bins(side).iter().enumerate() {
                out.push(BinTarget {
                    line: line_of[i],
                    pose: p.pose,
                    altimeter: p.altimeter,
                    slant_range: p.bin_range(n),
                    side,
                    measured,
                });
            }
        }
    }
    out
}

pub struct TrainOutcome {
    pub model: SurfaceModel,
    pub report: TrainReport,
}

/// Runs the full fit. `line_of[i]` is the sidescan line of ping `i`. When
/// `init` is given it replaces the pretrained initialization.
pub fn train(pings: &[Ping], line_of: &[usize], cfg: &TrainConfig, init: Option<SurfaceModel>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if pings.is_empty() {
        return Err(Error::Empty("training pings"));
    }
    if line_of.len() != pings.len() {
        return Err(Error::InvalidData("line index count differs from ping count".into()));
    }
    if pings.iter().any(|p| !p.pose.is_finite()) {
        return Err(Error::NonFinite("ping pose"));
    }
    let start = Instant::now();
    let n_lines = line_of.iter().max().map_or(1, |m| m + 1);
    let (mut model, pretrain) = match init {
        Some(m) => {
            if m.gains.gains.len() < n_lines {
                return Err(Error::InvalidData("initial model has too few line gains".into()));
            }
            (m, Vec::new())
        }
        None => initial_model(pings, n_lines, cfg)?,
    };
    let ground = ground_points(pings);
    if ground.is_empty() {
        log::warn!("no altimeter readings; training on intensities only");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut params = model.params();
    let mut adam = Adam::new(params.len());
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for k in 0..cfg.epochs {
        let m_h = cfg.batch_altimeter.min(ground.len());
        let m_i = cfg.batch_pings.min(pings.len());
        let batch = LossBatch {
            ground: sample(&mut rng, ground.len(), m_h).into_iter().map(|i| ground[i]).collect(),
            bins: bins_of(pings, line_of, &sample(&mut rng, pings.len(), m_i).into_vec()),
        };
        let ((lh, li), grad) = param_gradients(&model, &batch, &cfg.render, cfg.loss_eps).map_err(|e| match e {
            Error::NonFiniteLoss { index } => Error::Diverged {
                epoch: k,
                reason: format!("non-finite loss term {index}"),
            },
            e => e,
        })?;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged {
                epoch: k,
                reason: "non-finite gradient".into(),
            });
        }
        let lr = cfg.lr_at(k);
        adam.step(&mut params, &grad, lr);
        model.set_params(&params);
        epochs.push(EpochLoss {
            height: lh,
            intensity: li,
            total: lh + li,
            lr,
        });
        if k % 50 == 0 || k + 1 == cfg.epochs {
            log::info!("epoch {k}: L_H {lh:.4} L_I {li:.4} lr {lr:.2e}");
        }
    }
    Ok(TrainOutcome {
        model,
        report: TrainReport {
            pretrain,
            epochs,
            wall_time_s: start.elapsed().as_secs_f64(),
        },
    })
}

/// Samples the surface on a grid.
pub fn heightmap(net: &SirenNetwork, bounds: [f64; 4], nx: usize, ny: usize) -> Grid {
    Grid::from_fn(bounds, nx, ny, |x, y| net.eval_height(x, y))
}
