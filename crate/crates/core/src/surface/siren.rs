//! Sine-activated MLP mapping horizontal position to seafloor height.
//!
//! Every hidden layer computes `sin(ω₀ (W a + b))`; the last layer is linear.
//! The forward pass carries two tangent channels so the spatial gradient comes
//! out exactly, and the backward pass differentiates value and gradient
//! channels together with respect to every weight.

use std::sync::atomic::{AtomicBool, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

static CLAMP_WARNED: AtomicBool = AtomicBool::new(false);

/// Affine map between world metres and the network's `[-1, 1]` domain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub center: [f64; 2],
    /// Metres per normalized unit, shared by both horizontal axes.
    pub input_scale: f64,
    pub output_offset: f64,
    /// Metres per unit of raw network output.
    pub output_scale: f64,
}

impl Normalization {
    pub fn identity() -> Self {
        Self {
            center: [0.0, 0.0],
            input_scale: 1.0,
            output_offset: 0.0,
            output_scale: 1.0,
        }
    }

    /// Fits the input map to a bounding box `[x0, x1] × [y0, y1]`.
    pub fn from_bounds(x0: f64, x1: f64, y0: f64, y1: f64, output_offset: f64, output_scale: f64) -> Self {
        let half = 0.5 * (x1 - x0).max(y1 - y0);
        Self {
            center: [0.5 * (x0 + x1), 0.5 * (y0 + y1)],
            input_scale: half.max(1e-6),
            output_offset,
            output_scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.input_scale.is_finite() && self.input_scale != 0.0)
            || !(self.output_scale.is_finite() && self.output_scale != 0.0)
        {
            return Err(Error::Config("normalization scales must be finite and nonzero".into()));
        }
        Ok(())
    }

    pub fn to_unit(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (x - self.center[0]) / self.input_scale,
            (y - self.center[1]) / self.input_scale,
        )
    }

    pub fn from_unit(&self, u: f64, v: f64) -> (f64, f64) {
        (
            u * self.input_scale + self.center[0],
            v * self.input_scale + self.center[1],
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    /// Row-major `n_out × n_in`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            weights: vec![0.0; n_in * n_out],
            bias: vec![0.0; n_out],
        }
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SirenNetwork {
    pub layers: Vec<Layer>,
    pub omega0: f64,
    pub norm: Normalization,
}

/// Per-layer intermediates of one forward pass.
struct Trace {
    /// Inputs to each layer (value channel).
    inputs: Vec<Vec<f64>>,
    /// Tangent inputs to each layer, d/du and d/dv.
    tangents_u: Vec<Vec<f64>>,
    tangents_v: Vec<Vec<f64>>,
    /// Pre-activation `W a + b` of each hidden layer.
    pre: Vec<Vec<f64>>,
    /// `W t` for each hidden layer.
    pre_u: Vec<Vec<f64>>,
    pre_v: Vec<Vec<f64>>,
}

pub const DEFAULT_OMEGA0: f64 = 30.0;

impl SirenNetwork {
    /// `hidden_layers` sine layers of `width` units followed by a linear head,
    /// so the default 5-layer network is `new(4, 128, ..)`.
    pub fn new<R: Rng + ?Sized>(hidden_layers: usize, width: usize, omega0: f64, norm: Normalization, rng: &mut R) -> Self {
        assert!(hidden_layers >= 1 && width >= 1);
        let mut dims = vec![2];
        dims.extend(std::iter::repeat(width).take(hidden_layers));
        dims.push(1);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (i, w) in dims.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let limit = if i == 0 {
                1.0 / n_in as f64
            } else {
                (6.0 / n_in as f64).sqrt() / omega0
            };
            let bias_limit = 1.0 / (n_in as f64).sqrt();
            let mut layer = Layer::zeros(n_in, n_out);
            for v in layer.weights.iter_mut() {
                *v = rng.random_range(-limit..limit);
            }
            // The head bias is in output units; start it at zero so the
            // network initially predicts the normalization offset.
            if i + 2 < dims.len() {
                for v in layer.bias.iter_mut() {
                    *v = rng.random_range(-bias_limit..bias_limit);
                }
            }
            layers.push(layer);
        }
        Self { layers, omega0, norm }
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].n_in];
        d.extend(self.layers.iter().map(|l| l.n_out));
        d
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn write_params(&self, out: &mut [f64]) {
        let mut k = 0;
        for l in &self.layers {
            out[k..k + l.weights.len()].copy_from_slice(&l.weights);
            k += l.weights.len();
            out[k..k + l.bias.len()].copy_from_slice(&l.bias);
            k += l.bias.len();
        }
    }

    pub fn read_params(&mut self, src: &[f64]) {
        let mut k = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&src[k..k + nw]);
            k += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&src[k..k + nb]);
            k += nb;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.norm.validate()?;
        if self.layers.is_empty() || self.layers[0].n_in != 2 || self.layers.last().unwrap().n_out != 1 {
            return Err(Error::Config("network must map 2 inputs to 1 output".into()));
        }
        for w in self.layers.windows(2) {
            if w[0].n_out != w[1].n_in {
                return Err(Error::Config("layer dimensions do not chain".into()));
            }
        }
        for l in &self.layers {
            if l.weights.len() != l.n_in * l.n_out || l.bias.len() != l.n_out {
                return Err(Error::Config("layer buffer sizes do not match dimensions".into()));
            }
        }
        Ok(())
    }

    fn unit_input(&self, x: f64, y: f64) -> (f64, f64) {
        let (u, v) = self.norm.to_unit(x, y);
        let (cu, cv) = (u.clamp(-1.0, 1.0), v.clamp(-1.0, 1.0));
        if (cu != u || cv != v) && !CLAMP_WARNED.swap(true, Ordering::Relaxed) {
            log::warn!("surface queried outside its normalized domain at ({x:.2}, {y:.2}); clamping");
        }
        (cu, cv)
    }

    /// Raw network value in normalized units (no tangents).
    fn raw_value(&self, u: f64, v: f64) -> f64 {
        let mut a = vec![u, v];
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            next.clear();
            for o in 0..l.n_out {
                let row = &l.weights[o * l.n_in..(o + 1) * l.n_in];
                let z = row.iter().zip(&a).map(|(w, x)| w * x).sum::<f64>() + l.bias[o];
                next.push(if i == last { z } else { (self.omega0 * z).sin() });
            }
            std::mem::swap(&mut a, &mut next);
        }
        a[0]
    }

    fn forward_trace(&self, u: f64, v: f64) -> (f64, f64, f64, Trace) {
        let n = self.layers.len();
        let mut tr = Trace {
            inputs: Vec::with_capacity(n),
            tangents_u: Vec::with_capacity(n),
            tangents_v: Vec::with_capacity(n),
            pre: Vec::with_capacity(n - 1),
            pre_u: Vec::with_capacity(n - 1),
            pre_v: Vec::with_capacity(n - 1),
        };
        let mut a = vec![u, v];
        let mut tu = vec![1.0, 0.0];
        let mut tv = vec![0.0, 1.0];
        let w0 = self.omega0;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = vec![0.0; l.n_out];
            let mut zu = vec![0.0; l.n_out];
            let mut zv = vec![0.0; l.n_out];
            for o in 0..l.n_out {
                let row = &l.weights[o * l.n_in..(o + 1) * l.n_in];
                let (mut s, mut su, mut sv) = (l.bias[o], 0.0, 0.0);
                for k in 0..l.n_in {
                    s += row[k] * a[k];
                    su += row[k] * tu[k];
                    sv += row[k] * tv[k];
                }
                z[o] = s;
                zu[o] = su;
                zv[o] = sv;
            }
            tr.inputs.push(std::mem::take(&mut a));
            tr.tangents_u.push(std::mem::take(&mut tu));
            tr.tangents_v.push(std::mem::take(&mut tv));
            if i + 1 == n {
                return (z[0], zu[0], zv[0], tr);
            }
            a = z.iter().map(|&s| (w0 * s).sin()).collect();
            tu = z.iter().zip(&zu).map(|(&s, &d)| w0 * (w0 * s).cos() * d).collect();
            tv = z.iter().zip(&zv).map(|(&s, &d)| w0 * (w0 * s).cos() * d).collect();
            tr.pre.push(z);
            tr.pre_u.push(zu);
            tr.pre_v.push(zv);
        }
        unreachable!("network has at least one layer")
    }

    /// Height in metres.
    pub fn height(&self, x: f64, y: f64) -> Result<f64> {
        if !(x.is_finite() && y.is_finite()) {
            return Err(Error::NonFinite("surface query"));
        }
        Ok(self.eval_height(x, y))
    }

    /// Spatial gradient (∂h/∂x, ∂h/∂y), dimensionless.
    pub fn grad_xy(&self, x: f64, y: f64) -> Result<(f64, f64)> {
        if !(x.is_finite() && y.is_finite()) {
            return Err(Error::NonFinite("surface query"));
        }
        let (_, gx, gy) = self.eval_height_grad(x, y);
        Ok((gx, gy))
    }

    pub(crate) fn eval_height(&self, x: f64, y: f64) -> f64 {
        let (u, v) = self.unit_input(x, y);
        self.norm.output_offset + self.norm.output_scale * self.raw_value(u, v)
    }

    pub(crate) fn eval_height_grad(&self, x: f64, y: f64) -> (f64, f64, f64) {
        let (u, v) = self.unit_input(x, y);
        let (h, hu, hv, _) = self.forward_trace(u, v);
        let s = self.norm.output_scale;
        let g = s / self.norm.input_scale;
        (self.norm.output_offset + s * h, g * hu, g * hv)
    }

    /// Accumulates into `grad` (this network's parameter slice) the derivative of
    /// `g_h·h + g_gx·∂h/∂x + g_gy·∂h/∂y` at `(x, y)`.
    pub fn backward(&self, x: f64, y: f64, g_h: f64, g_gx: f64, g_gy: f64, grad: &mut [f64]) {
        let (u, v) = self.unit_input(x, y);
        let s = self.norm.output_scale;
        let scale_g = s / self.norm.input_scale;
        let w0 = self.omega0;

        if g_gx == 0.0 && g_gy == 0.0 {
            self.backward_value(u, v, g_h * s, grad);
            return;
        }
        let (_, _, _, tr) = self.forward_trace(u, v);
        let n = self.layers.len();
        let offsets = self.layer_offsets();

        // Adjoints of the current layer's output, value and the two tangents.
        let mut ga = vec![g_h * s];
        let mut gu = vec![g_gx * scale_g];
        let mut gv = vec![g_gy * scale_g];
        for li in (0..n).rev() {
            let l = &self.layers[li];
            // Adjoints w.r.t. pre-activation z and tangent pre-activations.
            let (gz, gzu, gzv) = if li + 1 == n {
                (ga.clone(), gu.clone(), gv.clone())
            } else {
                let z = &tr.pre[li];
                let zu = &tr.pre_u[li];
                let zv = &tr.pre_v[li];
                let mut gz = vec![0.0; l.n_out];
                let mut gzu = vec![0.0; l.n_out];
                let mut gzv = vec![0.0; l.n_out];
                for o in 0..l.n_out {
                    let (sn, cs) = (w0 * z[o]).sin_cos();
                    let d1 = w0 * cs;
                    let d2 = -w0 * w0 * sn;
                    gz[o] = ga[o] * d1 + gu[o] * d2 * zu[o] + gv[o] * d2 * zv[o];
                    gzu[o] = gu[o] * d1;
                    gzv[o] = gv[o] * d1;
                }
                (gz, gzu, gzv)
            };
            let a = &tr.inputs[li];
            let tu = &tr.tangents_u[li];
            let tv = &tr.tangents_v[li];
            let off = offsets[li];
            let nw = l.weights.len();
            let mut na = vec![0.0; l.n_in];
            let mut nu = vec![0.0; l.n_in];
            let mut nv = vec![0.0; l.n_in];
            for o in 0..l.n_out {
                let row = &l.weights[o * l.n_in..(o + 1) * l.n_in];
                let gw = &mut grad[off + o * l.n_in..off + (o + 1) * l.n_in];
                for k in 0..l.n_in {
                    gw[k] += gz[o] * a[k] + gzu[o] * tu[k] + gzv[o] * tv[k];
                    na[k] += row[k] * gz[o];
                    nu[k] += row[k] * gzu[o];
                    nv[k] += row[k] * gzv[o];
                }
                grad[off + nw + o] += gz[o];
            }
            ga = na;
            gu = nu;
            gv = nv;
        }
    }

    /// Value-only backward pass; `g_raw` is the adjoint of the raw output.
    fn backward_value(&self, u: f64, v: f64, g_raw: f64, grad: &mut [f64]) {
        let n = self.layers.len();
        let w0 = self.omega0;
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(n);
        let mut cosines: Vec<Vec<f64>> = Vec::with_capacity(n - 1);
        let mut a = vec![u, v];
        for (i, l) in self.layers.iter().enumerate() {
            if i + 1 == n {
                acts.push(a);
                break;
            }
            let mut next = vec![0.0; l.n_out];
            let mut cs = vec![0.0; l.n_out];
            for o in 0..l.n_out {
                let row = &l.weights[o * l.n_in..(o + 1) * l.n_in];
                let z = row.iter().zip(&a).map(|(w, x)| w * x).sum::<f64>() + l.bias[o];
                let (s, c) = (w0 * z).sin_cos();
                next[o] = s;
                cs[o] = w0 * c;
            }
            acts.push(std::mem::replace(&mut a, next));
            cosines.push(cs);
        }
        let offsets = self.layer_offsets();
        let mut ga = vec![g_raw];
        for li in (0..n).rev() {
            let l = &self.layers[li];
            let gz: Vec<f64> = if li + 1 == n {
                ga
            } else {
                ga.iter().zip(&cosines[li]).map(|(g, c)| g * c).collect()
            };
            let a = &acts[li];
            let off = offsets[li];
            let nw = l.weights.len();
            let mut na = vec![0.0; l.n_in];
            for o in 0..l.n_out {
                let row = &l.weights[o * l.n_in..(o + 1) * l.n_in];
                let gw = &mut grad[off + o * l.n_in..off + (o + 1) * l.n_in];
                let g = gz[o];
                for k in 0..l.n_in {
                    gw[k] += g * a[k];
                    na[k] += row[k] * g;
                }
                grad[off + nw + o] += g;
            }
            ga = na;
        }
    }

    fn layer_offsets(&self) -> Vec<usize> {
        let mut offs = Vec::with_capacity(self.layers.len());
        let mut k = 0;
        for l in &self.layers {
            offs.push(k);
            k += l.param_count();
        }
        offs
    }

    /// Hidden-layer activations for a unit-domain input; used to check the
    /// initialization statistics.
    pub fn hidden_activations(&self, u: f64, v: f64) -> Vec<Vec<f64>> {
        let (_, _, _, tr) = self.forward_trace(u, v);
        tr.inputs.into_iter().skip(1).collect()
    }
}

/// Unit surface normal `normalize([-∂h/∂x, -∂h/∂y, 1])`.
pub fn normal_from_gradient(gx: f64, gy: f64) -> [f64; 3] {
    let n = (gx * gx + gy * gy + 1.0).sqrt();
    [-gx / n, -gy / n, 1.0 / n]
}
