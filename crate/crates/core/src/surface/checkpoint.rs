//! `NRSS` checkpoint files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "NRSS" | version u32 | n_dims u32 | dims u32 × n_dims | omega0 f32
//! per layer: weights f32 (row-major out × in) | bias f32 × out
//! center_x center_y input_scale output_offset output_scale   f32 × 5
//! beam:  n u32 | phi_min phi_max width f32 | centers f32 × n | weights f32 × n
//! refl:  nx u32 | ny u32 | x0 y0 extent_x extent_y width f32 | weights f32 × nx·ny
//! gains: n u32 | f32 × n
//! ```

use std::io::{Read, Write};

use super::model::SurfaceModel;
use super::rbf::{BeamPattern, LineGains, Reflectivity};
use super::siren::{Layer, Normalization, SirenNetwork};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"NRSS";
const VERSION: u32 = 1;

fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_f32(w: &mut impl Write, v: f64) -> Result<()> {
    w.write_all(&(v as f32).to_le_bytes())?;
    Ok(())
}

fn put_all(w: &mut impl Write, vs: &[f64]) -> Result<()> {
    for &v in vs {
        put_f32(w, v)?;
    }
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_f32(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(f32::from_le_bytes(b) as f64)
}

fn get_vec(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    (0..n).map(|_| get_f32(r)).collect()
}

fn bounded(n: u32, what: &str) -> Result<usize> {
    if n > 1 << 24 {
        return Err(Error::Format(format!("implausible {what} count {n}")));
    }
    Ok(n as usize)
}

pub fn write_checkpoint(w: &mut impl Write, m: &SurfaceModel) -> Result<()> {
    w.write_all(MAGIC)?;
    put_u32(w, VERSION)?;
    let dims = m.net.dims();
    put_u32(w, dims.len() as u32)?;
    for d in &dims {
        put_u32(w, *d as u32)?;
    }
    put_f32(w, m.net.omega0)?;
    for l in &m.net.layers {
        put_all(w, &l.weights)?;
        put_all(w, &l.bias)?;
    }
    let n = &m.net.norm;
    put_all(
        w,
        &[n.center[0], n.center[1], n.input_scale, n.output_offset, n.output_scale],
    )?;

    let b = &m.beam;
    put_u32(w, b.centers.len() as u32)?;
    put_all(w, &[b.phi_min, b.phi_max, b.width])?;
    put_all(w, &b.centers)?;
    put_all(w, &b.weights)?;

    let r = &m.reflectivity;
    put_u32(w, r.nx as u32)?;
    put_u32(w, r.ny as u32)?;
    put_all(w, &[r.origin[0], r.origin[1], r.extent[0], r.extent[1], r.width])?;
    put_all(w, &r.weights)?;

    put_u32(w, m.gains.gains.len() as u32)?;
    put_all(w, &m.gains.gains)?;
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<SurfaceModel> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not an NRSS checkpoint".into()));
    }
    let version = get_u32(r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let n_dims = bounded(get_u32(r)?, "dimension")?;
    if n_dims < 2 {
        return Err(Error::Format("checkpoint needs at least two layer dims".into()));
    }
    let dims = (0..n_dims)
        .map(|_| get_u32(r).and_then(|d| bounded(d, "layer width")))
        .collect::<Result<Vec<_>>>()?;
    let omega0 = get_f32(r)?;
    let mut layers = Vec::with_capacity(n_dims - 1);
    for w in dims.windows(2) {
        let (n_in, n_out) = (w[0], w[1]);
        let weights = get_vec(r, n_in * n_out)?;
        let bias = get_vec(r, n_out)?;
        layers.push(Layer {
            n_in,
            n_out,
            weights,
            bias,
        });
    }
    let nv = get_vec(r, 5)?;
    let norm = Normalization {
        center: [nv[0], nv[1]],
        input_scale: nv[2],
        output_offset: nv[3],
        output_scale: nv[4],
    };
    let net = SirenNetwork { layers, omega0, norm };

    let nb = bounded(get_u32(r)?, "beam kernel")?;
    let bh = get_vec(r, 3)?;
    let centers = get_vec(r, nb)?;
    let weights = get_vec(r, nb)?;
    let beam = BeamPattern {
        phi_min: bh[0],
        phi_max: bh[1],
        width: bh[2],
        centers,
        weights,
    };

    let nx = bounded(get_u32(r)?, "reflectivity column")?;
    let ny = bounded(get_u32(r)?, "reflectivity row")?;
    let rh = get_vec(r, 5)?;
    let weights = get_vec(r, nx * ny)?;
    let reflectivity = Reflectivity {
        origin: [rh[0], rh[1]],
        extent: [rh[2], rh[3]],
        nx,
        ny,
        width: rh[4],
        weights,
    };

    let ng = bounded(get_u32(r)?, "gain")?;
    let gains = LineGains {
        gains: get_vec(r, ng)?,
    };
    let model = SurfaceModel {
        net,
        beam,
        reflectivity,
        gains,
    };
    model.validate()?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::ModelConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn roundtrip_is_exact_at_f32_precision() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = ModelConfig {
            hidden_layers: 2,
            width: 8,
            beam_kernels: 6,
            reflectivity_grid: 4,
            ..Default::default()
        };
        let mut m = SurfaceModel::new(&cfg, [0.0, 100.0, -20.0, 60.0], [-20.0, -10.0], [0.05, 1.5], 3, &mut rng);
        // Snap to f32 so the roundtrip can be compared exactly.
        let p: Vec<f64> = m.params().iter().map(|&v| v as f32 as f64).collect();
        m.set_params(&p);
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &m).unwrap();
        assert_eq!(&buf[..4], b"NRSS");
        let back = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(back.params(), m.params());
        assert_eq!(back.net.dims(), vec![2, 8, 8, 1]);
        assert!((back.net.norm.input_scale - 50.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_wrong_magic_and_truncation() {
        assert!(matches!(
            read_checkpoint(&mut &b"NOPE\x01\x00\x00\x00"[..]),
            Err(Error::Format(_))
        ));
        assert!(read_checkpoint(&mut &b"NRSS\x01\x00\x00\x00\x03"[..]).is_err());
    }
}
