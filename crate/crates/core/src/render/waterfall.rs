//! `NRWF` waterfall images.
//!
//! Header: `"NRWF"`, n_pings u32, n_bins u32, slant_range_max f32, side u8
//! (0 port, 1 starboard, 2 both). Rows follow as little-endian f32. A
//! two-sided row holds the port bins followed by the starboard bins, each
//! ordered by increasing range.

use std::io::{Read, Write};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WaterfallSide {
    Port = 0,
    Starboard = 1,
    Both = 2,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Waterfall {
    pub n_bins: usize,
    pub slant_range_max: f64,
    pub side: WaterfallSide,
    pub rows: Vec<Vec<f64>>,
}

impl Waterfall {
    pub fn row_len(&self) -> usize {
        match self.side {
            WaterfallSide::Both => 2 * self.n_bins,
            _ => self.n_bins,
        }
    }

    pub fn n_pings(&self) -> usize {
        self.rows.len()
    }
}

pub fn write_waterfall(w: &mut impl Write, wf: &Waterfall) -> Result<()> {
    w.write_all(b"NRWF")?;
    w.write_all(&(wf.rows.len() as u32).to_le_bytes())?;
    w.write_all(&(wf.n_bins as u32).to_le_bytes())?;
    w.write_all(&(wf.slant_range_max as f32).to_le_bytes())?;
    w.write_all(&[wf.side as u8])?;
    let len = wf.row_len();
    let mut buf = Vec::with_capacity(4 * len);
    for row in &wf.rows {
        if row.len() != len {
            return Err(Error::InvalidData(format!("waterfall row has {} values, expected {len}", row.len())));
        }
        buf.clear();
        for &v in row {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_waterfall(r: &mut impl Read) -> Result<Waterfall> {
    let mut head = [0u8; 17];
    r.read_exact(&mut head)?;
    if &head[..4] != b"NRWF" {
        return Err(Error::Format("not an NRWF waterfall".into()));
    }
    let u32_at = |i: usize| u32::from_le_bytes(head[i..i + 4].try_into().unwrap()) as usize;
    let n_pings = u32_at(4);
    let n_bins = u32_at(8);
    let slant_range_max = f32::from_le_bytes(head[12..16].try_into().unwrap()) as f64;
    let side = match head[16] {
        0 => WaterfallSide::Port,
        1 => WaterfallSide::Starboard,
        2 => WaterfallSide::Both,
        s => return Err(Error::Format(format!("unknown waterfall side {s}"))),
    };
    let mut wf = Waterfall {
        n_bins,
        slant_range_max,
        side,
        rows: Vec::new(),
    };
    let len = wf.row_len();
    if len.saturating_mul(n_pings) > 1 << 30 {
        return Err(Error::Format("waterfall dimensions are implausible".into()));
    }
    let mut buf = vec![0u8; 4 * len];
    for _ in 0..n_pings {
        r.read_exact(&mut buf)?;
        wf.rows.push(
            buf.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
        );
    }
    Ok(wf)
}
