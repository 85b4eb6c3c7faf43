//! Survey directory layout: trajectories and associations as CSV, one
//! waterfall per line, the terrain as a grid, and `survey.json` holding the
//! plan, terrain description and line boundaries.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Survey, SurveyPlan, Terrain, TerrainSpec};
use crate::error::{Error, Result};
use crate::geometry::{AssociationEntry, DataAssociation, Ping, Pose, Vec3};
use crate::grid::Grid;
use crate::render::{read_waterfall, write_waterfall, Waterfall, WaterfallSide};
use crate::surface::HeightField;

#[derive(Serialize, Deserialize)]
struct Meta {
    plan: SurveyPlan,
    terrain: TerrainSpec,
    lines: Vec<(usize, usize)>,
}

#[derive(Serialize, Deserialize)]
struct TrajRow {
    ping_id: usize,
    time_s: f64,
    x: f64,
    y: f64,
    z: f64,
    roll: f64,
    pitch: f64,
    yaw: f64,
}

pub fn write_trajectory(w: impl Write, times: &[f64], poses: &[Pose]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    for (i, (t, p)) in times.iter().zip(poses).enumerate() {
        let (roll, pitch, yaw) = p.rpy();
        csv.serialize(TrajRow {
            ping_id: i,
            time_s: *t,
            x: p.position.x,
            y: p.position.y,
            z: p.position.z,
            roll,
            pitch,
            yaw,
        })?;
    }
    if poses.is_empty() {
        csv.write_record(["ping_id", "time_s", "x", "y", "z", "roll", "pitch", "yaw"])?;
    }
    csv.flush()?;
    Ok(())
}

/// Returns `(times, poses)`; rows must be ordered by ping id from zero.
pub fn read_trajectory(r: impl Read) -> Result<(Vec<f64>, Vec<Pose>)> {
    let mut times = Vec::new();
    let mut poses = Vec::new();
    for (i, row) in csv::Reader::from_reader(r).deserialize::<TrajRow>().enumerate() {
        let row = row?;
        if row.ping_id != i {
            return Err(Error::InvalidData(format!("trajectory row {i} has ping id {}", row.ping_id)));
        }
        let p = Pose::from_xyz_rpy(row.x, row.y, row.z, row.roll, row.pitch, row.yaw);
        if !p.is_finite() || !row.time_s.is_finite() {
            return Err(Error::NonFinite("trajectory row"));
        }
        times.push(row.time_s);
        poses.push(p);
    }
    Ok((times, poses))
}

pub fn write_associations(w: impl Write, da: &DataAssociation) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    for e in &da.entries {
        csv.serialize(e)?;
    }
    if da.entries.is_empty() {
        csv.write_record(["alpha_ping", "beta_ping", "landmark_id", "alpha_bin", "beta_bin"])?;
    }
    csv.flush()?;
    Ok(())
}

pub fn read_associations(r: impl Read) -> Result<DataAssociation> {
    let entries = csv::Reader::from_reader(r)
        .deserialize::<AssociationEntry>()
        .collect::<std::result::Result<Vec<_>, _>>()?;
    DataAssociation::new(entries)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .map_err(|e| Error::from(e).context(path.display().to_string()))
}

fn open(dir: &Path, name: &str) -> Result<BufReader<File>> {
    let path = dir.join(name);
    File::open(&path)
        .map(BufReader::new)
        .map_err(|e| Error::from(e).context(path.display().to_string()))
}

/// Terrain sampled at 1 m over the plan's swath area.
pub fn terrain_grid(terrain: &Terrain, plan: &SurveyPlan) -> Grid {
    let b = plan.area();
    let nx = (b[1] - b[0]).round() as usize + 1;
    let ny = (b[3] - b[2]).round() as usize + 1;
    Grid::from_fn(b, nx, ny, |x, y| terrain.height(x, y))
}

pub fn write_survey(dir: &Path, s: &Survey) -> Result<()> {
    fs::create_dir_all(dir)?;
    let lines = s.lines();
    let meta = Meta {
        plan: s.plan.clone(),
        terrain: s.terrain.clone(),
        lines: lines.clone(),
    };
    let mut w = create(dir, "survey.json")?;
    serde_json::to_writer_pretty(&mut w, &meta)?;
    w.flush()?;

    write_trajectory(create(dir, "gt.csv")?, &s.times, &s.gt)?;
    write_trajectory(create(dir, "dr.csv")?, &s.times, &s.dr)?;

    let mut alt = csv::Writer::from_writer(create(dir, "altimeter.csv")?);
    alt.write_record(["ping_id", "altitude"])?;
    for p in &s.pings {
        let v = p.altimeter.map_or(String::new(), |a| a.to_string());
        alt.write_record([p.index.to_string(), v])?;
    }
    alt.flush()?;

    for (k, &(first, last)) in lines.iter().enumerate() {
        let wf = Waterfall {
            n_bins: s.plan.n_bins,
            slant_range_max: s.plan.slant_range_max,
            side: WaterfallSide::Both,
            rows: s.pings[first..=last]
                .iter()
                .map(|p| p.port_bins.iter().chain(&p.starboard_bins).copied().collect())
                .collect(),
        };
        let mut w = create(dir, &format!("waterfall_{k}.nrwf"))?;
        write_waterfall(&mut w, &wf)?;
        w.flush()?;
    }

    write_associations(create(dir, "associations.csv")?, &s.associations)?;

    let mut lm = csv::Writer::from_writer(create(dir, "landmarks.csv")?);
    lm.write_record(["id", "x", "y", "z"])?;
    for (i, l) in s.landmarks.iter().enumerate() {
        lm.write_record([i.to_string(), l.x.to_string(), l.y.to_string(), l.z.to_string()])?;
    }
    lm.flush()?;

    let terrain = Terrain::new(s.terrain.clone())?;
    let mut w = create(dir, "terrain.grid")?;
    terrain_grid(&terrain, &s.plan).write(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_survey(dir: &Path) -> Result<Survey> {
    let meta: Meta = serde_json::from_reader(open(dir, "survey.json")?)?;
    meta.plan.validate()?;
    let (times, gt) = read_trajectory(open(dir, "gt.csv")?)?;
    let (dr_times, dr) = read_trajectory(open(dir, "dr.csv")?)?;
    let n = gt.len();
    if dr.len() != n || dr_times != times {
        return Err(Error::InvalidData("gt.csv and dr.csv disagree on pings".into()));
    }

    let mut altimeter = vec![None; n];
    for (i, rec) in csv::Reader::from_reader(open(dir, "altimeter.csv")?).records().enumerate() {
        let rec = rec?;
        let id: usize = rec
            .get(0)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::InvalidData(format!("altimeter row {i}: bad ping id")))?;
        if id >= n {
            return Err(Error::InvalidData(format!("altimeter ping {id} out of range")));
        }
        altimeter[id] = match rec.get(1).unwrap_or("") {
            "" => None,
            v => Some(v.parse::<f64>().map_err(|_| Error::InvalidData(format!("altimeter row {i}: bad value")))?),
        };
    }

    let mut line_of = vec![usize::MAX; n];
    let mut pings = Vec::with_capacity(n);
    for (k, &(first, last)) in meta.lines.iter().enumerate() {
        if first != pings.len() || last < first || last >= n {
            return Err(Error::InvalidData(format!("line {k} boundaries do not tile the pings")));
        }
        let wf = read_waterfall(&mut open(dir, &format!("waterfall_{k}.nrwf"))?)?;
        if wf.side != WaterfallSide::Both || wf.n_bins != meta.plan.n_bins || wf.n_pings() != last - first + 1 {
            return Err(Error::InvalidData(format!("waterfall_{k}.nrwf does not match its line")));
        }
        for (j, row) in wf.rows.into_iter().enumerate() {
            let i = first + j;
            line_of[i] = k;
            let (port, starboard) = row.split_at(wf.n_bins);
            pings.push(Ping {
                index: i,
                pose: dr[i],
                altimeter: altimeter[i],
                port_bins: port.to_vec(),
                starboard_bins: starboard.to_vec(),
                slant_range_max: meta.plan.slant_range_max,
            });
        }
    }
    if pings.len() != n {
        return Err(Error::InvalidData("waterfalls do not cover every ping".into()));
    }

    let associations = read_associations(open(dir, "associations.csv")?)?;
    if associations.entries.iter().any(|e| e.alpha_ping >= n || e.beta_ping >= n) {
        return Err(Error::InvalidData("association refers to a missing ping".into()));
    }

    let mut landmarks = Vec::new();
    for rec in csv::Reader::from_reader(open(dir, "landmarks.csv")?).records() {
        let rec = rec?;
        let v: Vec<f64> = (1..4)
            .map(|c| rec.get(c).and_then(|s| s.parse().ok()))
            .collect::<Option<_>>()
            .ok_or_else(|| Error::InvalidData("malformed landmark row".into()))?;
        landmarks.push(Vec3::new(v[0], v[1], v[2]));
    }

    Ok(Survey {
        plan: meta.plan,
        terrain: meta.terrain,
        times,
        gt,
        dr,
        pings,
        line_of,
        associations,
        landmarks,
    })
}
