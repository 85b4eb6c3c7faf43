//! Plot data: metrics tables, trajectory overlays, loop-closure logs,
//! heightmaps and checkpoints.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{LcAttempt, MeanStd, PipelineConfig, RunOutput};
use crate::error::{Error, Result};
use crate::sim::{write_trajectory, Survey};
use crate::surface::write_checkpoint;
use crate::train::heightmap;

/// Acceptance thresholds tabulated against relative translation error.
pub const THRES2_SWEEP: [f64; 5] = [0.5, 0.6, 0.7, 0.8, 0.9];

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .map_err(|e| Error::from(e).context(path.display().to_string()))
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

/// RTE of the attempts that would pass each threshold.
pub fn thres2_sweep(attempts: &[LcAttempt]) -> Vec<(f64, MeanStd)> {
    THRES2_SWEEP
        .iter()
        .map(|&t| {
            let rte = attempts.iter().filter(|a| a.rte.is_some() && a.ratio < t).filter_map(|a| a.rte);
            (t, MeanStd::of(rte))
        })
        .collect()
}

pub fn write_thres2_sweep(w: impl Write, attempts: &[LcAttempt]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["thres2", "accepted", "rte_mean", "rte_std"])?;
    for (t, ms) in thres2_sweep(attempts) {
        let (mean, std) = if ms.count == 0 { (None, None) } else { (Some(ms.mean), Some(ms.std)) };
        csv.write_record([t.to_string(), ms.count.to_string(), opt(mean), opt(std)])?;
    }
    csv.flush()?;
    Ok(())
}

pub fn write_attempts<'a>(w: impl Write, passes: impl IntoIterator<Item = (usize, &'a [LcAttempt])>) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record([
        "iteration",
        "submap",
        "a_center",
        "b_center",
        "landmarks",
        "ratio",
        "accepted",
        "rte",
        "rte_before",
    ])?;
    for (j, attempts) in passes {
        for a in attempts {
            csv.write_record([
                j.to_string(),
                a.submap.to_string(),
                a.a_center.to_string(),
                a.b_center.to_string(),
                a.landmarks.to_string(),
                a.ratio.to_string(),
                (a.accepted as u8).to_string(),
                opt(a.rte),
                a.rte_before.to_string(),
            ])?;
        }
    }
    csv.flush()?;
    Ok(())
}

/// Writes every artifact of a run into `dir`. The file set depends only on
/// the number of iterations.
pub fn export_run(dir: &Path, survey: &Survey, out: &RunOutput, cfg: &PipelineConfig) -> Result<()> {
    fs::create_dir_all(dir)?;

    let mut csv = csv::Writer::from_writer(create(dir, "report.csv")?);
    csv.write_record([
        "iteration",
        "ate",
        "rte_mean",
        "rte_std",
        "lc_attempts",
        "lc_accepted",
        "bathy_mean",
        "bathy_std",
        "bathy_mae",
    ])?;
    for r in &out.report.iterations {
        csv.write_record([
            r.iteration.to_string(),
            r.ate.to_string(),
            opt(r.rte.filter(|m| m.count > 0).map(|m| m.mean)),
            opt(r.rte.filter(|m| m.count > 0).map(|m| m.std)),
            r.lc_attempts.to_string(),
            r.lc_accepted.to_string(),
            r.bathy.mean.to_string(),
            r.bathy.std.to_string(),
            r.bathy.mae.to_string(),
        ])?;
    }
    csv.flush()?;
    let mut w = create(dir, "report.json")?;
    serde_json::to_writer_pretty(&mut w, &out.report)?;
    w.flush()?;

    // Overlay of ground truth and every trajectory estimate.
    let mut csv = csv::Writer::from_writer(create(dir, "trajectories.csv")?);
    let mut header = vec!["ping_id".to_string(), "gt_x".into(), "gt_y".into()];
    for j in 0..out.trajectories.len() {
        header.push(format!("it{j}_x"));
        header.push(format!("it{j}_y"));
    }
    csv.write_record(&header)?;
    for (i, g) in survey.gt.iter().enumerate() {
        let mut row = vec![i.to_string(), g.position.x.to_string(), g.position.y.to_string()];
        for t in &out.trajectories {
            row.push(t[i].position.x.to_string());
            row.push(t[i].position.y.to_string());
        }
        csv.write_record(&row)?;
    }
    csv.flush()?;

    for (j, t) in out.trajectories.iter().enumerate() {
        write_trajectory(create(dir, &format!("trajectory_{j}.csv"))?, &survey.times, t)?;
    }

    write_attempts(
        create(dir, "lc_attempts.csv")?,
        out.passes.iter().enumerate().map(|(j, p)| (j + 1, p.attempts.as_slice())),
    )?;
    let last: &[LcAttempt] = out.passes.last().map_or(&[], |p| p.attempts.as_slice());
    write_thres2_sweep(create(dir, "rte_thres2.csv")?, last)?;

    for (j, p) in out.passes.iter().enumerate() {
        let mut w = create(dir, &format!("edges_{}.csv", j + 1))?;
        p.graph.write_edges(&mut w)?;
        w.flush()?;
    }

    let area = survey.plan.area();
    let nx = ((area[1] - area[0]) / cfg.eval_cell).round() as usize + 1;
    let ny = ((area[3] - area[2]) / cfg.eval_cell).round() as usize + 1;
    for (j, m) in out.models.iter().enumerate() {
        let mut w = create(dir, &format!("heightmap_{j}.grid"))?;
        heightmap(&m.net, area, nx, ny).write(&mut w)?;
        w.flush()?;
        let mut w = create(dir, &format!("model_{j}.nrss"))?;
        write_checkpoint(&mut w, m)?;
        w.flush()?;
    }
    Ok(())
}
