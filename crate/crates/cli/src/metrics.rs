//! Trajectory CSV files and error metrics against ground truth.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use rangecert::{GroundTruth, TrajectoryEstimate};

use crate::error::{io_err, CliError, Result};

/// Timestamp tolerance when pairing estimates with ground truth.
pub const ALIGN_TOL: f64 = 1e-6;

const AXES: [&str; 3] = ["x", "y", "z"];
const VEL: [&str; 3] = ["vx", "vy", "vz"];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    pub mae: f64,
    pub num_times: usize,
}

/// Writes `t,x,y[,z][,vx,vy[,vz]]`.
pub fn write_estimate<W: Write>(out: W, est: &TrajectoryEstimate) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let d = est.dim;
    let has_vel = est.state_dim == 2 * d;
    let mut hdr = vec!["t"];
    hdr.extend(&AXES[..d]);
    if has_vel {
        hdr.extend(&VEL[..d]);
    }
    w.write_record(&hdr)?;
    for (n, t) in est.times.iter().enumerate() {
        let mut rec = vec![t.to_string()];
        rec.extend(est.position(n).iter().map(|v| v.to_string()));
        if let Some(v) = est.velocity(n) {
            rec.extend(v.iter().map(|v| v.to_string()));
        }
        w.write_record(&rec)?;
    }
    w.flush()
}

/// Reads an estimate file and returns its times and `D×N` positions;
/// velocity columns are ignored.
pub fn read_estimate(path: &Path) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let parse = |msg: String| CliError::Parse {
        path: path.to_path_buf(),
        msg,
    };
    let hdr: Vec<String> = rdr
        .headers()
        .map_err(|e| parse(e.to_string()))?
        .iter()
        .map(str::to_owned)
        .collect();
    let d = hdr.iter().skip(1).take_while(|h| AXES.contains(&h.as_str())).count();
    if hdr.first().map(String::as_str) != Some("t") || !(2..=3).contains(&d) || hdr[1..=d] != AXES[..d] {
        return Err(parse(format!("expected header `t,x,y[,z]...`, got `{}`", hdr.join(","))));
    }
    let mut times = Vec::new();
    let mut xs = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse(e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let num = |k: usize| -> Result<f64> {
            rec.get(k)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| parse(format!("line {line}: bad or missing field `{}`", hdr[k])))
        };
        times.push(num(0)?);
        for k in 1..=d {
            xs.push(num(k)?);
        }
    }
    let n = times.len();
    Ok((times, DMatrix::from_vec(d, n, xs)))
}

/// For each estimate time, the index of the ground-truth sample within
/// [`ALIGN_TOL`]. Lists up to ten offenders on failure.
pub fn align(times: &[f64], truth: &GroundTruth) -> Result<Vec<usize>> {
    let mut idx = Vec::with_capacity(times.len());
    let mut offenders = Vec::new();
    for &t in times {
        let i = truth.times.partition_point(|&s| s < t - ALIGN_TOL);
        match truth.times.get(i) {
            Some(&s) if (s - t).abs() <= ALIGN_TOL => idx.push(i),
            _ => offenders.push(t),
        }
    }
    if offenders.is_empty() {
        return Ok(idx);
    }
    let mut list: Vec<String> = offenders.iter().take(10).map(|t| format!("t={t}")).collect();
    if offenders.len() > 10 {
        list.push(format!("and {} more", offenders.len() - 10));
    }
    Err(CliError::Alignment {
        tol: ALIGN_TOL,
        offenders: list.join(", "),
    })
}

/// RMSE and MAE of positions (`D×N`) against aligned ground truth.
pub fn position_errors(times: &[f64], positions: &DMatrix<f64>, truth: &GroundTruth) -> Result<Metrics> {
    if positions.nrows() != truth.dim() {
        return Err(rangecert::Error::Dimension {
            expected: truth.dim(),
            got: positions.nrows(),
        }
        .into());
    }
    let idx = align(times, truth)?;
    let n = idx.len();
    if n == 0 {
        return Err(CliError::Usage("no estimate rows to evaluate".into()));
    }
    let (mut sq, mut abs) = (0.0, 0.0);
    for (c, &i) in idx.iter().enumerate() {
        let e = (positions.column(c) - truth.positions.column(i)).norm();
        sq += e * e;
        abs += e;
    }
    Ok(Metrics {
        rmse: (sq / n as f64).sqrt(),
        mae: abs / n as f64,
        num_times: n,
    })
}

pub fn estimate_errors(est: &TrajectoryEstimate, truth: &GroundTruth) -> Result<Metrics> {
    position_errors(&est.times, &est.positions(), truth)
}
