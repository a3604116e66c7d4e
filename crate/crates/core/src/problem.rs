//! Problem instances: anchors, timestamped range measurements and the noise
//! model, plus CSV ingestion.
//!
//! Files keep plain distances; squaring happens in [`crate::model`].

use std::collections::HashMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, DVectorView};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Measurements closer in time than this are grouped into one time index.
pub const TIME_GROUPING_TOL: f64 = 1e-9;

/// Known anchor positions, one column per anchor.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorSet {
    coords: DMatrix<f64>,
    ids: Vec<String>,
}

impl AnchorSet {
    pub fn new(ids: Vec<String>, coords: DMatrix<f64>) -> Result<Self> {
        let dim = coords.nrows();
        if !(2..=3).contains(&dim) {
            return Err(Error::Invalid(format!("anchor dimension must be 2 or 3, got {dim}")));
        }
        if coords.ncols() == 0 {
            return Err(Error::Invalid("at least one anchor is required".into()));
        }
        if ids.len() != coords.ncols() {
            return Err(Error::Dimension {
                expected: coords.ncols(),
                got: ids.len(),
            });
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("anchor coordinates must be finite".into()));
        }
        let mut seen = HashMap::new();
        for (m, id) in ids.iter().enumerate() {
            if seen.insert(id.as_str(), m).is_some() {
                return Err(Error::Invalid(format!("duplicate anchor id `{id}`")));
            }
        }
        Ok(Self { coords, ids })
    }

    /// Anchors labelled `A`, `B`, ... (or `A0`, `A1`, ... past 26).
    pub fn with_default_ids(coords: DMatrix<f64>) -> Result<Self> {
        let m = coords.ncols();
        let ids = (0..m)
            .map(|i| {
                if m <= 26 {
                    ((b'A' + i as u8) as char).to_string()
                } else {
                    format!("A{i}")
                }
            })
            .collect();
        Self::new(ids, coords)
    }

    pub fn dim(&self) -> usize {
        self.coords.nrows()
    }

    pub fn len(&self) -> usize {
        self.coords.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.ncols() == 0
    }

    pub fn position(&self, m: usize) -> DVectorView<'_, f64> {
        self.coords.column(m)
    }

    pub fn coords(&self) -> &DMatrix<f64> {
        &self.coords
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|s| s == id)
    }

    /// Coordinate-wise minimum and maximum.
    pub fn bounding_box(&self) -> (DVector<f64>, DVector<f64>) {
        let lo = DVector::from_fn(self.dim(), |r, _| self.coords.row(r).min());
        let hi = DVector::from_fn(self.dim(), |r, _| self.coords.row(r).max());
        (lo, hi)
    }
}

/// One raw range reading to anchor `anchor`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub anchor: usize,
    pub distance: f64,
}

/// Range readings grouped by strictly increasing time.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementSet {
    times: Vec<f64>,
    offsets: Vec<usize>,
    obs: Vec<Observation>,
}

impl MeasurementSet {
    /// Builds the set from per-time groups. Times must be strictly increasing
    /// and each group non-empty with distinct, valid anchor indices.
    pub fn new(times: Vec<f64>, groups: Vec<Vec<Observation>>, num_anchors: usize) -> Result<Self> {
        if times.len() != groups.len() {
            return Err(Error::Dimension {
                expected: times.len(),
                got: groups.len(),
            });
        }
        if times.is_empty() {
            return Err(Error::Invalid("at least one measurement time is required".into()));
        }
        for (i, w) in times.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(Error::Ordering {
                    index: i + 1,
                    prev: w[0],
                    next: w[1],
                });
            }
        }
        let mut offsets = Vec::with_capacity(times.len() + 1);
        let mut obs = Vec::with_capacity(groups.iter().map(Vec::len).sum());
        offsets.push(0);
        for (n, (t, group)) in times.iter().zip(groups).enumerate() {
            if !t.is_finite() {
                return Err(Error::Invalid(format!("time index {n} is not finite")));
            }
            if group.is_empty() {
                return Err(Error::Invalid(format!("time index {n} has no measurements")));
            }
            for (k, o) in group.iter().enumerate() {
                if o.anchor >= num_anchors {
                    return Err(Error::Invalid(format!(
                        "anchor index {} out of range at time index {n}",
                        o.anchor
                    )));
                }
                if !(o.distance >= 0.0) || !o.distance.is_finite() {
                    return Err(Error::Invalid(format!(
                        "distance must be finite and nonnegative at time index {n}"
                    )));
                }
                if group[..k].iter().any(|p| p.anchor == o.anchor) {
                    return Err(Error::DuplicateMeasurement {
                        time_index: n,
                        anchor: o.anchor,
                    });
                }
            }
            obs.extend(group);
            offsets.push(obs.len());
        }
        Ok(Self { times, offsets, obs })
    }

    /// Builds the set from flat `(t, anchor, distance)` rows. Rows are sorted
    /// stably by time; rows within [`TIME_GROUPING_TOL`] of the first row of a
    /// group share its time index.
    pub fn from_rows(mut rows: Vec<(f64, usize, f64)>, num_anchors: usize) -> Result<Self> {
        if rows.iter().any(|r| !r.0.is_finite()) {
            return Err(Error::Invalid("timestamps must be finite".into()));
        }
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut times: Vec<f64> = Vec::new();
        let mut groups: Vec<Vec<Observation>> = Vec::new();
        for (t, anchor, distance) in rows {
            match times.last() {
                Some(&t0) if t - t0 <= TIME_GROUPING_TOL => {}
                _ => {
                    times.push(t);
                    groups.push(Vec::new());
                }
            }
            groups.last_mut().unwrap().push(Observation { anchor, distance });
        }
        Self::new(times, groups, num_anchors)
    }

    /// Number of measurement times `N`.
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Total number of readings `E`.
    pub fn total(&self) -> usize {
        self.obs.len()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn at(&self, n: usize) -> &[Observation] {
        &self.obs[self.offsets[n]..self.offsets[n + 1]]
    }

    fn range(&self, n: usize) -> std::ops::Range<usize> {
        self.offsets[n]..self.offsets[n + 1]
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, &[Observation])> + '_ {
        (0..self.len()).map(move |n| (self.times[n], self.at(n)))
    }

    pub fn heap_bytes(&self) -> usize {
        self.times.capacity() * 8
            + self.offsets.capacity() * std::mem::size_of::<usize>()
            + self.obs.capacity() * std::mem::size_of::<Observation>()
    }
}

/// How the per-reading variance of the squared distance is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum VariancePolicy {
    /// `σ²` for every reading, `σ` being a standard deviation in the squared
    /// domain.
    #[default]
    SquaredConstant,
    /// `4 d̃² σ²`: first-order variance of `d̃²` when `d̃` has standard
    /// deviation `σ`.
    Propagated,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma: f64,
    #[serde(default)]
    pub policy: VariancePolicy,
}

impl NoiseModel {
    pub fn new(sigma: f64, policy: VariancePolicy) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::Invalid(format!("noise sigma must be positive, got {sigma}")));
        }
        Ok(Self { sigma, policy })
    }

    /// Variance of one squared reading, and whether the propagated policy had
    /// to fall back to the constant entry (zero measured distance).
    pub fn variance(&self, distance: f64) -> (f64, bool) {
        let s2 = self.sigma * self.sigma;
        match self.policy {
            VariancePolicy::SquaredConstant => (s2, false),
            VariancePolicy::Propagated if distance > 0.0 => (4.0 * distance * distance * s2, false),
            VariancePolicy::Propagated => (s2, true),
        }
    }
}

/// Diagonal of `Σₙ` plus the fallback flag.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalCovariance {
    pub variances: DVector<f64>,
    pub fallback: bool,
}

/// Ground-truth positions (at arbitrary times).
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub times: Vec<f64>,
    /// One column per time.
    pub positions: DMatrix<f64>,
}

impl GroundTruth {
    pub fn new(times: Vec<f64>, positions: DMatrix<f64>) -> Result<Self> {
        if times.len() != positions.ncols() {
            return Err(Error::Dimension {
                expected: times.len(),
                got: positions.ncols(),
            });
        }
        for (i, w) in times.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(Error::Ordering {
                    index: i + 1,
                    prev: w[0],
                    next: w[1],
                });
            }
        }
        Ok(Self { times, positions })
    }

    pub fn dim(&self) -> usize {
        self.positions.nrows()
    }
}

/// An immutable problem instance.
#[derive(Clone, Debug)]
pub struct ProblemData {
    pub anchors: AnchorSet,
    pub measurements: MeasurementSet,
    pub noise: NoiseModel,
    pub ground_truth: Option<GroundTruth>,
    /// `Σ⁻¹` diagonal, aligned with the flat observation storage.
    inv_var: Vec<f64>,
    fallback_rows: usize,
}

impl ProblemData {
    pub fn new(
        anchors: AnchorSet,
        measurements: MeasurementSet,
        noise: NoiseModel,
        ground_truth: Option<GroundTruth>,
    ) -> Result<Self> {
        if let Some(gt) = &ground_truth {
            if gt.dim() != anchors.dim() {
                return Err(Error::Dimension {
                    expected: anchors.dim(),
                    got: gt.dim(),
                });
            }
        }
        if let Some(o) = measurements.obs.iter().find(|o| o.anchor >= anchors.len()) {
            return Err(Error::Invalid(format!("anchor index {} out of range", o.anchor)));
        }
        let mut fallback_rows = 0;
        let inv_var = measurements
            .obs
            .iter()
            .map(|o| {
                let (v, fb) = noise.variance(o.distance);
                fallback_rows += fb as usize;
                1.0 / v
            })
            .collect();
        Ok(Self {
            anchors,
            measurements,
            noise,
            ground_truth,
            inv_var,
            fallback_rows,
        })
    }

    pub fn dim(&self) -> usize {
        self.anchors.dim()
    }

    /// Number of measurement times `N`.
    pub fn num_times(&self) -> usize {
        self.measurements.len()
    }

    /// Total number of readings `E`.
    pub fn num_measurements(&self) -> usize {
        self.measurements.total()
    }

    pub fn times(&self) -> &[f64] {
        self.measurements.times()
    }

    /// Readings at time index `n`.
    pub fn observations(&self, n: usize) -> &[Observation] {
        self.measurements.at(n)
    }

    /// `Σₙ⁻¹` diagonal at time index `n`.
    pub fn inv_variances(&self, n: usize) -> &[f64] {
        &self.inv_var[self.measurements.range(n)]
    }

    pub fn covariance_for(&self, n: usize) -> DiagonalCovariance {
        let mut fallback = false;
        let variances = DVector::from_iterator(
            self.measurements.at(n).len(),
            self.measurements.at(n).iter().map(|o| {
                let (v, fb) = self.noise.variance(o.distance);
                fallback |= fb;
                v
            }),
        );
        DiagonalCovariance { variances, fallback }
    }

    /// Number of readings that used the propagated-policy fallback.
    pub fn fallback_rows(&self) -> usize {
        self.fallback_rows
    }

    pub fn heap_bytes(&self) -> usize {
        self.measurements.heap_bytes() + self.inv_var.capacity() * 8
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(io_err(path))?;
    Ok(csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn parse_err(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    parse_err(path, line, e.to_string())
}

fn headers(path: &Path, rdr: &mut csv::Reader<File>) -> Result<Vec<String>> {
    Ok(rdr
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(str::to_owned)
        .collect())
}

fn parse_f64(path: &Path, line: u64, field: Option<&str>, name: &str) -> Result<f64> {
    let s = field.ok_or_else(|| parse_err(path, line, format!("missing field `{name}`")))?;
    s.parse::<f64>()
        .map_err(|_| parse_err(path, line, format!("field `{name}`: cannot parse `{s}` as a number")))
}

fn expect_header(path: &Path, got: &[String], want: &[&str]) -> Result<()> {
    if got.len() != want.len() || got.iter().zip(want).any(|(g, w)| g != w) {
        return Err(parse_err(
            path,
            1,
            format!("expected header `{}`, got `{}`", want.join(","), got.join(",")),
        ));
    }
    Ok(())
}

/// Reads `id,x,y[,z]`.
pub fn read_anchors(path: &Path) -> Result<AnchorSet> {
    let mut rdr = csv_reader(path)?;
    let hdr = headers(path, &mut rdr)?;
    let dim = hdr.len().saturating_sub(1);
    let want: &[&str] = if dim == 3 { &["id", "x", "y", "z"] } else { &["id", "x", "y"] };
    expect_header(path, &hdr, want)?;
    let mut ids = Vec::new();
    let mut coords = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != want.len() {
            return Err(parse_err(path, line, format!("expected {} fields, got {}", want.len(), rec.len())));
        }
        ids.push(rec[0].to_owned());
        for (k, name) in want[1..].iter().enumerate() {
            coords.push(parse_f64(path, line, rec.get(k + 1), name)?);
        }
    }
    let m = ids.len();
    AnchorSet::new(ids, DMatrix::from_vec(dim, m, coords))
}

/// Reads `t,anchor_id,distance` and groups by time.
pub fn read_measurements(path: &Path, anchors: &AnchorSet) -> Result<MeasurementSet> {
    let mut rdr = csv_reader(path)?;
    let hdr = headers(path, &mut rdr)?;
    expect_header(path, &hdr, &["t", "anchor_id", "distance"])?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 3 {
            return Err(parse_err(path, line, format!("expected 3 fields, got {}", rec.len())));
        }
        let t = parse_f64(path, line, rec.get(0), "t")?;
        let id = &rec[1];
        let m = anchors.index_of(id).ok_or_else(|| Error::UnknownAnchor {
            path: path.to_path_buf(),
            line,
            id: id.to_owned(),
        })?;
        let d = parse_f64(path, line, rec.get(2), "distance")?;
        if !(d >= 0.0) {
            return Err(parse_err(path, line, "distance must be nonnegative"));
        }
        rows.push((t, m, d));
    }
    MeasurementSet::from_rows(rows, anchors.len())
}

/// Reads `t,x,y[,z]`.
pub fn read_ground_truth(path: &Path) -> Result<GroundTruth> {
    let mut rdr = csv_reader(path)?;
    let hdr = headers(path, &mut rdr)?;
    let dim = hdr.len().saturating_sub(1);
    let want: &[&str] = if dim == 3 { &["t", "x", "y", "z"] } else { &["t", "x", "y"] };
    expect_header(path, &hdr, want)?;
    let mut times = Vec::new();
    let mut xs = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != want.len() {
            return Err(parse_err(path, line, format!("expected {} fields, got {}", want.len(), rec.len())));
        }
        times.push(parse_f64(path, line, rec.get(0), "t")?);
        for (k, name) in want[1..].iter().enumerate() {
            xs.push(parse_f64(path, line, rec.get(k + 1), name)?);
        }
    }
    let n = times.len();
    GroundTruth::new(times, DMatrix::from_vec(dim, n, xs))
}

/// Loads a problem from the anchor and measurement files, plus an optional
/// ground-truth file.
pub fn load_problem(
    anchor_file: &Path,
    measurement_file: &Path,
    ground_truth_file: Option<&Path>,
    noise: NoiseModel,
) -> Result<ProblemData> {
    let anchors = read_anchors(anchor_file)?;
    let measurements = read_measurements(measurement_file, &anchors)?;
    let ground_truth = ground_truth_file.map(read_ground_truth).transpose()?;
    ProblemData::new(anchors, measurements, noise, ground_truth)
}

const AXES: [&str; 3] = ["x", "y", "z"];

pub fn write_anchors<W: Write>(out: W, anchors: &AnchorSet) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut hdr = vec!["id"];
    hdr.extend(&AXES[..anchors.dim()]);
    w.write_record(&hdr)?;
    for m in 0..anchors.len() {
        let mut rec = vec![anchors.ids()[m].clone()];
        rec.extend(anchors.position(m).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()
}

pub fn write_measurements<W: Write>(
    out: W,
    measurements: &MeasurementSet,
    anchors: &AnchorSet,
) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "anchor_id", "distance"])?;
    for (t, obs) in measurements.iter() {
        for o in obs {
            w.write_record([t.to_string(), anchors.ids()[o.anchor].clone(), o.distance.to_string()])?;
        }
    }
    w.flush()
}

pub fn write_ground_truth<W: Write>(out: W, gt: &GroundTruth) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut hdr = vec!["t"];
    hdr.extend(&AXES[..gt.dim()]);
    w.write_record(&hdr)?;
    for (n, t) in gt.times.iter().enumerate() {
        let mut rec = vec![t.to_string()];
        rec.extend(gt.positions.column(n).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()
}
