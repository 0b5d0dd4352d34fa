//! Hardware characterization logs: pose accuracy against the model and force-versus-advance
//! fits.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::kinematics::{forward_kinematics, sample_workspace, workspace_metrics, ActuationTriple, DeltaGeometry, KinematicsError};
use crate::{Aabb, Point3};

pub const POSE_HEADER: [&str; 9] = ["a1", "a2", "a3", "x", "y", "z", "roll", "pitch", "yaw"];
pub const FORCE_HEADER: [&str; 6] = ["direction", "a1", "a2", "a3", "advance", "force"];

/// Hardware translational MAE (mm) measured on the reference build; shown for comparison only.
pub const HARDWARE_MAE_MM: [f64; 3] = [0.73, 0.77, 0.43];

#[derive(Debug, Error)]
pub enum CharacterizeError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("unexpected header {found:?}, expected {expected:?}")]
    Header { found: Vec<String>, expected: Vec<String> },
    #[error("row {row}: {msg}")]
    InvalidRow { row: usize, msg: String },
    #[error("log has no rows")]
    Empty,
    #[error("no row is reachable by the model")]
    NoUsableRows,
    #[error("insufficient data for {direction} ({tag}): need two distinct advances")]
    InsufficientData { direction: Direction, tag: String },
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRow {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl PoseRow {
    pub fn actuation(&self) -> ActuationTriple {
        ActuationTriple::new(self.a1, self.a2, self.a3)
    }

    pub fn position(&self) -> Point3 {
        Point3::new(self.x, self.y, self.z)
    }

    fn values(&self) -> [f64; 9] {
        [self.a1, self.a2, self.a3, self.x, self.y, self.z, self.roll, self.pitch, self.yaw]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "+X")]
    PosX,
    #[serde(rename = "-X", alias = "−X")]
    NegX,
    #[serde(rename = "+Y")]
    PosY,
    #[serde(rename = "-Y", alias = "−Y")]
    NegY,
    #[serde(rename = "-Z", alias = "−Z")]
    NegZ,
}

impl Direction {
    pub const ALL: [Direction; 5] = [Direction::PosX, Direction::NegX, Direction::PosY, Direction::NegY, Direction::NegZ];

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::PosX => "+X",
            Direction::NegX => "-X",
            Direction::PosY => "+Y",
            Direction::NegY => "-Y",
            Direction::NegZ => "-Z",
        }
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForceRow {
    pub direction: Direction,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub advance: f64,
    pub force: f64,
}

fn check_header<R: Read>(rdr: &mut csv::Reader<R>, expected: &[&str]) -> Result<(), CharacterizeError> {
    let found: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if found != expected {
        return Err(CharacterizeError::Header { found, expected: expected.iter().map(|s| s.to_string()).collect() });
    }
    Ok(())
}

pub fn read_pose_log<R: Read>(input: R) -> Result<Vec<PoseRow>, CharacterizeError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    check_header(&mut rdr, &POSE_HEADER)?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.deserialize::<PoseRow>().enumerate() {
        let row = rec?;
        if row.values().iter().any(|v| !v.is_finite()) {
            return Err(CharacterizeError::InvalidRow { row: i + 1, msg: "non-finite value".into() });
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Shortest round-trip float formatting keeps re-ingested statistics bit-identical.
pub fn write_pose_log<W: Write>(rows: &[PoseRow], out: W) -> Result<(), CharacterizeError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Reads a force log; forces are rectified to their magnitude.
pub fn read_force_log<R: Read>(input: R) -> Result<Vec<ForceRow>, CharacterizeError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    check_header(&mut rdr, &FORCE_HEADER)?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.deserialize::<ForceRow>().enumerate() {
        let mut row = rec?;
        if ![row.a1, row.a2, row.a3, row.advance, row.force].iter().all(|v| v.is_finite()) {
            return Err(CharacterizeError::InvalidRow { row: i + 1, msg: "non-finite value".into() });
        }
        row.force = row.force.abs();
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_force_log<W: Write>(rows: &[ForceRow], out: W) -> Result<(), CharacterizeError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Signed observed-minus-model error for one row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointError {
    pub row: usize,
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    pub droll: f64,
    pub dpitch: f64,
    pub dyaw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedRow {
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaeReport {
    pub mae_xyz: [f64; 3],
    pub mae_rpy: [f64; 3],
    pub n_rows: usize,
    pub n_used: usize,
    pub excluded: Vec<ExcludedRow>,
    pub hardware_reference_mae_mm: [f64; 3],
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub errors: Vec<PointError>,
}

impl MaeReport {
    pub fn write_errors_csv<W: Write>(&self, out: W) -> Result<(), CharacterizeError> {
        let mut w = csv::Writer::from_writer(out);
        for e in &self.errors {
            w.serialize(e)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Wraps an angle in degrees to (-180, 180].
fn wrap_deg(a: f64) -> f64 {
    let w = a.rem_euclid(360.0);
    if w > 180.0 { w - 360.0 } else { w }
}

/// Mean absolute error per axis between observed poses and the model. The model orientation is
/// the identity, so orientation error is the observed XYZ intrinsic angle itself, wrapped.
/// Rows the model cannot reach (or outside the stroke) are excluded and listed.
pub fn kinematics_mae(rows: &[PoseRow], geom: &DeltaGeometry) -> Result<MaeReport, CharacterizeError> {
    geom.validate()?;
    if rows.is_empty() {
        return Err(CharacterizeError::Empty);
    }
    let mut errors = Vec::with_capacity(rows.len());
    let mut excluded = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        match forward_kinematics(geom, r.actuation()) {
            Ok(m) => errors.push(PointError {
                row: i,
                dx: r.x - m.x,
                dy: r.y - m.y,
                dz: r.z - m.z,
                droll: wrap_deg(r.roll),
                dpitch: wrap_deg(r.pitch),
                dyaw: wrap_deg(r.yaw),
            }),
            Err(e) => excluded.push(ExcludedRow { row: i, reason: e.to_string() }),
        }
    }
    if errors.is_empty() {
        return Err(CharacterizeError::NoUsableRows);
    }
    let n = errors.len() as f64;
    let mean_abs = |f: fn(&PointError) -> f64| errors.iter().map(|e| f(e).abs()).sum::<f64>() / n;
    Ok(MaeReport {
        mae_xyz: [mean_abs(|e| e.dx), mean_abs(|e| e.dy), mean_abs(|e| e.dz)],
        mae_rpy: [mean_abs(|e| e.droll), mean_abs(|e| e.dpitch), mean_abs(|e| e.dyaw)],
        n_rows: rows.len(),
        n_used: errors.len(),
        excluded,
        hardware_reference_mae_mm: HARDWARE_MAE_MM,
        errors,
    })
}

/// Ordinary least squares line with a heteroscedasticity-consistent (HC3) 95% slope interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub n: usize,
    /// `None` with fewer than three points.
    pub slope_ci95: Option<[f64; 2]>,
}

/// Fits `y = slope * x + intercept`. `None` unless x takes at least two distinct values.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let n = x.len().min(y.len());
    if n < 2 {
        return None;
    }
    // sort by x first so the result does not depend on row order
    let mut pts: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let nf = n as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx <= 0.0 || pts.first()?.0 == pts.last()?.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let resid: Vec<f64> = pts.iter().map(|p| p.1 - (slope * p.0 + intercept)).collect();
    let ss_res: f64 = resid.iter().map(|r| r * r).sum();
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    let slope_ci95 = (n > 2).then(|| {
        let var: f64 = pts
            .iter()
            .zip(&resid)
            .map(|(p, e)| {
                let d = p.0 - mx;
                let h = 1.0 / nf + d * d / sxx;
                let w = d / sxx;
                w * w * e * e / (1.0 - h).max(1e-12).powi(2)
            })
            .sum();
        let t = StudentsT::new(0.0, 1.0, (n - 2) as f64).map(|d| d.inverse_cdf(0.975)).unwrap_or(f64::NAN);
        let half = t * var.sqrt();
        [slope - half, slope + half]
    });
    Some(LinearFit { slope, intercept, r2, n, slope_ci95 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionFit {
    pub tag: String,
    pub direction: Direction,
    #[serde(flatten)]
    pub fit: LinearFit,
}

/// Force-versus-advance fit for every direction present in each tagged log.
pub fn force_fit(groups: &[(String, Vec<ForceRow>)]) -> Result<Vec<DirectionFit>, CharacterizeError> {
    let mut out = Vec::new();
    for (tag, rows) in groups {
        let mut by_dir: BTreeMap<Direction, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for r in rows {
            let e = by_dir.entry(r.direction).or_default();
            e.0.push(r.advance);
            e.1.push(r.force);
        }
        if by_dir.is_empty() {
            return Err(CharacterizeError::Empty);
        }
        for (direction, (x, y)) in by_dir {
            let fit = linear_fit(&x, &y)
                .ok_or_else(|| CharacterizeError::InsufficientData { direction, tag: tag.clone() })?;
            out.push(DirectionFit { tag: tag.clone(), direction, fit });
        }
    }
    Ok(out)
}

/// Fit for one direction of one log.
pub fn fit_direction(rows: &[ForceRow], direction: Direction) -> Result<LinearFit, CharacterizeError> {
    let (x, y): (Vec<f64>, Vec<f64>) = rows.iter().filter(|r| r.direction == direction).map(|r| (r.advance, r.force)).unzip();
    linear_fit(&x, &y).ok_or(CharacterizeError::InsufficientData { direction, tag: String::new() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub base_radius: f64,
    pub link_length: f64,
    pub ee_radius: f64,
    pub stroke: f64,
    pub hull_volume: f64,
    pub reachable: usize,
    pub bbox: Option<Aabb>,
    pub extents: Point3,
}

/// Base radius 15/20/25 mm by link length 35/45/55 mm, base radius outermost.
pub fn reference_sweep() -> Vec<DeltaGeometry> {
    let base = DeltaGeometry::reference();
    [15.0, 20.0, 25.0]
        .iter()
        .flat_map(|&db| [35.0, 45.0, 55.0].map(|dl| DeltaGeometry::new(db, base.ee_radius, dl, base.stroke)))
        .collect()
}

pub fn sweep_report(geoms: &[DeltaGeometry], grid: usize) -> Result<Vec<SweepRow>, CharacterizeError> {
    geoms
        .iter()
        .map(|g| {
            let ws = sample_workspace(g, [grid; 3])?;
            let m = workspace_metrics(&ws);
            Ok(SweepRow {
                base_radius: g.base_radius,
                link_length: g.link_length,
                ee_radius: g.ee_radius,
                stroke: g.stroke,
                hull_volume: m.hull_volume,
                reachable: ws.reachable_count,
                bbox: m.bbox,
                extents: m.extents,
            })
        })
        .collect()
}

/// Markdown-style table of a sweep.
pub fn render_sweep(rows: &[SweepRow]) -> String {
    let mut s = String::from("| D_b (mm) | D_l (mm) | hull volume (mm^3) | extent x | extent y | extent z |\n|---|---|---|---|---|---|\n");
    for r in rows {
        s.push_str(&format!(
            "| {} | {} | {:.1} | {:.2} | {:.2} | {:.2} |\n",
            r.base_radius, r.link_length, r.hull_volume, r.extents.x, r.extents.y, r.extents.z
        ));
    }
    s
}
