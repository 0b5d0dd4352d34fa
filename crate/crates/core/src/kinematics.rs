//! Closed-form kinematics of a single linear Delta finger.
//!
//! Finger frame: z along the rails, origin at the centre of the rail base plane. Carriage `i`
//! sits at `(R cos θ_i, R sin θ_i, a_i)` with `R = D_b - D_e`, and the end-effector hangs
//! below the carriages on three links of length `D_l`.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::Matrix3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hull::ConvexHull;
use crate::{format_sig6, Aabb, Point3};

/// Slack allowed on stroke bounds before a value counts as out of range; values inside the
/// slack are snapped onto the bound.
pub const BOUND_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("actuation a{axis} = {value} mm outside [0, {stroke}]")]
    OutOfStroke { axis: usize, value: f64, stroke: f64 },
    #[error("link spheres do not intersect for this actuation")]
    NoIntersection,
    #[error("solution places the end-effector at or above a carriage")]
    BranchViolation,
    #[error("target unreachable by rail {rail}")]
    Unreachable { rail: usize },
    #[error("non-finite input")]
    NonFinite,
    #[error("grid needs at least 2 points per axis, got {0:?}")]
    InvalidGrid([usize; 3]),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaGeometry {
    pub base_radius: f64,
    pub ee_radius: f64,
    pub link_length: f64,
    pub stroke: f64,
    #[serde(default = "default_rail_angles")]
    pub rail_angles: [f64; 3],
}

fn default_rail_angles() -> [f64; 3] {
    [0.0, 2.0 * PI / 3.0, 4.0 * PI / 3.0]
}

impl Default for DeltaGeometry {
    fn default() -> Self {
        Self::reference()
    }
}

impl DeltaGeometry {
    pub fn new(base_radius: f64, ee_radius: f64, link_length: f64, stroke: f64) -> Self {
        Self { base_radius, ee_radius, link_length, stroke, rail_angles: default_rail_angles() }
    }

    /// D_b = 20, D_e = 6, D_l = 45, 20 mm stroke.
    pub fn reference() -> Self {
        Self::new(20.0, 6.0, 45.0, 20.0)
    }

    /// Effective carriage radius `R = D_b - D_e`.
    pub fn rail_radius(&self) -> f64 {
        self.base_radius - self.ee_radius
    }

    pub fn validate(&self) -> Result<(), KinematicsError> {
        let vals = [self.base_radius, self.ee_radius, self.link_length, self.stroke];
        if vals.iter().chain(&self.rail_angles).any(|v| !v.is_finite()) {
            return Err(KinematicsError::NonFinite);
        }
        if self.ee_radius <= 0.0 {
            return Err(KinematicsError::InvalidGeometry("ee_radius must be positive".into()));
        }
        if self.base_radius <= self.ee_radius {
            return Err(KinematicsError::InvalidGeometry(
                "base_radius must exceed ee_radius".into(),
            ));
        }
        if self.link_length <= self.rail_radius() {
            return Err(KinematicsError::InvalidGeometry(
                "link_length must exceed base_radius - ee_radius".into(),
            ));
        }
        if self.stroke <= 0.0 {
            return Err(KinematicsError::InvalidGeometry("stroke must be positive".into()));
        }
        Ok(())
    }

    /// Horizontal position of rail `i` (carriage projected onto the base plane).
    pub fn rail_xy(&self, i: usize) -> (f64, f64) {
        let r = self.rail_radius();
        let (s, c) = self.rail_angles[i].sin_cos();
        (r * c, r * s)
    }

    pub fn carriage(&self, i: usize, a: f64) -> Point3 {
        let (x, y) = self.rail_xy(i);
        Point3::new(x, y, a)
    }

    /// Rail position in the finger frame including the end-effector radius, i.e. the physical
    /// rail axis at distance `D_b` from the finger axis.
    pub fn rail_axis_xy(&self, i: usize) -> (f64, f64) {
        let (s, c) = self.rail_angles[i].sin_cos();
        (self.base_radius * c, self.base_radius * s)
    }

    /// End-effector height for equal actuation of all three rails.
    pub fn common_mode_z(&self, a: f64) -> f64 {
        let r = self.rail_radius();
        a - (self.link_length * self.link_length - r * r).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuationTriple {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
}

impl ActuationTriple {
    pub const fn new(a1: f64, a2: f64, a3: f64) -> Self {
        Self { a1, a2, a3 }
    }

    pub const fn splat(a: f64) -> Self {
        Self::new(a, a, a)
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.a1, self.a2, self.a3]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    /// Checks stroke bounds, snapping values within `BOUND_EPS` of a bound onto it.
    pub fn checked(self, stroke: f64) -> Result<Self, KinematicsError> {
        let mut out = self.to_array();
        for (axis, v) in out.iter_mut().enumerate() {
            *v = check_bound(*v, stroke).map_err(|value| KinematicsError::OutOfStroke {
                axis: axis + 1,
                value,
                stroke,
            })?;
        }
        Ok(Self::from_array(out))
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.to_array()
            .iter()
            .zip(other.to_array())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub(crate) fn check_bound(v: f64, stroke: f64) -> Result<f64, f64> {
    if !v.is_finite() || v < -BOUND_EPS || v > stroke + BOUND_EPS {
        Err(v)
    } else {
        Ok(v.clamp(0.0, stroke))
    }
}

/// Trilateration without stroke checks. Returns the lower of the two sphere intersections.
pub(crate) fn fk_raw(geom: &DeltaGeometry, a: [f64; 3]) -> Result<Point3, KinematicsError> {
    let p1 = geom.carriage(0, a[0]);
    let p2 = geom.carriage(1, a[1]);
    let p3 = geom.carriage(2, a[2]);
    let l2 = geom.link_length * geom.link_length;

    let d12 = p2 - p1;
    let d = d12.norm();
    let ex = d12 * (1.0 / d);
    let d13 = p3 - p1;
    let i = ex.dot(&d13);
    let ey = (d13 - ex * i).normalized().ok_or(KinematicsError::NoIntersection)?;
    let j = ey.dot(&d13);
    let ez = ex.cross(&ey);

    // equal radii: x = d/2, y = (i² + j² - 2ix) / 2j
    let x = d / 2.0;
    let y = (i * i + j * j - 2.0 * i * x) / (2.0 * j);
    let h2 = l2 - x * x - y * y;
    if !(h2 >= 0.0) {
        return Err(KinematicsError::NoIntersection);
    }
    let h = h2.sqrt();
    let base = p1 + ex * x + ey * y;
    let up = base + ez * h;
    let down = base - ez * h;
    let p = if down.z <= up.z { down } else { up };
    if p.z >= a[0].min(a[1]).min(a[2]) {
        return Err(KinematicsError::BranchViolation);
    }
    Ok(p)
}

pub fn forward_kinematics(
    geom: &DeltaGeometry,
    a: ActuationTriple,
) -> Result<Point3, KinematicsError> {
    let a = a.checked(geom.stroke)?;
    fk_raw(geom, a.to_array())
}

/// Per-rail inverse solution before stroke checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RailSolution {
    pub actuation: ActuationTriple,
    pub in_bounds: [bool; 3],
}

impl RailSolution {
    pub fn all_in_bounds(&self) -> bool {
        self.in_bounds.iter().all(|&b| b)
    }
}

/// Solves each rail's carriage height for `p`, reporting which rails are within stroke.
pub fn solve_rails(geom: &DeltaGeometry, p: Point3) -> Result<RailSolution, KinematicsError> {
    if !p.is_finite() {
        return Err(KinematicsError::NonFinite);
    }
    let l2 = geom.link_length * geom.link_length;
    let mut a = [0.0; 3];
    let mut in_bounds = [false; 3];
    for rail in 0..3 {
        let (cx, cy) = geom.rail_xy(rail);
        let (dx, dy) = (p.x - cx, p.y - cy);
        let disc = l2 - dx * dx - dy * dy;
        if disc < 0.0 {
            return Err(KinematicsError::Unreachable { rail: rail + 1 });
        }
        let v = p.z + disc.sqrt();
        match check_bound(v, geom.stroke) {
            Ok(snapped) => {
                a[rail] = snapped;
                in_bounds[rail] = true;
            }
            Err(raw) => a[rail] = raw,
        }
    }
    Ok(RailSolution { actuation: ActuationTriple::from_array(a), in_bounds })
}

pub fn inverse_kinematics(
    geom: &DeltaGeometry,
    p: Point3,
) -> Result<ActuationTriple, KinematicsError> {
    let sol = solve_rails(geom, p)?;
    if let Some(axis) = sol.in_bounds.iter().position(|&b| !b) {
        return Err(KinematicsError::OutOfStroke {
            axis: axis + 1,
            value: sol.actuation.to_array()[axis],
            stroke: geom.stroke,
        });
    }
    Ok(sol.actuation)
}

/// Central-difference Jacobian `∂E/∂a`; `a` must be at least `h` inside the stroke bounds.
pub fn numeric_jacobian(
    geom: &DeltaGeometry,
    a: ActuationTriple,
    h: f64,
) -> Result<Matrix3<f64>, KinematicsError> {
    let a = a.checked(geom.stroke)?.to_array();
    for (axis, &v) in a.iter().enumerate() {
        if v - h < 0.0 || v + h > geom.stroke {
            return Err(KinematicsError::OutOfStroke { axis: axis + 1, value: v, stroke: geom.stroke });
        }
    }
    let mut j = Matrix3::zeros();
    for col in 0..3 {
        let mut plus = a;
        let mut minus = a;
        plus[col] += h;
        minus[col] -= h;
        let d = (fk_raw(geom, plus)? - fk_raw(geom, minus)?) * (0.5 / h);
        j[(0, col)] = d.x;
        j[(1, col)] = d.y;
        j[(2, col)] = d.z;
    }
    Ok(j)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceSample {
    pub actuation: ActuationTriple,
    pub position: Option<Point3>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceGrid {
    pub geometry: DeltaGeometry,
    pub grid_shape: [usize; 3],
    pub samples: Vec<WorkspaceSample>,
    pub reachable_count: usize,
}

/// `n` evenly spaced values over `[0, stroke]`, endpoints exact.
pub fn lattice_axis(stroke: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| if i + 1 == n { stroke } else { stroke * i as f64 / (n - 1) as f64 })
        .collect()
}

/// Evaluates FK over the regular actuation lattice (first axis outermost).
pub fn sample_workspace(
    geom: &DeltaGeometry,
    grid_shape: [usize; 3],
) -> Result<WorkspaceGrid, KinematicsError> {
    geom.validate()?;
    if grid_shape.iter().any(|&n| n < 2) {
        return Err(KinematicsError::InvalidGrid(grid_shape));
    }
    let axes: Vec<Vec<f64>> = grid_shape.iter().map(|&n| lattice_axis(geom.stroke, n)).collect();
    let [n1, n2, n3] = grid_shape;
    let samples: Vec<WorkspaceSample> = (0..n1 * n2 * n3)
        .into_par_iter()
        .map(|idx| {
            let a = ActuationTriple::new(axes[0][idx / (n2 * n3)], axes[1][(idx / n3) % n2], axes[2][idx % n3]);
            WorkspaceSample { actuation: a, position: fk_raw(geom, a.to_array()).ok() }
        })
        .collect();
    let reachable_count = samples.iter().filter(|s| s.position.is_some()).count();
    Ok(WorkspaceGrid { geometry: *geom, grid_shape, samples, reachable_count })
}

impl WorkspaceGrid {
    pub fn reachable_points(&self) -> impl Iterator<Item = Point3> + '_ {
        self.samples.iter().filter_map(|s| s.position)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["a1", "a2", "a3", "x", "y", "z", "reachable"])?;
        for s in &self.samples {
            let a = s.actuation.to_array().map(format_sig6);
            let (xyz, flag) = match s.position {
                Some(p) => (p.to_array().map(format_sig6), "1"),
                None => (Default::default(), "0"),
            };
            let [a1, a2, a3] = a;
            let [x, y, z]: [String; 3] = xyz;
            w.write_record([&a1, &a2, &a3, &x, &y, &z, flag])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceMetrics {
    pub bbox: Option<Aabb>,
    pub extents: Point3,
    pub hull_volume: f64,
}

/// Convex-hull volume of a point set; zero when the set is too small or flat.
pub fn hull_volume(points: &[Point3]) -> f64 {
    let arr: Vec<[f64; 3]> = points.iter().map(|p| p.to_array()).collect();
    ConvexHull::new(&arr).map(|h| h.volume()).unwrap_or(0.0)
}

pub fn workspace_metrics(grid: &WorkspaceGrid) -> WorkspaceMetrics {
    let pts: Vec<Point3> = grid.reachable_points().collect();
    let bbox = Aabb::from_points(&pts);
    WorkspaceMetrics {
        bbox,
        extents: bbox.map(|b| b.extents()).unwrap_or_default(),
        hull_volume: hull_volume(&pts),
    }
}
