//! Multi-finger hand assembly: finger placement, actuation coupling and synergy maps.
//!
//! Full actuation vectors are rail-major: link `rail * N + finger`. Rail 0 of every finger is
//! its inner rail (the one facing the hand axis), so the inner links occupy the first `N`
//! entries.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hull::ConvexHull;
use crate::kinematics::{
    check_bound, fk_raw, lattice_axis, solve_rails, ActuationTriple, DeltaGeometry,
    KinematicsError, WorkspaceGrid, WorkspaceSample,
};
use crate::{Aabb, Point3};

pub const MAX_FINGERS: usize = 6;
pub const DEFAULT_CLEARANCE: f64 = 1.0;
const COUPLING_TOL: f64 = 1e-6;

pub type FingertipSet = Vec<Point3>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HandError {
    #[error("invalid hand parameters: {0}")]
    InvalidParams(String),
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("expected {expected} values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("finger {finger}: {source}")]
    Finger {
        finger: usize,
        #[source]
        source: KinematicsError,
    },
    #[error("reduced actuator {actuator} = {value} mm outside [0, {stroke}]")]
    OutOfStroke { actuator: usize, value: f64, stroke: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandParams {
    pub n_fingers: usize,
    /// A_c: radial distance of each finger's inner rail from the hand axis (mm).
    pub coupling_link_length: f64,
    /// A_d: angular spacing between adjacent fingers (rad).
    pub fingertip_angle: f64,
    /// A_h: height of the actuator plane above the hand base frame (mm).
    pub actuation_height: f64,
    pub fingers: Vec<DeltaGeometry>,
    pub fingertip_offset: Vec<Point3>,
}

impl Default for HandParams {
    fn default() -> Self {
        Self::reference()
    }
}

impl HandParams {
    /// Four fingers at 90°, A_c = 20 mm, default Delta geometry, fingertip 15 mm below the EE.
    pub fn reference() -> Self {
        Self::symmetric(4, 20.0, DeltaGeometry::reference())
    }

    /// `n` identical fingers evenly spaced around the hand axis.
    pub fn symmetric(n: usize, coupling_link_length: f64, geom: DeltaGeometry) -> Self {
        Self {
            n_fingers: n,
            coupling_link_length,
            fingertip_angle: 2.0 * PI / n.max(1) as f64,
            actuation_height: 0.0,
            fingers: vec![geom; n],
            fingertip_offset: vec![Point3::new(0.0, 0.0, -15.0); n],
        }
    }

    pub fn validate(&self) -> Result<(), HandError> {
        let n = self.n_fingers;
        if !(1..=MAX_FINGERS).contains(&n) {
            return Err(HandError::InvalidParams(format!("n_fingers must be in 1..={MAX_FINGERS}")));
        }
        if !(self.coupling_link_length > 0.0) || !self.coupling_link_length.is_finite() {
            return Err(HandError::InvalidParams("coupling_link_length must be positive".into()));
        }
        let max_angle = 2.0 * PI / n as f64 * (1.0 + 1e-9);
        if !(self.fingertip_angle > 0.0 && self.fingertip_angle <= max_angle) {
            return Err(HandError::InvalidParams(format!(
                "fingertip_angle must be in (0, 2π/{n}]"
            )));
        }
        if !self.actuation_height.is_finite() {
            return Err(HandError::InvalidParams("actuation_height must be finite".into()));
        }
        if self.fingers.len() != n || self.fingertip_offset.len() != n {
            return Err(HandError::InvalidParams(format!(
                "expected {n} finger geometries and offsets, got {} and {}",
                self.fingers.len(),
                self.fingertip_offset.len()
            )));
        }
        for (k, g) in self.fingers.iter().enumerate() {
            g.validate().map_err(|source| HandError::Finger { finger: k, source })?;
        }
        if self.fingertip_offset.iter().any(|p| !p.is_finite()) {
            return Err(HandError::InvalidParams("fingertip_offset must be finite".into()));
        }
        Ok(())
    }
}

/// Rigid placement of a finger in the hand frame: rotation about z by `yaw`, then translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FingerFrame {
    pub origin: Point3,
    pub yaw: f64,
}

impl FingerFrame {
    pub fn to_hand(&self, local: Point3) -> Point3 {
        self.origin + local.rotated_z(self.yaw)
    }

    pub fn to_local(&self, hand: Point3) -> Point3 {
        (hand - self.origin).rotated_z(-self.yaw)
    }

    /// Direction of rail travel in the hand frame.
    pub fn rail_direction(&self) -> Point3 {
        Point3::new(0.0, 0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameCollision {
    pub finger_a: usize,
    pub finger_b: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FingerFrames {
    pub frames: Vec<FingerFrame>,
    pub warnings: Vec<FrameCollision>,
}

/// Places finger `k` at azimuth `k·A_d`, turned so that its rail 0 faces the hand axis at
/// radius `A_c`; the finger axis sits at `A_c + (D_b - D_e)` and the rail base plane at `A_h`.
/// Rail pairs from different fingers closer than `clearance` are reported as warnings.
pub fn finger_frames(params: &HandParams, clearance: f64) -> Result<FingerFrames, HandError> {
    params.validate()?;
    let frames: Vec<FingerFrame> = params
        .fingers
        .iter()
        .enumerate()
        .map(|(k, g)| {
            let phi = k as f64 * params.fingertip_angle;
            let d = params.coupling_link_length + g.rail_radius();
            let (s, c) = phi.sin_cos();
            FingerFrame { origin: Point3::new(d * c, d * s, params.actuation_height), yaw: phi + PI }
        })
        .collect();

    let rails: Vec<Vec<Point3>> = frames
        .iter()
        .zip(&params.fingers)
        .map(|(f, g)| (0..3).map(|i| f.to_hand(g.carriage(i, 0.0))).collect())
        .collect();
    let mut warnings = Vec::new();
    for a in 0..frames.len() {
        for b in (a + 1)..frames.len() {
            let distance = rails[a]
                .iter()
                .flat_map(|p| rails[b].iter().map(move |q| p.distance(q)))
                .fold(f64::INFINITY, f64::min);
            if distance < clearance {
                warnings.push(FrameCollision { finger_a: a, finger_b: b, distance });
            }
        }
    }
    Ok(FingerFrames { frames, warnings })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Winding {
    /// Actuator `1+k` drives rail 2 of finger `k` and rail 1 of finger `k+1`.
    Ccw,
    /// Actuator `1+k` drives rail 1 of finger `k` and rail 2 of finger `k-1`.
    Cw,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CouplingTopology {
    pub n_reduced: usize,
    pub link_to_actuator: Vec<usize>,
    pub actuator_to_links: Vec<Vec<usize>>,
}

impl CouplingTopology {
    /// Builds the topology and its inverse map from a link → actuator assignment.
    pub fn from_assignment(n_reduced: usize, link_to_actuator: Vec<usize>) -> Self {
        let mut actuator_to_links = vec![Vec::new(); n_reduced];
        for (link, &act) in link_to_actuator.iter().enumerate() {
            if let Some(v) = actuator_to_links.get_mut(act) {
                v.push(link);
            }
        }
        Self { n_reduced, link_to_actuator, actuator_to_links }
    }

    /// Every link on its own actuator (3N actuators).
    pub fn independent(n: usize) -> Self {
        Self::from_assignment(3 * n, (0..3 * n).collect())
    }

    /// Inner links share actuator 0; the 2N boundary links stay independent.
    pub fn center_coupled(n: usize) -> Self {
        let map = (0..3 * n).map(|l| if l < n { 0 } else { l - n + 1 }).collect();
        Self::from_assignment(2 * n + 1, map)
    }

    /// Inner links share actuator 0; each pair of facing boundary rails on adjacent fingers
    /// shares one actuator (N + 1 actuators).
    pub fn center_and_neighbor(n: usize, winding: Winding) -> Self {
        let mut map = vec![0; 3 * n];
        for k in 0..n {
            let prev = (k + n - 1) % n;
            let (r1, r2) = match winding {
                Winding::Ccw => (1 + prev, 1 + k),
                Winding::Cw => (1 + k, 1 + (k + 1) % n),
            };
            map[n + k] = r1;
            map[2 * n + k] = r2;
        }
        Self::from_assignment(n + 1, map)
    }

    /// Named presets for a 4-finger-style hand: "12"/"independent", "9"/"center",
    /// "5"/"center_neighbor" (counts scale with N).
    pub fn preset(name: &str, n: usize) -> Option<Self> {
        match name {
            "independent" | "full" => Some(Self::independent(n)),
            "center" => Some(Self::center_coupled(n)),
            "center_neighbor" => Some(Self::center_and_neighbor(n, Winding::Ccw)),
            "center_neighbor_cw" => Some(Self::center_and_neighbor(n, Winding::Cw)),
            count => match count.parse::<usize>().ok()? {
                m if m == 3 * n => Some(Self::independent(n)),
                m if m == 2 * n + 1 => Some(Self::center_coupled(n)),
                m if m == n + 1 => Some(Self::center_and_neighbor(n, Winding::Ccw)),
                _ => None,
            },
        }
    }

    pub fn n_links(&self) -> usize {
        self.link_to_actuator.len()
    }

    /// Structural checks plus the geometric precondition that coupled rails are parallel and
    /// share a zero plane, so one carriage displacement means the same thing on all of them.
    pub fn validate(&self, params: &HandParams) -> Result<(), HandError> {
        let n = params.n_fingers;
        let bad = |msg: String| Err(HandError::InvalidTopology(msg));
        if self.link_to_actuator.len() != 3 * n {
            return bad(format!(
                "link_to_actuator has {} entries, expected {}",
                self.link_to_actuator.len(),
                3 * n
            ));
        }
        if self.n_reduced == 0 || self.n_reduced > 3 * n {
            return bad(format!("n_reduced must be in 1..={}", 3 * n));
        }
        if let Some((l, &a)) =
            self.link_to_actuator.iter().enumerate().find(|(_, &a)| a >= self.n_reduced)
        {
            return bad(format!("link {l} mapped to actuator {a} >= n_reduced"));
        }
        if self.actuator_to_links.len() != self.n_reduced {
            return bad(format!(
                "actuator_to_links has {} entries, expected {}",
                self.actuator_to_links.len(),
                self.n_reduced
            ));
        }
        let mut seen = vec![false; 3 * n];
        for (a, links) in self.actuator_to_links.iter().enumerate() {
            if links.is_empty() {
                return bad(format!("actuator {a} drives no links"));
            }
            for &l in links {
                if l >= 3 * n {
                    return bad(format!("actuator {a} lists unknown link {l}"));
                }
                if seen[l] {
                    return bad(format!("link {l} mapped more than once"));
                }
                seen[l] = true;
                if self.link_to_actuator[l] != a {
                    return bad(format!(
                        "link {l} listed under actuator {a} but assigned to {}",
                        self.link_to_actuator[l]
                    ));
                }
            }
        }
        if let Some(l) = seen.iter().position(|s| !s) {
            return bad(format!("link {l} is not driven by any actuator"));
        }

        let frames = finger_frames(params, 0.0)?.frames;
        for (a, links) in self.actuator_to_links.iter().enumerate() {
            let first = links[0] % n;
            let dir0 = frames[first].rail_direction();
            let z0 = frames[first].origin.z;
            let stroke0 = params.fingers[first].stroke;
            for &l in &links[1..] {
                let k = l % n;
                if frames[k].rail_direction().max_abs_diff(&dir0) > COUPLING_TOL
                    || (frames[k].origin.z - z0).abs() > COUPLING_TOL
                {
                    return bad(format!("actuator {a} couples non-parallel rails"));
                }
                if (params.fingers[k].stroke - stroke0).abs() > COUPLING_TOL {
                    return bad(format!("actuator {a} couples rails with different strokes"));
                }
            }
        }
        Ok(())
    }
}

/// Expansion `C` (3N × m) and projection `P = (CᵀC)⁻¹Cᵀ` (m × 3N).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynergyMaps {
    #[serde(with = "matrix_rows")]
    pub expansion: DMatrix<f64>,
    #[serde(with = "matrix_rows")]
    pub projection: DMatrix<f64>,
}

pub fn build_synergy(
    params: &HandParams,
    topology: &CouplingTopology,
) -> Result<SynergyMaps, HandError> {
    topology.validate(params)?;
    let n_links = topology.n_links();
    let m = topology.n_reduced;
    let mut c = DMatrix::zeros(n_links, m);
    for (l, &a) in topology.link_to_actuator.iter().enumerate() {
        c[(l, a)] = 1.0;
    }
    let mut p = DMatrix::zeros(m, n_links);
    for (a, links) in topology.actuator_to_links.iter().enumerate() {
        let w = 1.0 / links.len() as f64;
        for &l in links {
            p[(a, l)] = w;
        }
    }
    Ok(SynergyMaps { expansion: c, projection: p })
}

mod matrix_rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> =
            (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(serde::de::Error::custom("ragged matrix"));
        }
        Ok(DMatrix::from_fn(rows.len(), ncols, |r, c| rows[r][c]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandIk {
    pub a_reduced: Vec<f64>,
    pub residual: Vec<f64>,
    pub a_full_requested: Vec<f64>,
}

/// A validated hand: parameters, coupling, synergy maps and finger frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Hand {
    pub params: HandParams,
    pub topology: CouplingTopology,
    pub synergy: SynergyMaps,
    pub frames: FingerFrames,
}

impl Hand {
    pub fn new(params: HandParams, topology: CouplingTopology) -> Result<Self, HandError> {
        let synergy = build_synergy(&params, &topology)?;
        let frames = finger_frames(&params, DEFAULT_CLEARANCE)?;
        Ok(Self { params, topology, synergy, frames })
    }

    pub fn n_fingers(&self) -> usize {
        self.params.n_fingers
    }

    pub fn n_reduced(&self) -> usize {
        self.topology.n_reduced
    }

    /// Stroke of each reduced actuator.
    pub fn reduced_strokes(&self) -> Vec<f64> {
        let n = self.n_fingers();
        self.topology
            .actuator_to_links
            .iter()
            .map(|links| self.params.fingers[links[0] % n].stroke)
            .collect()
    }

    /// All reduced actuators at mid-stroke.
    pub fn home_reduced(&self) -> Vec<f64> {
        self.reduced_strokes().iter().map(|s| s / 2.0).collect()
    }

    /// Reduced actuator indices driving finger `k`'s rails 0, 1, 2.
    pub fn finger_actuators(&self, k: usize) -> [usize; 3] {
        let n = self.n_fingers();
        std::array::from_fn(|rail| self.topology.link_to_actuator[rail * n + k])
    }

    /// Reduced actuators driving at least one inner rail (the open/close coordinate).
    pub fn closing_actuators(&self) -> Vec<usize> {
        let set: BTreeSet<usize> =
            (0..self.n_fingers()).map(|k| self.topology.link_to_actuator[k]).collect();
        set.into_iter().collect()
    }

    pub fn expand(&self, a_reduced: &[f64]) -> Result<Vec<f64>, HandError> {
        self.check_dim(a_reduced.len(), self.n_reduced())?;
        Ok(self.topology.link_to_actuator.iter().map(|&a| a_reduced[a]).collect())
    }

    pub fn project(&self, a_full: &[f64]) -> Result<Vec<f64>, HandError> {
        self.check_dim(a_full.len(), self.topology.n_links())?;
        Ok(self
            .topology
            .actuator_to_links
            .iter()
            .map(|links| links.iter().map(|&l| a_full[l]).sum::<f64>() / links.len() as f64)
            .collect())
    }

    fn check_dim(&self, got: usize, expected: usize) -> Result<(), HandError> {
        if got == expected {
            Ok(())
        } else {
            Err(HandError::DimensionMismatch { expected, got })
        }
    }

    pub fn finger_triple(&self, a_full: &[f64], k: usize) -> ActuationTriple {
        let n = self.n_fingers();
        ActuationTriple::new(a_full[k], a_full[n + k], a_full[2 * n + k])
    }

    /// Bounds-checks (with snapping) a reduced actuation vector.
    pub fn check_reduced(&self, a_reduced: &[f64]) -> Result<Vec<f64>, HandError> {
        self.check_dim(a_reduced.len(), self.n_reduced())?;
        a_reduced
            .iter()
            .zip(self.reduced_strokes())
            .enumerate()
            .map(|(actuator, (&v, stroke))| {
                check_bound(v, stroke).map_err(|value| HandError::OutOfStroke {
                    actuator,
                    value,
                    stroke,
                })
            })
            .collect()
    }

    /// Fingertip of finger `k` in the hand frame for its rail triple (no bounds check).
    pub fn fingertip(&self, k: usize, a: [f64; 3]) -> Result<Point3, KinematicsError> {
        let ee = fk_raw(&self.params.fingers[k], a)?;
        let frame = &self.frames.frames[k];
        Ok(frame.to_hand(ee + self.params.fingertip_offset[k]))
    }

    pub fn fk(&self, a_reduced: &[f64]) -> Result<FingertipSet, HandError> {
        let a = self.check_reduced(a_reduced)?;
        let full = self.expand(&a)?;
        (0..self.n_fingers())
            .map(|k| {
                self.fingertip(k, self.finger_triple(&full, k).to_array())
                    .map_err(|source| HandError::Finger { finger: k, source })
            })
            .collect()
    }

    /// Per-finger IK of fingertip targets, without stroke checks; returns rail-major full
    /// actuation.
    pub fn ik_full(&self, targets: &[Point3]) -> Result<Vec<f64>, HandError> {
        let n = self.n_fingers();
        self.check_dim(targets.len(), n)?;
        let mut full = vec![0.0; 3 * n];
        for (k, t) in targets.iter().enumerate() {
            let local = self.frames.frames[k].to_local(*t) - self.params.fingertip_offset[k];
            let sol = solve_rails(&self.params.fingers[k], local)
                .map_err(|source| HandError::Finger { finger: k, source })?;
            for (rail, v) in sol.actuation.to_array().into_iter().enumerate() {
                full[rail * n + k] = v;
            }
        }
        Ok(full)
    }

    /// Per-finger IK, projection onto the synergy (`P·A`), then FK residuals.
    pub fn ik(&self, targets: &[Point3]) -> Result<HandIk, HandError> {
        let a_full_requested = self.ik_full(targets)?;
        let projected = self.project(&a_full_requested)?;
        let a_reduced = self.check_reduced(&projected)?;
        let reached = self.fk(&a_reduced)?;
        let residual = reached.iter().zip(targets).map(|(p, t)| p.distance(t)).collect();
        Ok(HandIk { a_reduced, residual, a_full_requested })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FingerWorkspace {
    pub finger: usize,
    /// Reduced actuators swept for this finger, in lattice order.
    pub actuators: Vec<usize>,
    /// Lattice samples; positions are fingertips in the hand frame.
    pub grid: WorkspaceGrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Overlap {
    pub finger_a: usize,
    pub finger_b: usize,
    pub voxels: usize,
    pub volume: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandWorkspace {
    pub fingers: Vec<FingerWorkspace>,
    pub bbox: Option<Aabb>,
    pub voxel_size: f64,
    pub overlaps: Vec<Overlap>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkspaceOptions {
    pub grid: usize,
    /// Reduced actuators pinned to a value instead of swept.
    pub fixed: Vec<(usize, f64)>,
    pub voxel_size: f64,
    /// Skip the pairwise overlap computation.
    pub skip_overlap: bool,
}

impl Default for WorkspaceOptions {
    fn default() -> Self {
        Self { grid: 5, fixed: Vec::new(), voxel_size: 1.0, skip_overlap: false }
    }
}

/// Samples each finger over the lattice of the reduced actuators that move it. Fingertip
/// position depends only on those, so the per-finger lattice covers the full reduced lattice.
pub fn hand_workspace(hand: &Hand, opts: &WorkspaceOptions) -> Result<HandWorkspace, HandError> {
    if opts.grid < 2 {
        return Err(HandError::InvalidParams("grid needs at least 2 points per axis".into()));
    }
    if !(opts.voxel_size > 0.0) {
        return Err(HandError::InvalidParams("voxel_size must be positive".into()));
    }
    let strokes = hand.reduced_strokes();
    for &(a, v) in &opts.fixed {
        if a >= hand.n_reduced() {
            return Err(HandError::DimensionMismatch { expected: hand.n_reduced(), got: a + 1 });
        }
        check_bound(v, strokes[a])
            .map_err(|value| HandError::OutOfStroke { actuator: a, value, stroke: strokes[a] })?;
    }

    let fingers: Vec<FingerWorkspace> = (0..hand.n_fingers())
        .map(|k| finger_workspace(hand, k, opts, &strokes))
        .collect();
    let bbox = fingers
        .iter()
        .filter_map(|f| Aabb::from_points(&f.grid.reachable_points().collect::<Vec<_>>()))
        .reduce(|a, b| a.union(&b));

    let mut overlaps = Vec::new();
    if !opts.skip_overlap {
        let shapes: Vec<Option<Occupancy>> = fingers
            .iter()
            .map(|f| Occupancy::new(&f.grid.reachable_points().collect::<Vec<_>>(), opts.voxel_size))
            .collect();
        for a in 0..shapes.len() {
            for b in (a + 1)..shapes.len() {
                let voxels = match (&shapes[a], &shapes[b]) {
                    (Some(sa), Some(sb)) => sa.overlap(sb, opts.voxel_size),
                    _ => 0,
                };
                overlaps.push(Overlap {
                    finger_a: a,
                    finger_b: b,
                    voxels,
                    volume: voxels as f64 * opts.voxel_size.powi(3),
                });
            }
        }
    }
    Ok(HandWorkspace { fingers, bbox, voxel_size: opts.voxel_size, overlaps })
}

fn finger_workspace(hand: &Hand, k: usize, opts: &WorkspaceOptions, strokes: &[f64]) -> FingerWorkspace {
    let rails = hand.finger_actuators(k);
    let mut actuators: Vec<usize> = Vec::new();
    for a in rails {
        if !actuators.contains(&a) && !opts.fixed.iter().any(|&(f, _)| f == a) {
            actuators.push(a);
        }
    }
    let axes: Vec<Vec<f64>> = actuators.iter().map(|&a| lattice_axis(strokes[a], opts.grid)).collect();
    let count: usize = axes.iter().map(Vec::len).product();
    let samples: Vec<WorkspaceSample> = (0..count)
        .into_par_iter()
        .map(|mut idx| {
            let mut values = vec![0.0; actuators.len()];
            for (slot, axis) in axes.iter().enumerate().rev() {
                values[slot] = axis[idx % axis.len()];
                idx /= axis.len();
            }
            let triple: [f64; 3] = std::array::from_fn(|rail| {
                let a = rails[rail];
                match actuators.iter().position(|&x| x == a) {
                    Some(slot) => values[slot],
                    None => opts.fixed.iter().find(|&&(f, _)| f == a).map_or(0.0, |&(_, v)| v),
                }
            });
            WorkspaceSample {
                actuation: ActuationTriple::from_array(triple),
                position: hand.fingertip(k, triple).ok(),
            }
        })
        .collect();
    let reachable_count = samples.iter().filter(|s| s.position.is_some()).count();
    let mut grid_shape = [1; 3];
    for (slot, axis) in axes.iter().enumerate() {
        grid_shape[slot] = axis.len();
    }
    FingerWorkspace {
        finger: k,
        actuators,
        grid: WorkspaceGrid {
            geometry: hand.params.fingers[k],
            grid_shape,
            samples,
            reachable_count,
        },
    }
}

/// Voxel occupancy of a point cloud's convex hull, inflated by half a voxel diagonal so thin
/// (surface-like) workspaces still occupy voxels. Flat clouds fall back to the voxels that
/// contain a sample.
enum Occupancy {
    Hull { hull: ConvexHull<3>, bbox: Aabb },
    Points { voxels: BTreeSet<[i64; 3]>, bbox: Aabb },
}

impl Occupancy {
    fn new(points: &[Point3], voxel: f64) -> Option<Self> {
        let bbox = Aabb::from_points(points)?;
        let arr: Vec<[f64; 3]> = points.iter().map(|p| p.to_array()).collect();
        Some(match ConvexHull::new(&arr) {
            Ok(hull) => Occupancy::Hull { hull, bbox },
            Err(_) => Occupancy::Points {
                voxels: points.iter().map(|p| voxel_index(p, voxel)).collect(),
                bbox,
            },
        })
    }

    fn bbox(&self) -> &Aabb {
        match self {
            Occupancy::Hull { bbox, .. } | Occupancy::Points { bbox, .. } => bbox,
        }
    }

    fn contains_voxel(&self, idx: [i64; 3], voxel: f64) -> bool {
        match self {
            Occupancy::Hull { hull, .. } => {
                let c = idx.map(|i| (i as f64 + 0.5) * voxel);
                hull.max_height(&c) <= 0.5 * voxel * 3f64.sqrt()
            }
            Occupancy::Points { voxels, .. } => voxels.contains(&idx),
        }
    }

    fn overlap(&self, other: &Occupancy, voxel: f64) -> usize {
        let pad = Point3::new(voxel, voxel, voxel);
        let a = Aabb { min: self.bbox().min - pad, max: self.bbox().max + pad };
        let b = Aabb { min: other.bbox().min - pad, max: other.bbox().max + pad };
        let Some(region) = a.intersection(&b) else {
            return 0;
        };
        let lo = voxel_index(&region.min, voxel);
        let hi = voxel_index(&region.max, voxel);
        (lo[0]..=hi[0])
            .into_par_iter()
            .map(|i| {
                let mut count = 0;
                for j in lo[1]..=hi[1] {
                    for k in lo[2]..=hi[2] {
                        let idx = [i, j, k];
                        if self.contains_voxel(idx, voxel) && other.contains_voxel(idx, voxel) {
                            count += 1;
                        }
                    }
                }
                count
            })
            .sum()
    }
}

fn voxel_index(p: &Point3, voxel: f64) -> [i64; 3] {
    p.to_array().map(|v| (v / voxel).floor() as i64)
}
