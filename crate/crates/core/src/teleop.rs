//! Operator hand-tracking to arm and fingertip commands.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hand::{Hand, HandError};
use crate::kinematics::{fk_raw, lattice_axis, solve_rails, DeltaGeometry};
use crate::{Aabb, Point3};

pub const DEFAULT_MAX_SPEED: f64 = 100.0;
pub const CLOUD_RESOLUTION: f64 = 1.0;

#[derive(Debug, Error)]
pub enum TeleopError {
    #[error("malformed stream at sample {index}: {msg}")]
    MalformedStream { index: usize, msg: String },
    #[error("invalid calibration: {0}")]
    InvalidCalibration(String),
    #[error("invalid principal axes: {0}")]
    InvalidAxes(String),
    #[error(transparent)]
    Hand(#[from] HandError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseSample {
    pub t: f64,
    pub wrist: Point3,
    pub left_thumb: Point3,
    pub left_index: Point3,
    pub right_thumb: Point3,
    pub right_index: Point3,
}

impl PoseSample {
    pub fn digit(&self, d: Digit) -> Point3 {
        match d {
            Digit::LeftThumb => self.left_thumb,
            Digit::LeftIndex => self.left_index,
            Digit::RightThumb => self.right_thumb,
            Digit::RightIndex => self.right_index,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite()
            && [self.wrist, self.left_thumb, self.left_index, self.right_thumb, self.right_index]
                .iter()
                .all(Point3::is_finite)
    }

    /// Operator hands at rest: thumbs and indices spread around the wrist.
    pub fn neutral() -> Self {
        Self {
            t: 0.0,
            wrist: Point3::ORIGIN,
            left_thumb: Point3::new(-60.0, -20.0, 0.0),
            left_index: Point3::new(-60.0, 20.0, 0.0),
            right_thumb: Point3::new(60.0, -20.0, 0.0),
            right_index: Point3::new(60.0, 20.0, 0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Digit {
    LeftThumb,
    LeftIndex,
    RightThumb,
    RightIndex,
}

impl Digit {
    pub const ALL: [Digit; 4] = [Digit::LeftThumb, Digit::LeftIndex, Digit::RightThumb, Digit::RightIndex];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Calibration {
    /// Operator-to-hand scale for digit displacements.
    pub scale: f64,
    /// Wrist-to-arm scale.
    pub arm_scale: f64,
    pub neutral: PoseSample,
    /// Operator digit driving each robot finger; empty means digit `k mod 4`.
    pub assignment: Vec<Digit>,
    /// Left thumb-index aperture range (mm) mapped onto the radius range.
    pub aperture_range: [f64; 2],
    /// Polar radius range (mm); `None` derives it from the workspace.
    pub radius_range: Option<[f64; 2]>,
    /// Twist angle per radian of right-index azimuth change.
    pub twist_gain: f64,
}

impl Default for Calibration {
    fn default() -> Self {
        Self {
            scale: 1.0,
            arm_scale: 1.0,
            neutral: PoseSample::neutral(),
            assignment: Vec::new(),
            aperture_range: [10.0, 80.0],
            radius_range: None,
            twist_gain: 1.0,
        }
    }
}

impl Calibration {
    pub fn validate(&self) -> Result<(), TeleopError> {
        let bad = |m: &str| Err(TeleopError::InvalidCalibration(m.into()));
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return bad("scale must be positive");
        }
        if !self.arm_scale.is_finite() || !self.twist_gain.is_finite() {
            return bad("arm_scale and twist_gain must be finite");
        }
        if !self.neutral.is_finite() {
            return bad("neutral pose must be finite");
        }
        let [a0, a1] = self.aperture_range;
        if !(a1 > a0) || !a0.is_finite() || !a1.is_finite() {
            return bad("aperture_range must be increasing");
        }
        if let Some([r0, r1]) = self.radius_range {
            if !(r1 >= r0 && r0 >= 0.0 && r1.is_finite()) {
                return bad("radius_range must be non-negative and ordered");
            }
        }
        Ok(())
    }

    fn digit_for(&self, finger: usize) -> Digit {
        self.assignment.get(finger).copied().unwrap_or(Digit::ALL[finger % 4])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrincipalStrategy {
    /// Keep only the dominant axis component (ties go to the first axis).
    #[default]
    Snap,
    /// Orthogonal projection onto the plane of both axes.
    Project,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Mapping {
    Direct,
    Principal {
        #[serde(default = "default_axes")]
        axes: [Point3; 2],
        #[serde(default)]
        strategy: PrincipalStrategy,
    },
    Polar,
}

fn default_axes() -> [Point3; 2] {
    [Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 1.0, 0.0)]
}

impl Mapping {
    pub fn principal_xy() -> Self {
        Mapping::Principal { axes: default_axes(), strategy: PrincipalStrategy::Snap }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "direct" => Some(Mapping::Direct),
            "principal" => Some(Mapping::principal_xy()),
            "polar" => Some(Mapping::Polar),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeleopCommand {
    pub t: f64,
    pub arm_delta: Point3,
    /// Targets after clamping into each finger's workspace.
    pub fingertip_targets: Vec<Point3>,
    /// Targets before clamping.
    pub requested_targets: Vec<Point3>,
    pub reduced_actuation: Vec<f64>,
    pub fingertips: Vec<Point3>,
    /// Distance from each requested target to the fingertip actually reached (mm).
    pub residual: Vec<f64>,
}

/// Snaps or projects a displacement onto two orthonormal axes.
pub fn principal_displacement(d: Point3, axes: &[Point3; 2], strategy: PrincipalStrategy) -> Point3 {
    let c0 = d.dot(&axes[0]);
    let c1 = d.dot(&axes[1]);
    match strategy {
        PrincipalStrategy::Snap => {
            if c0.abs() >= c1.abs() {
                axes[0] * c0
            } else {
                axes[1] * c1
            }
        }
        PrincipalStrategy::Project => axes[0] * c0 + axes[1] * c1,
    }
}

fn check_axes(axes: &[Point3; 2]) -> Result<(), TeleopError> {
    let ok = (axes[0].norm() - 1.0).abs() < 1e-9 && (axes[1].norm() - 1.0).abs() < 1e-9 && axes[0].dot(&axes[1]).abs() < 1e-9;
    if ok {
        Ok(())
    } else {
        Err(TeleopError::InvalidAxes("axes must be orthonormal".into()))
    }
}

/// Reachable fingertip positions of one finger on a regular grid, in the finger frame.
#[derive(Debug, Clone)]
pub struct WorkspaceCloud {
    geometry: DeltaGeometry,
    offset: Point3,
    pub resolution: f64,
    /// Reachable cells that touch an unreachable neighbour.
    pub boundary: Vec<Point3>,
    pub count: usize,
    pub max_radius: f64,
}

impl WorkspaceCloud {
    pub fn new(geometry: &DeltaGeometry, offset: Point3, resolution: f64) -> Self {
        let axis = lattice_axis(geometry.stroke, 9);
        let mut bb: Option<Aabb> = None;
        for &a1 in &axis {
            for &a2 in &axis {
                for &a3 in &axis {
                    if let Ok(p) = fk_raw(geometry, [a1, a2, a3]) {
                        let p = p + offset;
                        match bb.as_mut() {
                            Some(b) => b.include(&p),
                            None => bb = Some(Aabb { min: p, max: p }),
                        }
                    }
                }
            }
        }
        let Some(bb) = bb else {
            return Self { geometry: *geometry, offset, resolution, boundary: Vec::new(), count: 0, max_radius: 0.0 };
        };
        let lo = bb.min - Point3::new(2.0, 2.0, 2.0) * resolution;
        let ext = bb.extents() + Point3::new(4.0, 4.0, 4.0) * resolution;
        let dims = ext.to_array().map(|e| (e / resolution).ceil() as usize + 1);
        let centre = |i: usize, j: usize, k: usize| lo + Point3::new(i as f64, j as f64, k as f64) * resolution;
        let reachable_at = |p: Point3| solve_rails(geometry, p - offset).is_ok_and(|s| s.all_in_bounds());
        let mut mask = vec![false; dims[0] * dims[1] * dims[2]];
        let idx = |i: usize, j: usize, k: usize| (i * dims[1] + j) * dims[2] + k;
        let mut count = 0;
        let mut max_radius: f64 = 0.0;
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                for k in 0..dims[2] {
                    let p = centre(i, j, k);
                    if reachable_at(p) {
                        mask[idx(i, j, k)] = true;
                        count += 1;
                        max_radius = max_radius.max(p.radius_xy());
                    }
                }
            }
        }
        let mut boundary = Vec::new();
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                for k in 0..dims[2] {
                    if !mask[idx(i, j, k)] {
                        continue;
                    }
                    let open = [(1i64, 0i64, 0i64), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
                        .iter()
                        .any(|&(di, dj, dk)| {
                            let (ni, nj, nk) = (i as i64 + di, j as i64 + dj, k as i64 + dk);
                            ni < 0
                                || nj < 0
                                || nk < 0
                                || ni as usize >= dims[0]
                                || nj as usize >= dims[1]
                                || nk as usize >= dims[2]
                                || !mask[idx(ni as usize, nj as usize, nk as usize)]
                        });
                    if open {
                        boundary.push(centre(i, j, k));
                    }
                }
            }
        }
        Self { geometry: *geometry, offset, resolution, boundary, count, max_radius }
    }

    pub fn contains(&self, p: Point3) -> bool {
        solve_rails(&self.geometry, p - self.offset).is_ok_and(|s| s.all_in_bounds())
    }

    /// The point itself when reachable, otherwise the nearest boundary sample.
    pub fn clamp(&self, p: Point3) -> Point3 {
        if self.contains(p) {
            return p;
        }
        self.boundary
            .iter()
            .copied()
            .min_by(|a, b| a.distance(&p).total_cmp(&b.distance(&p)))
            .unwrap_or(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateLimit {
    /// Maximum fingertip target speed (mm/s).
    pub max_speed: f64,
}

impl Default for RateLimit {
    fn default() -> Self {
        Self { max_speed: DEFAULT_MAX_SPEED }
    }
}

/// Mapping pipeline bound to one hand and calibration.
#[derive(Debug, Clone)]
pub struct Teleop {
    pub hand: Hand,
    pub calibration: Calibration,
    clouds: Vec<WorkspaceCloud>,
    pub home: Vec<Point3>,
    pub z_home: f64,
    pub radius_range: [f64; 2],
}

impl Teleop {
    pub fn new(hand: Hand, calibration: Calibration) -> Result<Self, TeleopError> {
        calibration.validate()?;
        let home = hand.fk(&hand.home_reduced())?;
        let z_home = home.iter().map(|p| p.z).sum::<f64>() / home.len() as f64;
        let mut clouds: Vec<WorkspaceCloud> = Vec::with_capacity(hand.n_fingers());
        for k in 0..hand.n_fingers() {
            let g = &hand.params.fingers[k];
            let off = hand.params.fingertip_offset[k];
            let cloud = clouds
                .iter()
                .find(|c| c.geometry == *g && c.offset == off)
                .cloned()
                .unwrap_or_else(|| WorkspaceCloud::new(g, off, CLOUD_RESOLUTION));
            clouds.push(cloud);
        }
        let radius_range = calibration.radius_range.unwrap_or_else(|| {
            // radial reach of each fingertip about the hand axis at the home height
            let reach = (0..hand.n_fingers())
                .map(|k| max_radius_at(&hand, &clouds[k], k, z_home))
                .fold(f64::INFINITY, f64::min);
            let nearest = (0..hand.n_fingers())
                .map(|k| min_radius_at(&hand, &clouds[k], k, z_home))
                .fold(0.0, f64::max);
            [nearest.min(0.9 * reach), 0.9 * reach]
        });
        Ok(Self { hand, calibration, clouds, home, z_home, radius_range })
    }

    pub fn cloud(&self, finger: usize) -> &WorkspaceCloud {
        &self.clouds[finger]
    }

    /// Clamps a hand-frame target into finger `k`'s workspace.
    pub fn clamp_target(&self, k: usize, target: Point3) -> Point3 {
        let frame = &self.hand.frames.frames[k];
        frame.to_hand(self.clouds[k].clamp(frame.to_local(target)))
    }

    pub fn arm_delta(&self, s: &PoseSample) -> Point3 {
        (s.wrist - self.calibration.neutral.wrist) * self.calibration.arm_scale
    }

    fn digit_displacements(&self, s: &PoseSample) -> Vec<Point3> {
        let n = &self.calibration.neutral;
        (0..self.hand.n_fingers())
            .map(|k| {
                let d = self.calibration.digit_for(k);
                ((s.digit(d) - s.wrist) - (n.digit(d) - n.wrist)) * self.calibration.scale
            })
            .collect()
    }

    pub fn direct_targets(&self, s: &PoseSample) -> Vec<Point3> {
        self.digit_displacements(s).iter().zip(&self.home).map(|(d, h)| *h + *d).collect()
    }

    pub fn principal_targets(&self, s: &PoseSample, axes: &[Point3; 2], strategy: PrincipalStrategy) -> Vec<Point3> {
        self.digit_displacements(s)
            .iter()
            .zip(&self.home)
            .map(|(d, h)| *h + principal_displacement(*d, axes, strategy))
            .collect()
    }

    pub fn polar_radius(&self, s: &PoseSample) -> f64 {
        let [a0, a1] = self.calibration.aperture_range;
        let [r0, r1] = self.radius_range;
        let ap = s.left_index.distance(&s.left_thumb);
        let u = ((ap - a0) / (a1 - a0)).clamp(0.0, 1.0);
        r0 + u * (r1 - r0)
    }

    pub fn polar_angle(&self, s: &PoseSample) -> f64 {
        let n = &self.calibration.neutral;
        let az = |p: Point3, w: Point3| (p.y - w.y).atan2(p.x - w.x);
        let d = az(s.right_index, s.wrist) - az(n.right_index, n.wrist);
        let wrapped = (d + PI).rem_euclid(2.0 * PI) - PI;
        wrapped * self.calibration.twist_gain
    }

    /// Fingertip `k` at radius `r`, azimuth `theta + k·A_d`, home height.
    pub fn polar_targets_at(&self, r: f64, theta: f64) -> Vec<Point3> {
        let ad = self.hand.params.fingertip_angle;
        (0..self.hand.n_fingers())
            .map(|k| {
                let (s, c) = (theta + k as f64 * ad).sin_cos();
                Point3::new(r * c, r * s, self.z_home)
            })
            .collect()
    }

    pub fn polar_targets(&self, s: &PoseSample) -> Vec<Point3> {
        self.polar_targets_at(self.polar_radius(s), self.polar_angle(s))
    }

    /// Requested (unclamped) fingertip targets for a sample.
    pub fn targets(&self, s: &PoseSample, mapping: &Mapping) -> Result<Vec<Point3>, TeleopError> {
        Ok(match mapping {
            Mapping::Direct => self.direct_targets(s),
            Mapping::Principal { axes, strategy } => {
                check_axes(axes)?;
                self.principal_targets(s, axes, *strategy)
            }
            Mapping::Polar => self.polar_targets(s),
        })
    }

    /// Clamp, per-finger IK, synergy projection, bounds clamp and FK.
    pub fn solve(&self, t: f64, arm_delta: Point3, requested: Vec<Point3>) -> Result<TeleopCommand, TeleopError> {
        let clamped: Vec<Point3> = requested.iter().enumerate().map(|(k, p)| self.clamp_target(k, *p)).collect();
        let full = self.hand.ik_full(&clamped)?;
        let strokes = self.hand.reduced_strokes();
        let reduced: Vec<f64> = self.hand.project(&full)?.iter().zip(&strokes).map(|(v, s)| v.clamp(0.0, *s)).collect();
        let fingertips = self.hand.fk(&reduced)?;
        let residual = fingertips.iter().zip(&requested).map(|(a, b)| a.distance(b)).collect();
        Ok(TeleopCommand {
            t,
            arm_delta,
            fingertip_targets: clamped,
            requested_targets: requested,
            reduced_actuation: reduced,
            fingertips,
            residual,
        })
    }

    pub fn map(&self, s: &PoseSample, mapping: &Mapping) -> Result<TeleopCommand, TeleopError> {
        let targets = self.targets(s, mapping)?;
        self.solve(s.t, self.arm_delta(s), targets)
    }

    pub fn map_direct(&self, s: &PoseSample) -> Result<TeleopCommand, TeleopError> {
        self.map(s, &Mapping::Direct)
    }

    pub fn map_principal(&self, s: &PoseSample, axes: [Point3; 2]) -> Result<TeleopCommand, TeleopError> {
        self.map(s, &Mapping::Principal { axes, strategy: PrincipalStrategy::Snap })
    }

    pub fn map_polar(&self, s: &PoseSample) -> Result<TeleopCommand, TeleopError> {
        self.map(s, &Mapping::Polar)
    }

    /// Maps a recorded stream. Requested targets move toward each new mapping at no more
    /// than `limit.max_speed`; the first sample is taken as is.
    pub fn replay(&self, stream: &[PoseSample], mapping: &Mapping, limit: RateLimit) -> Result<Vec<TeleopCommand>, TeleopError> {
        validate_stream(stream)?;
        let mut out = Vec::with_capacity(stream.len());
        let mut state: Option<(f64, Vec<Point3>)> = None;
        for s in stream {
            let goal = self.targets(s, mapping)?;
            let current = match state.take() {
                None => goal,
                Some((t_prev, prev)) => {
                    let step = limit.max_speed * (s.t - t_prev);
                    prev.iter().zip(&goal).map(|(p, g)| move_toward(*p, *g, step)).collect()
                }
            };
            out.push(self.solve(s.t, self.arm_delta(s), current.clone())?);
            state = Some((s.t, current));
        }
        Ok(out)
    }
}

fn move_toward(from: Point3, to: Point3, max_step: f64) -> Point3 {
    let d = to - from;
    let len = d.norm();
    if len <= max_step {
        to
    } else {
        from + d * (max_step / len)
    }
}

fn scan_radius(hand: &Hand, cloud: &WorkspaceCloud, k: usize, z: f64, outward: bool) -> f64 {
    let frame = &hand.frames.frames[k];
    let phi = frame.yaw - PI;
    let (s, c) = phi.sin_cos();
    let reach = |r: f64| cloud.contains(frame.to_local(Point3::new(r * c, r * s, z)));
    let (lo, hi) = (0.0, 200.0);
    let steps = 2000;
    let radii = (0..=steps).map(|i| lo + (hi - lo) * i as f64 / steps as f64);
    let hits: Vec<f64> = radii.filter(|&r| reach(r)).collect();
    if outward {
        hits.last().copied().unwrap_or(0.0)
    } else {
        hits.first().copied().unwrap_or(0.0)
    }
}

fn max_radius_at(hand: &Hand, cloud: &WorkspaceCloud, k: usize, z: f64) -> f64 {
    scan_radius(hand, cloud, k, z, true)
}

fn min_radius_at(hand: &Hand, cloud: &WorkspaceCloud, k: usize, z: f64) -> f64 {
    scan_radius(hand, cloud, k, z, false)
}

pub fn validate_stream(stream: &[PoseSample]) -> Result<(), TeleopError> {
    for (i, s) in stream.iter().enumerate() {
        if !s.is_finite() {
            return Err(TeleopError::MalformedStream { index: i, msg: "non-finite value".into() });
        }
        if i > 0 && s.t < stream[i - 1].t {
            return Err(TeleopError::MalformedStream { index: i, msg: "timestamp decreases".into() });
        }
    }
    Ok(())
}

/// Reads a JSON Lines stream; blank lines are skipped.
pub fn read_stream<R: BufRead>(input: R) -> Result<Vec<PoseSample>, TeleopError> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: PoseSample = serde_json::from_str(&line)
            .map_err(|e| TeleopError::MalformedStream { index: out.len(), msg: e.to_string() })?;
        out.push(s);
    }
    validate_stream(&out)?;
    Ok(out)
}

pub fn write_commands<W: Write>(cmds: &[TeleopCommand], mut out: W) -> Result<(), TeleopError> {
    for c in cmds {
        serde_json::to_writer(&mut out, c).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hand::{CouplingTopology, HandParams};
    use crate::hull::ConvexHull;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::sync::OnceLock;

    fn teleop12() -> &'static Teleop {
        static T: OnceLock<Teleop> = OnceLock::new();
        T.get_or_init(|| {
            let hand = Hand::new(HandParams::reference(), CouplingTopology::independent(4)).unwrap();
            Teleop::new(hand, Calibration::default()).unwrap()
        })
    }

    fn shifted(mut s: PoseSample, d: Digit, by: Point3) -> PoseSample {
        match d {
            Digit::LeftThumb => s.left_thumb += by,
            Digit::LeftIndex => s.left_index += by,
            Digit::RightThumb => s.right_thumb += by,
            Digit::RightIndex => s.right_index += by,
        }
        s
    }

    #[test]
    fn neutral_is_identity() {
        let t = teleop12();
        let cmd = t.map_direct(&t.calibration.neutral).unwrap();
        assert_eq!(cmd.arm_delta, Point3::ORIGIN);
        for (a, b) in cmd.fingertips.iter().zip(&t.home) {
            assert!(a.distance(b) < 1e-9);
        }
        assert!(cmd.residual.iter().all(|r| *r < 1e-9));
    }

    #[test]
    fn inward_motion_moves_targets_inward() {
        let t = teleop12();
        let mut s = t.calibration.neutral;
        for k in 0..4 {
            let inward = -Point3::new(t.home[k].x, t.home[k].y, 0.0).normalized().unwrap() * 10.0;
            s = shifted(s, Digit::ALL[k], inward);
        }
        let targets = t.direct_targets(&s);
        for k in 0..4 {
            let before = t.home[k].radius_xy();
            assert_abs_diff_eq!(before - targets[k].radius_xy(), 10.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn far_targets_land_on_boundary() {
        let t = teleop12();
        let cloud = t.cloud(0);
        let mut pts = Vec::new();
        let axis = lattice_axis(20.0, 11);
        let g = &t.hand.params.fingers[0];
        for &a in &axis {
            for &b in &axis {
                for &c in &axis {
                    if let Ok(p) = fk_raw(g, [a, b, c]) {
                        pts.push((p + t.hand.params.fingertip_offset[0]).to_array());
                    }
                }
            }
        }
        let hull = ConvexHull::new(&pts).unwrap();
        let far = t.home[0] + Point3::new(80.0, 0.0, 0.0);
        let clamped = t.clamp_target(0, far);
        let local = t.hand.frames.frames[0].to_local(clamped);
        assert!(cloud.contains(local));
        assert!(hull.contains(&local.to_array(), 1e-6));
        assert!(hull.max_height(&local.to_array()) > -2.0);
        let cmd = t.map_direct(&shifted(t.calibration.neutral, Digit::LeftThumb, Point3::new(80.0, 0.0, 0.0))).unwrap();
        assert!(cmd.residual[0].is_finite());
        assert!(cmd.residual[0] > 30.0);
    }

    #[test]
    fn principal_snapping() {
        let axes = default_axes();
        let snap = |d| principal_displacement(d, &axes, PrincipalStrategy::Snap);
        assert_eq!(snap(Point3::new(10.0, 0.0, 3.0)), Point3::new(10.0, 0.0, 0.0));
        assert_eq!(snap(Point3::new(6.0, 8.0, 0.0)), Point3::new(0.0, 8.0, 0.0));
        assert_eq!(snap(Point3::new(-5.0, 5.0, 0.0)), Point3::new(-5.0, 0.0, 0.0));
        assert_eq!(principal_displacement(Point3::new(6.0, 8.0, 2.0), &axes, PrincipalStrategy::Project), Point3::new(6.0, 8.0, 0.0));
        let t = teleop12();
        let bad = Mapping::Principal { axes: [Point3::new(1.0, 0.0, 0.0), Point3::new(1.0, 0.0, 0.0)], strategy: PrincipalStrategy::Snap };
        assert!(matches!(t.map(&t.calibration.neutral, &bad), Err(TeleopError::InvalidAxes(_))));
    }

    #[test]
    fn aperture_endpoints() {
        let t = teleop12();
        let mut s = t.calibration.neutral;
        s.left_index = s.left_thumb + Point3::new(0.0, t.calibration.aperture_range[0], 0.0);
        assert_eq!(t.polar_radius(&s), t.radius_range[0]);
        s.left_index = s.left_thumb + Point3::new(0.0, t.calibration.aperture_range[1], 0.0);
        assert_eq!(t.polar_radius(&s), t.radius_range[1]);
        assert!(t.radius_range[1] > t.radius_range[0]);
    }

    #[test]
    fn replay_rate_limit_and_errors() {
        let t = teleop12();
        let n = t.calibration.neutral;
        assert!(t.replay(&[], &Mapping::Direct, RateLimit::default()).unwrap().is_empty());

        let constant: Vec<PoseSample> = (0..5).map(|i| PoseSample { t: i as f64 * 0.1, ..n }).collect();
        let cmds = t.replay(&constant, &Mapping::Direct, RateLimit::default()).unwrap();
        for c in &cmds[1..] {
            assert_eq!(c.reduced_actuation, cmds[0].reduced_actuation);
        }

        let step = shifted(n, Digit::LeftThumb, Point3::new(0.0, 0.0, 50.0));
        let stream: Vec<PoseSample> = (0..100)
            .map(|i| {
                let s = if i == 0 { n } else { step };
                PoseSample { t: i as f64 * 0.01, ..s }
            })
            .collect();
        let cmds = t.replay(&stream, &Mapping::Direct, RateLimit::default()).unwrap();
        let goal = t.home[0] + Point3::new(0.0, 0.0, 50.0);
        let reached = cmds.iter().position(|c| c.requested_targets[0].distance(&goal) < 1e-9).unwrap();
        assert!(cmds[reached].t >= 0.5 - 1e-9);
        for w in cmds.windows(2) {
            let dt = w[1].t - w[0].t;
            assert!(w[1].requested_targets[0].distance(&w[0].requested_targets[0]) <= 100.0 * dt + 1e-9);
        }

        let mut bad = constant.clone();
        bad[3].t = 0.0;
        assert!(matches!(t.replay(&bad, &Mapping::Direct, RateLimit::default()), Err(TeleopError::MalformedStream { index: 3, .. })));
    }

    #[test]
    fn jsonl_round_trip() {
        let n = PoseSample::neutral();
        let text = format!("{}\n\n{}\n", serde_json::to_string(&n).unwrap(), serde_json::to_string(&PoseSample { t: 0.5, ..n }).unwrap());
        let s = read_stream(text.as_bytes()).unwrap();
        assert_eq!(s.len(), 2);
        assert!(read_stream("{\"t\":1}\n".as_bytes()).is_err());
        let t = teleop12();
        let cmds = t.replay(&s, &Mapping::Polar, RateLimit::default()).unwrap();
        let mut buf = Vec::new();
        write_commands(&cmds, &mut buf).unwrap();
        assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), 2);
        let m: Mapping = serde_json::from_str(r#"{"mode":"principal"}"#).unwrap();
        assert_eq!(m, Mapping::principal_xy());
    }

    #[test]
    fn coupled_hand_stays_in_bounds() {
        let hand = Hand::new(HandParams::reference(), CouplingTopology::preset("5", 4).unwrap()).unwrap();
        let t = Teleop::new(hand, Calibration::default()).unwrap();
        let s = shifted(t.calibration.neutral, Digit::RightIndex, Point3::new(-40.0, 25.0, -30.0));
        for m in [Mapping::Direct, Mapping::principal_xy(), Mapping::Polar] {
            let c = t.map(&s, &m).unwrap();
            assert_eq!(c.reduced_actuation.len(), 5);
            assert!(c.reduced_actuation.iter().all(|v| (0.0..=20.0).contains(v)));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn polar_rotation_is_exact(r in 5.0..40.0f64, theta in -PI..PI, delta in -PI..PI) {
            let t = teleop12();
            let a = t.polar_targets_at(r, theta);
            let b = t.polar_targets_at(r, theta + delta);
            for (p, q) in a.iter().zip(&b) {
                let rot = p.rotated_z(delta);
                prop_assert!(rot.max_abs_diff(q) < 1e-12);
            }
        }

        #[test]
        fn principal_output_is_axis_parallel(d in [-50.0..50.0f64, -50.0..50.0f64, -50.0..50.0f64], ang in 0.0..PI) {
            let (s, c) = ang.sin_cos();
            let axes = [Point3::new(c, s, 0.0), Point3::new(-s, c, 0.0)];
            let out = principal_displacement(Point3::from(d), &axes, PrincipalStrategy::Snap);
            let par0 = out.cross(&axes[0]).norm() < 1e-9;
            let par1 = out.cross(&axes[1]).norm() < 1e-9;
            prop_assert!(par0 || par1);
        }

        #[test]
        fn mapped_actuation_is_in_bounds(d in [-80.0..80.0f64, -80.0..80.0f64, -80.0..80.0f64]) {
            let t = teleop12();
            let s = shifted(t.calibration.neutral, Digit::LeftIndex, Point3::from(d));
            let c = t.map_direct(&s).unwrap();
            prop_assert!(c.reduced_actuation.iter().all(|v| (0.0..=20.0).contains(v)));
        }
    }
}
