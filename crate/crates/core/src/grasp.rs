//! Quasi-static grasp generation and wrench-space quality.
//!
//! Fingertips are spheres centred at the fingertip point. A closing sweep drives the
//! open/close synergy until each fingertip touches the object; contacts become frictional
//! point contacts whose cones are discretised into primitive wrenches. Torques are divided by
//! the object's characteristic radius so that scores are scale free.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};

use microlp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::{DMatrix, Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hand::{Hand, HandError};
use crate::hull::{ConvexHull, HullError};
use crate::{Aabb, Point3};

/// Interiority margin for the force-closure program.
pub const CLOSURE_MARGIN: f64 = 1e-6;
const NORMAL_TOL: f64 = 1e-9;
const MESH_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraspError {
    #[error("invalid object: {0}")]
    InvalidObject(String),
    #[error("mesh parse error: {0}")]
    MeshParse(String),
    #[error("no fingertip reached the object")]
    NoContact,
    #[error("fingertip {finger} starts inside the object")]
    Penetration { finger: usize },
    #[error("contact normal is not unit length (|n| = {0})")]
    DegenerateNormal(f64),
    #[error("cone needs at least 3 edges, got {0}")]
    TooFewEdges(usize),
    #[error("wrench set is not force closure")]
    NotClosure,
    #[error("study cancelled")]
    Cancelled,
    #[error(transparent)]
    Hand(#[from] HandError),
    #[error(transparent)]
    Hull(#[from] HullError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Shape {
    Sphere { radius: f64 },
    Cylinder { radius: f64, height: f64 },
    Box { width: f64, depth: f64, height: f64 },
    ConvexMesh { vertices: Vec<Point3>, faces: Vec<Vec<usize>> },
}

/// Object placement: translation plus intrinsic roll/pitch/yaw (rad).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ObjectPose {
    #[serde(default)]
    pub position: Point3,
    #[serde(default)]
    pub roll: f64,
    #[serde(default)]
    pub pitch: f64,
    #[serde(default)]
    pub yaw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectModel {
    #[serde(flatten)]
    pub shape: Shape,
    #[serde(default)]
    pub pose: ObjectPose,
}

impl ObjectModel {
    pub fn sphere(radius: f64) -> Self {
        Self { shape: Shape::Sphere { radius }, pose: ObjectPose::default() }
    }

    pub fn cylinder(radius: f64, height: f64) -> Self {
        Self { shape: Shape::Cylinder { radius, height }, pose: ObjectPose::default() }
    }

    pub fn cuboid(width: f64, depth: f64, height: f64) -> Self {
        Self { shape: Shape::Box { width, depth, height }, pose: ObjectPose::default() }
    }

    pub fn at(mut self, position: Point3) -> Self {
        self.pose.position = position;
        self
    }

    /// Convex hull of a point cloud as a triangulated mesh.
    pub fn convex_hull_of(points: &[Point3]) -> Result<Self, GraspError> {
        let arr: Vec<[f64; 3]> = points.iter().map(|p| p.to_array()).collect();
        let hull = ConvexHull::new(&arr)?;
        let used = hull.vertex_indices();
        let mut remap = vec![usize::MAX; points.len()];
        for (new, &old) in used.iter().enumerate() {
            remap[old] = new;
        }
        let interior = Point3::from(hull.interior_point());
        let faces = hull
            .facets()
            .iter()
            .map(|f| {
                let [a, b, c] = f.vertices;
                let (pa, pb, pc) = (points[a], points[b], points[c]);
                // counter-clockwise seen from outside
                if (pb - pa).cross(&(pc - pa)).dot(&(pa - interior)) >= 0.0 {
                    vec![remap[a], remap[b], remap[c]]
                } else {
                    vec![remap[a], remap[c], remap[b]]
                }
            })
            .collect();
        Ok(Self {
            shape: Shape::ConvexMesh { vertices: used.iter().map(|&i| points[i]).collect(), faces },
            pose: ObjectPose::default(),
        })
    }

    /// Reads an OFF or OBJ mesh (vertices and faces only) and replaces it by its convex hull.
    pub fn from_mesh_file(path: impl AsRef<Path>) -> Result<Self, MeshFileError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(MeshFileError::Io)?;
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
        let vertices = match ext.as_str() {
            "off" => parse_off(&text)?.0,
            "obj" => parse_obj(&text)?.0,
            other => return Err(GraspError::MeshParse(format!("unsupported extension {other:?}")).into()),
        };
        Ok(Self::convex_hull_of(&vertices)?)
    }

    pub fn prepare(&self) -> Result<Object, GraspError> {
        Object::new(self.clone())
    }
}

#[derive(Debug, Error)]
pub enum MeshFileError {
    #[error("cannot read mesh: {0}")]
    Io(std::io::Error),
    #[error(transparent)]
    Grasp(#[from] GraspError),
}

pub fn parse_off(text: &str) -> Result<(Vec<Point3>, Vec<Vec<usize>>), GraspError> {
    let err = |m: &str| GraspError::MeshParse(m.to_string());
    let mut tokens = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(str::split_whitespace);
    let header = tokens.next().ok_or_else(|| err("empty file"))?;
    if header != "OFF" {
        return Err(err("missing OFF header"));
    }
    let mut num = |what: &str| -> Result<f64, GraspError> {
        tokens
            .next()
            .ok_or_else(|| err(&format!("unexpected end of file reading {what}")))?
            .parse::<f64>()
            .map_err(|_| err(&format!("bad number in {what}")))
    };
    let nv = num("vertex count")? as usize;
    let nf = num("face count")? as usize;
    let _edges = num("edge count")?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        vertices.push(Point3::new(num("vertex")?, num("vertex")?, num("vertex")?));
    }
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let k = num("face")? as usize;
        let mut f = Vec::with_capacity(k);
        for _ in 0..k {
            let idx = num("face index")? as usize;
            if idx >= nv {
                return Err(err("face index out of range"));
            }
            f.push(idx);
        }
        faces.push(f);
    }
    Ok((vertices, faces))
}

pub fn parse_obj(text: &str) -> Result<(Vec<Point3>, Vec<Vec<usize>>), GraspError> {
    let err = |m: String| GraspError::MeshParse(m);
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let mut it = line.split('#').next().unwrap_or("").split_whitespace();
        match it.next() {
            Some("v") => {
                let c: Vec<f64> = it
                    .take(3)
                    .map(|t| t.parse::<f64>().map_err(|_| err(format!("line {}: bad vertex", lineno + 1))))
                    .collect::<Result<_, _>>()?;
                if c.len() != 3 {
                    return Err(err(format!("line {}: vertex needs 3 coordinates", lineno + 1)));
                }
                vertices.push(Point3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let mut f = Vec::new();
                for t in it {
                    let raw: i64 = t
                        .split('/')
                        .next()
                        .unwrap_or("")
                        .parse()
                        .map_err(|_| err(format!("line {}: bad face index", lineno + 1)))?;
                    let idx = if raw < 0 { vertices.len() as i64 + raw } else { raw - 1 };
                    if idx < 0 || idx as usize >= vertices.len() {
                        return Err(err(format!("line {}: face index out of range", lineno + 1)));
                    }
                    f.push(idx as usize);
                }
                faces.push(f);
            }
            _ => {}
        }
    }
    if vertices.is_empty() {
        return Err(err("no vertices".into()));
    }
    Ok((vertices, faces))
}

/// Result of a closest-surface query: signed distance (negative inside), closest surface
/// point and outward unit normal there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceQuery {
    pub distance: f64,
    pub closest: Point3,
    pub normal: Point3,
}

#[derive(Debug, Clone)]
enum Prepared {
    Sphere(f64),
    Cylinder(f64, f64),
    Box([f64; 3]),
    Mesh { hull: ConvexHull<3>, tris: Vec<[Point3; 3]> },
}

/// An object ready for geometric queries.
#[derive(Debug, Clone)]
pub struct Object {
    pub model: ObjectModel,
    rotation: Matrix3<f64>,
    prepared: Prepared,
    local_centroid: Point3,
    rho: f64,
    local_bbox: Aabb,
}

fn positive(v: f64, what: &str) -> Result<f64, GraspError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(GraspError::InvalidObject(format!("{what} must be positive")))
    }
}

impl Object {
    pub fn new(model: ObjectModel) -> Result<Self, GraspError> {
        let pose = model.pose;
        if !pose.position.is_finite() || ![pose.roll, pose.pitch, pose.yaw].iter().all(|v| v.is_finite()) {
            return Err(GraspError::InvalidObject("pose must be finite".into()));
        }
        let rotation = *Rotation3::from_euler_angles(pose.roll, pose.pitch, pose.yaw).matrix();
        let (prepared, local_centroid, rho, local_bbox) = match &model.shape {
            Shape::Sphere { radius } => {
                let r = positive(*radius, "radius")?;
                (Prepared::Sphere(r), Point3::ORIGIN, r, cube_box(r, r, r))
            }
            Shape::Cylinder { radius, height } => {
                let r = positive(*radius, "radius")?;
                let h = positive(*height, "height")?;
                (Prepared::Cylinder(r, h), Point3::ORIGIN, r.hypot(h / 2.0), cube_box(r, r, h / 2.0))
            }
            Shape::Box { width, depth, height } => {
                let e = [positive(*width, "width")? / 2.0, positive(*depth, "depth")? / 2.0, positive(*height, "height")? / 2.0];
                let rho = (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt();
                (Prepared::Box(e), Point3::ORIGIN, rho, cube_box(e[0], e[1], e[2]))
            }
            Shape::ConvexMesh { vertices, faces } => prepare_mesh(vertices, faces)?,
        };
        Ok(Self { model, rotation, prepared, local_centroid, rho, local_bbox })
    }

    fn to_world(&self, p: Point3) -> Point3 {
        Point3::from(self.rotation * Vector3::from(p)) + self.model.pose.position
    }

    fn dir_to_world(&self, v: Point3) -> Point3 {
        Point3::from(self.rotation * Vector3::from(v))
    }

    fn to_local(&self, p: Point3) -> Point3 {
        Point3::from(self.rotation.transpose() * Vector3::from(p - self.model.pose.position))
    }

    /// Volume centroid in the world frame.
    pub fn centroid(&self) -> Point3 {
        self.to_world(self.local_centroid)
    }

    /// Largest centroid-to-surface distance.
    pub fn characteristic_radius(&self) -> f64 {
        self.rho
    }

    pub fn world_bbox(&self) -> Aabb {
        let b = self.local_bbox;
        let corners: Vec<Point3> = (0..8)
            .map(|i| {
                self.to_world(Point3::new(
                    if i & 1 == 0 { b.min.x } else { b.max.x },
                    if i & 2 == 0 { b.min.y } else { b.max.y },
                    if i & 4 == 0 { b.min.z } else { b.max.z },
                ))
            })
            .collect();
        Aabb::from_points(&corners).expect("eight corners")
    }

    pub fn query(&self, p: Point3) -> SurfaceQuery {
        let q = local_query(&self.prepared, self.to_local(p));
        SurfaceQuery {
            distance: q.distance,
            closest: self.to_world(q.closest),
            normal: self.dir_to_world(q.normal),
        }
    }
}

fn cube_box(ex: f64, ey: f64, ez: f64) -> Aabb {
    Aabb { min: Point3::new(-ex, -ey, -ez), max: Point3::new(ex, ey, ez) }
}

fn prepare_mesh(
    vertices: &[Point3],
    faces: &[Vec<usize>],
) -> Result<(Prepared, Point3, f64, Aabb), GraspError> {
    let bad = |m: String| Err(GraspError::InvalidObject(m));
    if vertices.len() < 4 || vertices.iter().any(|v| !v.is_finite()) {
        return bad("mesh needs at least 4 finite vertices".into());
    }
    if faces.iter().any(|f| f.len() < 3 || f.iter().any(|&i| i >= vertices.len())) {
        return bad("faces need at least 3 valid vertex indices".into());
    }
    // closed: every undirected edge is shared by exactly two faces
    let mut edges = std::collections::BTreeMap::new();
    for f in faces {
        for i in 0..f.len() {
            let (a, b) = (f[i], f[(i + 1) % f.len()]);
            *edges.entry((a.min(b), a.max(b))).or_insert(0usize) += 1;
        }
    }
    if edges.values().any(|&c| c != 2) {
        return bad("mesh is not closed".into());
    }
    let centre = vertices.iter().fold(Point3::ORIGIN, |acc, v| acc + *v) * (1.0 / vertices.len() as f64);
    let scale = vertices.iter().map(|v| v.distance(&centre)).fold(0.0, f64::max);
    for (fi, f) in faces.iter().enumerate() {
        let p0 = vertices[f[0]];
        let normal = f[1..]
            .windows(2)
            .map(|w| (vertices[w[0]] - p0).cross(&(vertices[w[1]] - p0)))
            .max_by(|a, b| a.norm().total_cmp(&b.norm()))
            .and_then(|n| n.normalized())
            .ok_or_else(|| GraspError::InvalidObject(format!("face {fi} is degenerate")))?;
        let normal = if normal.dot(&(p0 - centre)) < 0.0 { -normal } else { normal };
        if vertices.iter().any(|v| normal.dot(&(*v - p0)) > MESH_TOL * scale.max(1.0)) {
            return bad(format!("mesh is not convex at face {fi}"));
        }
    }

    let arr: Vec<[f64; 3]> = vertices.iter().map(|p| p.to_array()).collect();
    let hull = ConvexHull::new(&arr)?;
    let tris: Vec<[Point3; 3]> =
        hull.facets().iter().map(|f| f.vertices.map(|i| vertices[i])).collect();
    // volume centroid from tetrahedra on the interior point
    let o = Point3::from(hull.interior_point());
    let (mut vol, mut acc) = (0.0, Point3::ORIGIN);
    for t in &tris {
        let v = ((t[0] - o).dot(&(t[1] - o).cross(&(t[2] - o)))).abs() / 6.0;
        vol += v;
        acc += (o + t[0] + t[1] + t[2]) * (v / 4.0);
    }
    let centroid = acc * (1.0 / vol);
    let rho = vertices.iter().map(|v| v.distance(&centroid)).fold(0.0, f64::max);
    let bbox = Aabb::from_points(vertices).expect("non-empty");
    Ok((Prepared::Mesh { hull, tris }, centroid, rho, bbox))
}

fn local_query(shape: &Prepared, p: Point3) -> SurfaceQuery {
    match shape {
        Prepared::Sphere(r) => {
            let n = p.normalized().unwrap_or(Point3::new(1.0, 0.0, 0.0));
            SurfaceQuery { distance: p.norm() - r, closest: n * *r, normal: n }
        }
        Prepared::Cylinder(r, h) => {
            let half = h / 2.0;
            let rxy = p.radius_xy();
            let radial = if rxy > 1e-300 { Point3::new(p.x / rxy, p.y / rxy, 0.0) } else { Point3::new(1.0, 0.0, 0.0) };
            let dr = rxy - r;
            let dz = p.z.abs() - half;
            let sz = if p.z >= 0.0 { 1.0 } else { -1.0 };
            if dr > 0.0 || dz > 0.0 {
                let cr = rxy.min(*r);
                let closest = Point3::new(radial.x * cr, radial.y * cr, p.z.clamp(-half, half));
                let diff = p - closest;
                let distance = diff.norm();
                let normal = diff.normalized().unwrap_or(if dr > dz { radial } else { Point3::new(0.0, 0.0, sz) });
                SurfaceQuery { distance, closest, normal }
            } else if dr > dz {
                SurfaceQuery { distance: dr, closest: Point3::new(radial.x * r, radial.y * r, p.z), normal: radial }
            } else {
                SurfaceQuery { distance: dz, closest: Point3::new(p.x, p.y, sz * half), normal: Point3::new(0.0, 0.0, sz) }
            }
        }
        Prepared::Box(e) => {
            let a = p.to_array();
            let outside = (0..3).any(|i| a[i].abs() > e[i]);
            if outside {
                let closest = Point3::from(std::array::from_fn(|i| a[i].clamp(-e[i], e[i])));
                let diff = p - closest;
                SurfaceQuery { distance: diff.norm(), closest, normal: diff.normalized().unwrap_or(Point3::new(1.0, 0.0, 0.0)) }
            } else {
                let axis = (0..3).max_by(|&i, &j| (a[i].abs() - e[i]).total_cmp(&(a[j].abs() - e[j]))).unwrap_or(0);
                let s = if a[axis] >= 0.0 { 1.0 } else { -1.0 };
                let mut c = a;
                c[axis] = s * e[axis];
                let mut n = [0.0; 3];
                n[axis] = s;
                SurfaceQuery { distance: a[axis].abs() - e[axis], closest: Point3::from(c), normal: Point3::from(n) }
            }
        }
        Prepared::Mesh { hull, tris } => {
            let x = p.to_array();
            let (fi, h) = hull
                .facets()
                .iter()
                .enumerate()
                .map(|(i, f)| (i, f.height(&x)))
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .expect("hull has facets");
            if h <= 0.0 {
                let n = Point3::from(hull.facets()[fi].normal);
                SurfaceQuery { distance: h, closest: p - n * h, normal: n }
            } else {
                let closest = tris
                    .iter()
                    .map(|t| closest_on_triangle(p, t))
                    .min_by(|a, b| a.distance(&p).total_cmp(&b.distance(&p)))
                    .expect("hull has facets");
                let diff = p - closest;
                SurfaceQuery {
                    distance: diff.norm(),
                    closest,
                    normal: diff.normalized().unwrap_or(Point3::from(hull.facets()[fi].normal)),
                }
            }
        }
    }
}

/// Closest point on a triangle (Voronoi-region walk).
fn closest_on_triangle(p: Point3, t: &[Point3; 3]) -> Point3 {
    let [a, b, c] = *t;
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactPoint {
    pub position: Point3,
    /// Unit normal pointing into the object.
    pub normal: Point3,
    pub mu: f64,
    pub finger_index: usize,
}

/// Hand base placement in the world: translation plus rotation about world z (rad).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HandPose {
    pub position: Point3,
    pub yaw: f64,
}

impl HandPose {
    pub fn to_world(&self, p: Point3) -> Point3 {
        self.position + p.rotated_z(self.yaw)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosingOptions {
    /// Largest per-step change of any closing actuator (mm).
    pub step: f64,
    pub tip_radius: f64,
    pub mu: f64,
}

impl Default for ClosingOptions {
    fn default() -> Self {
        Self { step: 0.5, tip_radius: 5.0, mu: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Closing {
    pub contacts: Vec<ContactPoint>,
    /// Per finger, schedule step index (fractional after refinement) at first contact.
    pub contact_step: Vec<Option<f64>>,
    pub n_steps: usize,
}

/// Sweeps the closing actuators (those driving an inner rail) from `start` to full stroke in
/// steps of at most `opts.step`; each fingertip stops at its first contact, found by
/// bisection inside the step.
pub fn close_until_contact(
    hand: &Hand,
    pose: &HandPose,
    object: &Object,
    start: &[f64],
    opts: &ClosingOptions,
) -> Result<Closing, GraspError> {
    let start = hand.check_reduced(start)?;
    let strokes = hand.reduced_strokes();
    let closing = hand.closing_actuators();
    let travel: Vec<f64> = closing.iter().map(|&j| strokes[j] - start[j]).collect();
    let max_travel = travel.iter().copied().fold(0.0, f64::max);
    let n_steps = ((max_travel / opts.step).ceil() as usize).max(1);
    let n = hand.n_fingers();

    let tip_at = |k: usize, s: f64| -> Option<Point3> {
        let mut a = start.clone();
        for (&j, &t) in closing.iter().zip(&travel) {
            a[j] = start[j] + s * t;
        }
        let triple = hand.finger_actuators(k).map(|j| a[j]);
        hand.fingertip(k, triple).ok().map(|p| pose.to_world(p))
    };
    let gap = |k: usize, s: f64| -> Option<f64> {
        tip_at(k, s).map(|c| object.query(c).distance - opts.tip_radius)
    };

    let mut contact_step = vec![None; n];
    let mut contacts = Vec::new();
    let mut active = vec![true; n];
    for k in 0..n {
        match gap(k, 0.0) {
            Some(g) if g < -1e-9 => return Err(GraspError::Penetration { finger: k }),
            Some(g) if g <= 0.0 => {
                contacts.push(make_contact(object, tip_at(k, 0.0).expect("evaluated"), k, opts.mu));
                contact_step[k] = Some(0.0);
                active[k] = false;
            }
            Some(_) => {}
            None => active[k] = false,
        }
    }
    for step in 1..=n_steps {
        if !active.iter().any(|&a| a) {
            break;
        }
        let s = step as f64 / n_steps as f64;
        let s_prev = (step - 1) as f64 / n_steps as f64;
        for k in 0..n {
            if !active[k] {
                continue;
            }
            match gap(k, s) {
                None => active[k] = false,
                Some(g) if g <= 0.0 => {
                    let (mut lo, mut hi) = (s_prev, s);
                    for _ in 0..40 {
                        let mid = 0.5 * (lo + hi);
                        match gap(k, mid) {
                            Some(gm) if gm > 0.0 => lo = mid,
                            _ => hi = mid,
                        }
                    }
                    let centre = tip_at(k, lo).expect("evaluated before");
                    contacts.push(make_contact(object, centre, k, opts.mu));
                    contact_step[k] = Some(lo * n_steps as f64);
                    active[k] = false;
                }
                Some(_) => {}
            }
        }
    }
    if contacts.is_empty() {
        return Err(GraspError::NoContact);
    }
    contacts.sort_by_key(|c| c.finger_index);
    Ok(Closing { contacts, contact_step, n_steps })
}

fn make_contact(object: &Object, centre: Point3, finger: usize, mu: f64) -> ContactPoint {
    let q = object.query(centre);
    ContactPoint { position: q.closest, normal: -q.normal, mu, finger_index: finger }
}

/// Orthonormal tangent pair for a unit normal.
pub fn tangent_basis(n: Point3) -> (Point3, Point3) {
    let a = n.to_array().map(f64::abs);
    let e = if a[0] <= a[1] && a[0] <= a[2] {
        Point3::new(1.0, 0.0, 0.0)
    } else if a[1] <= a[2] {
        Point3::new(0.0, 1.0, 0.0)
    } else {
        Point3::new(0.0, 0.0, 1.0)
    };
    let t1 = n.cross(&e).normalized().expect("e not parallel to n");
    (t1, n.cross(&t1))
}

pub type Wrench = [f64; 6];

/// Discretised friction cone with the default tangent basis.
pub fn discretize_cone(
    contact: &ContactPoint,
    m_e: usize,
    centroid: Point3,
    rho: f64,
) -> Result<Vec<Wrench>, GraspError> {
    let (t1, _) = tangent_basis(contact.normal);
    discretize_cone_with_basis(contact, m_e, centroid, rho, t1)
}

/// Discretised friction cone whose first edge leans along `t1` (projected onto the tangent
/// plane).
pub fn discretize_cone_with_basis(
    contact: &ContactPoint,
    m_e: usize,
    centroid: Point3,
    rho: f64,
    t1: Point3,
) -> Result<Vec<Wrench>, GraspError> {
    if m_e < 3 {
        return Err(GraspError::TooFewEdges(m_e));
    }
    let n = contact.normal;
    let len = n.norm();
    if (len - 1.0).abs() > NORMAL_TOL {
        return Err(GraspError::DegenerateNormal(len));
    }
    let t1 = (t1 - n * n.dot(&t1)).normalized().ok_or(GraspError::DegenerateNormal(len))?;
    let t2 = n.cross(&t1);
    let arm = (contact.position - centroid) * (1.0 / rho);
    Ok((0..m_e)
        .map(|j| {
            let ang = 2.0 * PI * j as f64 / m_e as f64;
            let (s, c) = ang.sin_cos();
            let f = (n + (t1 * c + t2 * s) * contact.mu).normalized().expect("unit normal plus tangent");
            let tau = arm.cross(&f);
            [f.x, f.y, f.z, tau.x, tau.y, tau.z]
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WrenchSet {
    pub wrenches: Vec<Wrench>,
    pub contacts: Vec<ContactPoint>,
    pub cone_edges: usize,
    pub centroid: Point3,
    pub rho: f64,
}

impl WrenchSet {
    pub fn new(
        contacts: &[ContactPoint],
        cone_edges: usize,
        centroid: Point3,
        rho: f64,
    ) -> Result<Self, GraspError> {
        let mut wrenches = Vec::with_capacity(contacts.len() * cone_edges);
        for c in contacts {
            wrenches.extend(discretize_cone(c, cone_edges, centroid, rho)?);
        }
        Ok(Self { wrenches, contacts: contacts.to_vec(), cone_edges, centroid, rho })
    }

    pub fn for_object(contacts: &[ContactPoint], cone_edges: usize, object: &Object) -> Result<Self, GraspError> {
        Self::new(contacts, cone_edges, object.centroid(), object.characteristic_radius())
    }
}

fn wrench_rank(w: &[Wrench]) -> usize {
    if w.is_empty() {
        return 0;
    }
    let m = DMatrix::from_fn(6, w.len(), |r, c| w[c][r]);
    let sv = m.svd(false, false).singular_values;
    let max = sv.iter().copied().fold(0.0, f64::max);
    sv.iter().filter(|&&s| s > 1e-9 * max.max(1e-300)).count()
}

/// Largest `t` such that the origin is a convex combination of the wrenches with every
/// weight at least `t`; `None` when the origin is outside their hull.
pub fn closure_margin(w: &[Wrench]) -> Option<f64> {
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let t = lp.add_var(1.0, (f64::NEG_INFINITY, 1.0));
    let lambdas: Vec<_> = w.iter().map(|_| lp.add_var(0.0, (0.0, f64::INFINITY))).collect();
    for row in 0..6 {
        let terms: Vec<_> = lambdas.iter().zip(w).map(|(&l, wi)| (l, wi[row])).collect();
        lp.add_constraint(terms.as_slice(), ComparisonOp::Eq, 0.0);
    }
    let sum: Vec<_> = lambdas.iter().map(|&l| (l, 1.0)).collect();
    lp.add_constraint(sum.as_slice(), ComparisonOp::Eq, 1.0);
    for &l in &lambdas {
        lp.add_constraint(&[(l, 1.0), (t, -1.0)], ComparisonOp::Ge, 0.0);
    }
    let outcome = lp.solve().ok()?;
    outcome.solution().map(|s| s.objective())
}

/// True iff the origin lies strictly inside the 6D hull of the primitive wrenches.
pub fn force_closure(ws: &WrenchSet) -> bool {
    if ws.contacts.len() < 2 || ws.wrenches.len() < 7 || wrench_rank(&ws.wrenches) < 6 {
        return false;
    }
    closure_margin(&ws.wrenches).is_some_and(|t| t > CLOSURE_MARGIN)
}

/// Radius of the largest origin-centred ball inside the wrench hull.
pub fn q_lrw(ws: &WrenchSet) -> Result<f64, GraspError> {
    if ws.wrenches.len() < 7 {
        return Ok(0.0);
    }
    if !force_closure(ws) {
        return Err(GraspError::NotClosure);
    }
    let hull = ConvexHull::new(&ws.wrenches)?;
    Ok(hull.inscribed_radius_at(&[0.0; 6]).max(0.0))
}

/// Closure flag and score, kept consistent (score > 0 exactly when closure).
pub fn evaluate(ws: &WrenchSet) -> (bool, f64) {
    match q_lrw(ws) {
        Ok(q) if q > 0.0 => (true, q),
        _ => (false, 0.0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspReport {
    pub is_force_closure: bool,
    pub q_lrw: f64,
    pub contacts: Vec<ContactPoint>,
    pub hand_pose: HandPose,
    pub reduced_actuation: Vec<f64>,
    pub rng_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub n_samples: usize,
    pub n_heights: usize,
    pub yaws_deg: Vec<f64>,
    pub seed: u64,
    /// Standard deviation of the stage-two perturbation (mm).
    pub sigma: f64,
    pub mu: f64,
    pub cone_edges: usize,
    pub tip_radius: f64,
    pub step: f64,
    pub threads: Option<usize>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            n_samples: 20_000,
            n_heights: 20,
            yaws_deg: vec![0.0, 45.0, 90.0, 135.0],
            seed: 0,
            sigma: 2.0,
            mu: 0.5,
            cone_edges: 8,
            tip_radius: 5.0,
            step: 0.5,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspSampleRow {
    pub height_mm: f64,
    pub yaw_deg: f64,
    pub sample: usize,
    pub closure: bool,
    pub q_lrw: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspAggregate {
    pub n_reduced: usize,
    pub n_samples: usize,
    pub valid_poses: usize,
    pub closure_count: usize,
    /// Mean score over closure grasps.
    pub mean_q_lrw: f64,
    /// Mean score over all samples (non-closure counted as zero).
    pub mean_q_lrw_all: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspStudy {
    pub aggregate: GraspAggregate,
    pub rows: Vec<GraspSampleRow>,
}

impl GraspStudy {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["height_mm", "yaw_deg", "sample", "closure", "q_lrw", "seed"])?;
        for r in &self.rows {
            w.write_record([
                format!("{:.6}", r.height_mm),
                format!("{}", r.yaw_deg),
                r.sample.to_string(),
                (r.closure as u8).to_string(),
                format!("{:.9}", r.q_lrw),
                r.seed.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Closing actuators retracted, everything else at mid-stroke.
pub fn open_configuration(hand: &Hand) -> Vec<f64> {
    let mut a = hand.home_reduced();
    for j in hand.closing_actuators() {
        a[j] = 0.0;
    }
    a
}

/// Hand poses for the study: fingertip levels spread evenly over the object's height, hand
/// axis over the object centroid, each level at every yaw.
pub fn pose_grid(hand: &Hand, object: &Object, n_heights: usize, yaws_deg: &[f64]) -> Result<Vec<(HandPose, f64)>, GraspError> {
    let open = hand.fk(&open_configuration(hand))?;
    let tip_z = open.iter().map(|p| p.z).sum::<f64>() / open.len() as f64;
    let bb = object.world_bbox();
    let c = object.centroid();
    let mut poses = Vec::with_capacity(n_heights * yaws_deg.len());
    for i in 0..n_heights {
        let level = bb.min.z + (i as f64 + 0.5) * (bb.max.z - bb.min.z) / n_heights as f64;
        for &yaw in yaws_deg {
            let pose = HandPose { position: Point3::new(c.x, c.y, level - tip_z), yaw: yaw.to_radians() };
            poses.push((pose, yaw));
        }
    }
    Ok(poses)
}

/// Open configuration with the closing actuators advanced to the first contact.
fn pre_grasp(hand: &Hand, open: &[f64], closing: &[usize], c: &Closing) -> Vec<f64> {
    let s = c.contact_step.iter().flatten().copied().fold(f64::INFINITY, f64::min) / c.n_steps as f64;
    let strokes = hand.reduced_strokes();
    let mut a = open.to_vec();
    for &j in closing {
        a[j] = open[j] + s * (strokes[j] - open[j]);
    }
    a
}

fn truncated_normal(rng: &mut ChaCha8Rng, mean: f64, sigma: f64, hi: f64) -> f64 {
    if sigma <= 0.0 {
        return mean.clamp(0.0, hi);
    }
    for _ in 0..1000 {
        let z: f64 = rng.sample(StandardNormal);
        let v = mean + sigma * z;
        if (0.0..=hi).contains(&v) {
            return v;
        }
    }
    mean.clamp(0.0, hi)
}

/// Evaluates a closing from `start` at `pose`, returning the report.
pub fn grasp_once(
    hand: &Hand,
    object: &Object,
    pose: &HandPose,
    start: &[f64],
    cfg: &SamplingConfig,
    rng_seed: u64,
) -> GraspReport {
    let opts = ClosingOptions { step: cfg.step, tip_radius: cfg.tip_radius, mu: cfg.mu };
    let (contacts, closure, q) = match close_until_contact(hand, pose, object, start, &opts) {
        Ok(closing) => {
            let (closure, q) = WrenchSet::for_object(&closing.contacts, cfg.cone_edges, object)
                .map(|ws| evaluate(&ws))
                .unwrap_or((false, 0.0));
            (closing.contacts, closure, q)
        }
        Err(_) => (Vec::new(), false, 0.0),
    };
    GraspReport {
        is_force_closure: closure,
        q_lrw: q,
        contacts,
        hand_pose: *pose,
        reduced_actuation: start.to_vec(),
        rng_seed,
    }
}

/// Two-stage sampling study. Stage one keeps the poses where closing from the open
/// configuration touches the object without initial penetration, and records the closing
/// state at first touch as that pose's pre-grasp; stage two perturbs every reduced actuator
/// around the pre-grasp with a truncated Gaussian and closes again.
/// Sample `s` uses pose `s mod valid_poses` and RNG seed `seed + s`.
pub fn sample_grasps(hand: &Hand, object: &Object, cfg: &SamplingConfig) -> Result<GraspStudy, GraspError> {
    sample_grasps_cancellable(hand, object, cfg, &AtomicBool::new(false))
}

/// As [`sample_grasps`], returning [`GraspError::Cancelled`] soon after `cancel` is set.
pub fn sample_grasps_cancellable(
    hand: &Hand,
    object: &Object,
    cfg: &SamplingConfig,
    cancel: &AtomicBool,
) -> Result<GraspStudy, GraspError> {
    match cfg.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build()
            .map_err(|e| GraspError::InvalidObject(format!("thread pool: {e}")))?
            .install(|| run_study(hand, object, cfg, cancel)),
        None => run_study(hand, object, cfg, cancel),
    }
}

fn run_study(hand: &Hand, object: &Object, cfg: &SamplingConfig, cancel: &AtomicBool) -> Result<GraspStudy, GraspError> {
    let open = open_configuration(hand);
    let opts = ClosingOptions { step: cfg.step, tip_radius: cfg.tip_radius, mu: cfg.mu };
    let grid = pose_grid(hand, object, cfg.n_heights, &cfg.yaws_deg)?;
    let closing = hand.closing_actuators();
    let valid: Vec<(HandPose, f64, Vec<f64>)> = grid
        .into_par_iter()
        .filter_map(|(pose, yaw)| {
            let c = close_until_contact(hand, &pose, object, &open, &opts).ok()?;
            Some((pose, yaw, pre_grasp(hand, &open, &closing, &c)))
        })
        .collect();
    let strokes = hand.reduced_strokes();

    let rows: Vec<GraspSampleRow> = (0..cfg.n_samples)
        .into_par_iter()
        .map(|s| {
            let seed = cfg.seed.wrapping_add(s as u64);
            if cancel.load(Ordering::Relaxed) {
                return GraspSampleRow { height_mm: f64::NAN, yaw_deg: f64::NAN, sample: s, closure: false, q_lrw: 0.0, seed };
            }
            let Some((pose, yaw_deg, pre)) = valid.get(s % valid.len().max(1)) else {
                return GraspSampleRow { height_mm: f64::NAN, yaw_deg: f64::NAN, sample: s, closure: false, q_lrw: 0.0, seed };
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let start: Vec<f64> = pre
                .iter()
                .zip(&strokes)
                .map(|(&m, &hi)| truncated_normal(&mut rng, m, cfg.sigma, hi))
                .collect();
            let report = grasp_once(hand, object, pose, &start, cfg, seed);
            GraspSampleRow {
                height_mm: pose.position.z,
                yaw_deg: *yaw_deg,
                sample: s,
                closure: report.is_force_closure,
                q_lrw: report.q_lrw,
                seed,
            }
        })
        .collect();
    if cancel.load(Ordering::Relaxed) {
        return Err(GraspError::Cancelled);
    }

    let closure_count = rows.iter().filter(|r| r.closure).count();
    let total_q: f64 = rows.iter().map(|r| r.q_lrw).sum();
    let aggregate = GraspAggregate {
        n_reduced: hand.n_reduced(),
        n_samples: cfg.n_samples,
        valid_poses: valid.len(),
        closure_count,
        mean_q_lrw: if closure_count > 0 { total_q / closure_count as f64 } else { 0.0 },
        mean_q_lrw_all: if rows.is_empty() { 0.0 } else { total_q / rows.len() as f64 },
        seed: cfg.seed,
    };
    Ok(GraspStudy { aggregate, rows })
}
