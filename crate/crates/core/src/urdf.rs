//! URDF export with a loop-closure sidecar.
//!
//! Each finger is a tree: three prismatic rails under `base_link`, a two-axis universal joint
//! from every carriage to its link, and a second universal from link 1 to the end-effector.
//! Links 2 and 3 reach the end-effector through point-to-point closures listed in the
//! sidecar. Fingers are numbered from 0, rails from 1 (matching `a1..a3`). Lengths are written
//! in metres with six decimals.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::hand::{CouplingTopology, Hand, HandError, HandParams};
use crate::kinematics::fk_raw;
use crate::Point3;

const MM: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UrdfOptions {
    /// Mass of every generated link (kg).
    pub link_mass: f64,
    /// Diagonal inertia of every generated link (kg m^2).
    pub link_inertia: f64,
    /// Radius of link and rail visuals (mm).
    pub visual_radius: f64,
}

impl Default for UrdfOptions {
    fn default() -> Self {
        Self { link_mass: 0.005, link_inertia: 1e-7, visual_radius: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Closure {
    pub parent: String,
    pub child: String,
    /// Anchor in the parent link frame (m).
    pub parent_point: [f64; 3],
    /// Anchor in the child link frame (m).
    pub child_point: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MimicGroup {
    pub driver: String,
    pub followers: Vec<String>,
    pub multiplier: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub closures: Vec<Closure>,
    pub mimic_groups: Vec<MimicGroup>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UrdfOutput {
    pub urdf: String,
    pub sidecar: Sidecar,
}

impl UrdfOutput {
    pub fn sidecar_json(&self) -> String {
        serde_json::to_string_pretty(&self.sidecar).expect("sidecar serializes")
    }
}

pub fn rail_joint_name(finger: usize, rail: usize) -> String {
    format!("f{finger}_rail{}_joint", rail + 1)
}

fn num(v: f64) -> String {
    let s = format!("{:.6}", v);
    if s == "-0.000000" { "0.000000".into() } else { s }
}

fn vec3(p: Point3) -> String {
    format!("{} {} {}", num(p.x), num(p.y), num(p.z))
}

fn rounded(p: Point3) -> [f64; 3] {
    p.to_array().map(|v| num(v).parse().expect("formatted number"))
}

/// Builds the hand (validating topology) and generates its description.
pub fn generate(params: &HandParams, topology: &CouplingTopology, opts: &UrdfOptions) -> Result<UrdfOutput, HandError> {
    let hand = Hand::new(params.clone(), topology.clone())?;
    Ok(generate_for(&hand, opts))
}

pub fn generate_for(hand: &Hand, opts: &UrdfOptions) -> UrdfOutput {
    let mut links = String::new();
    let mut joints = String::new();
    let mut closures = Vec::new();
    let n = hand.n_fingers();

    // follower joint -> driver joint
    let mut mimic_of = vec![None; 3 * n];
    let mut mimic_groups = Vec::new();
    for members in &hand.topology.actuator_to_links {
        let mut names = members.iter().map(|&l| (l, rail_joint_name(l % n, l / n)));
        let Some((_, driver)) = names.next() else { continue };
        let followers: Vec<String> = names
            .map(|(l, name)| {
                mimic_of[l] = Some(driver.clone());
                name
            })
            .collect();
        mimic_groups.push(MimicGroup { driver, followers, multiplier: 1.0 });
    }

    push_link(&mut links, "base_link", None, opts);
    for k in 0..n {
        let g = &hand.params.fingers[k];
        let frame = hand.frames.frames[k];
        let to_hand_dir = |v: Point3| v.rotated_z(frame.yaw);
        let ee = fk_raw(g, [0.0; 3]).expect("validated geometry reaches zero actuation");
        let attach: Vec<Point3> = (0..3)
            .map(|i| {
                let (s, c) = g.rail_angles[i].sin_cos();
                ee + Point3::new(g.ee_radius * c, g.ee_radius * s, 0.0)
            })
            .collect();
        let carriages: Vec<Point3> = (0..3)
            .map(|i| {
                let (x, y) = g.rail_axis_xy(i);
                Point3::new(x, y, 0.0)
            })
            .collect();

        for i in 0..3 {
            let rail = format!("f{k}_rail{}", i + 1);
            let link = format!("f{k}_link{}", i + 1);
            let uni = format!("f{k}_link{}_u", i + 1);
            let dir = to_hand_dir(attach[i] - carriages[i]);
            let (ax1, ax2) = universal_axes(dir);

            push_link(&mut links, &rail, Some(Visual::Box(opts.visual_radius * 2.0 * MM)), opts);
            push_link(&mut links, &uni, None, opts);
            push_link(&mut links, &link, Some(Visual::Rod(dir * MM, opts.visual_radius * MM)), opts);

            let origin = frame.to_hand(carriages[i]) * MM;
            let mut j = format!(
                "  <joint name=\"{}\" type=\"prismatic\">\n    <parent link=\"base_link\"/>\n    <child link=\"{rail}\"/>\n    <origin xyz=\"{}\" rpy=\"0 0 0\"/>\n    <axis xyz=\"0 0 1\"/>\n    <limit lower=\"0.000000\" upper=\"{}\" effort=\"10.000000\" velocity=\"0.100000\"/>\n",
                rail_joint_name(k, i),
                vec3(origin),
                num(g.stroke * MM)
            );
            if let Some(driver) = &mimic_of[i * n + k] {
                let _ = writeln!(j, "    <mimic joint=\"{driver}\" multiplier=\"1.000000\" offset=\"0.000000\"/>");
            }
            j.push_str("  </joint>\n");
            joints.push_str(&j);
            push_revolute(&mut joints, &format!("f{k}_link{}_joint_a", i + 1), &rail, &uni, Point3::ORIGIN, ax1);
            push_revolute(&mut joints, &format!("f{k}_link{}_joint_b", i + 1), &uni, &link, Point3::ORIGIN, ax2);
        }

        let ee_name = format!("ee_{k}");
        let ee_uni = format!("ee_{k}_u");
        let d1 = to_hand_dir(attach[0] - carriages[0]);
        let (ax1, ax2) = universal_axes(d1);
        push_link(&mut links, &ee_uni, None, opts);
        push_link(&mut links, &ee_name, Some(Visual::Box(g.ee_radius * 2.0 * MM)), opts);
        push_revolute(&mut joints, &format!("ee_{k}_joint_a"), &format!("f{k}_link1"), &ee_uni, d1 * MM, ax1);
        push_revolute(&mut joints, &format!("ee_{k}_joint_b"), &ee_uni, &ee_name, Point3::ORIGIN, ax2);

        let tip = format!("f{k}_tip");
        push_link(&mut links, &tip, Some(Visual::Sphere(opts.visual_radius * 2.0 * MM)), opts);
        let tip_offset = to_hand_dir(ee + hand.params.fingertip_offset[k] - attach[0]) * MM;
        let _ = write!(
            joints,
            "  <joint name=\"f{k}_tip_joint\" type=\"fixed\">\n    <parent link=\"{ee_name}\"/>\n    <child link=\"{tip}\"/>\n    <origin xyz=\"{}\" rpy=\"0 0 0\"/>\n  </joint>\n",
            vec3(tip_offset)
        );

        for i in 1..3 {
            closures.push(Closure {
                parent: format!("f{k}_link{}", i + 1),
                child: ee_name.clone(),
                parent_point: rounded(to_hand_dir(attach[i] - carriages[i]) * MM),
                child_point: rounded(to_hand_dir(attach[i] - attach[0]) * MM),
            });
        }
    }

    let mut urdf = String::from("<?xml version=\"1.0\"?>\n<robot name=\"deltahand\">\n");
    urdf.push_str(&links);
    urdf.push_str(&joints);
    urdf.push_str("</robot>\n");
    UrdfOutput { urdf, sidecar: Sidecar { closures, mimic_groups } }
}

/// Two orthonormal axes perpendicular to a link direction.
fn universal_axes(dir: Point3) -> (Point3, Point3) {
    let d = dir.normalized().unwrap_or(Point3::new(0.0, 0.0, -1.0));
    let a = Point3::new(0.0, 0.0, 1.0).cross(&d).normalized().unwrap_or(Point3::new(1.0, 0.0, 0.0));
    (a, d.cross(&a))
}

enum Visual {
    Box(f64),
    Sphere(f64),
    /// Cylinder from the frame origin along the vector.
    Rod(Point3, f64),
}

fn push_link(out: &mut String, name: &str, visual: Option<Visual>, opts: &UrdfOptions) {
    let _ = writeln!(out, "  <link name=\"{name}\">");
    let _ = write!(
        out,
        "    <inertial>\n      <mass value=\"{}\"/>\n      <inertia ixx=\"{i}\" ixy=\"0\" ixz=\"0\" iyy=\"{i}\" iyz=\"0\" izz=\"{i}\"/>\n    </inertial>\n",
        num(opts.link_mass),
        i = format!("{:e}", opts.link_inertia)
    );
    if let Some(v) = visual {
        let zero = "0.000000 0.000000 0.000000".to_string();
        let (xyz, rpy, geometry) = match v {
            Visual::Box(s) => (zero.clone(), zero, format!("<box size=\"{} {} {}\"/>", num(s), num(s), num(s))),
            Visual::Sphere(r) => (zero.clone(), zero, format!("<sphere radius=\"{}\"/>", num(r))),
            Visual::Rod(v, r) => {
                let u = v.normalized().unwrap_or(Point3::new(0.0, 0.0, 1.0));
                // cylinder axis is local z: pitch then yaw
                let rpy = Point3::new(0.0, u.z.clamp(-1.0, 1.0).acos(), u.y.atan2(u.x));
                (vec3(v * 0.5), vec3(rpy), format!("<cylinder radius=\"{}\" length=\"{}\"/>", num(r), num(v.norm())))
            }
        };
        let _ = write!(
            out,
            "    <visual>\n      <origin xyz=\"{xyz}\" rpy=\"{rpy}\"/>\n      <geometry>{geometry}</geometry>\n    </visual>\n"
        );
    }
    out.push_str("  </link>\n");
}

fn push_revolute(out: &mut String, name: &str, parent: &str, child: &str, origin_m: Point3, axis: Point3) {
    let _ = write!(
        out,
        "  <joint name=\"{name}\" type=\"revolute\">\n    <parent link=\"{parent}\"/>\n    <child link=\"{child}\"/>\n    <origin xyz=\"{}\" rpy=\"0 0 0\"/>\n    <axis xyz=\"{}\"/>\n    <limit lower=\"-3.141593\" upper=\"3.141593\" effort=\"1.000000\" velocity=\"10.000000\"/>\n  </joint>\n",
        vec3(origin_m),
        vec3(axis)
    );
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{HashMap, HashSet};

    fn parse_counts(xml: &str) -> (usize, usize, usize, usize) {
        let doc = roxmltree::Document::parse(xml).unwrap();
        let root = doc.root_element();
        let links: HashSet<&str> = root.children().filter(|n| n.has_tag_name("link")).map(|n| n.attribute("name").unwrap()).collect();
        let mut parent_of: HashMap<&str, &str> = HashMap::new();
        let (mut prismatic, mut revolute, mut fixed) = (0, 0, 0);
        for j in root.children().filter(|n| n.has_tag_name("joint")) {
            match j.attribute("type").unwrap() {
                "prismatic" => prismatic += 1,
                "revolute" => revolute += 1,
                "fixed" => fixed += 1,
                t => panic!("unexpected joint type {t}"),
            }
            let p = j.children().find(|c| c.has_tag_name("parent")).unwrap().attribute("link").unwrap();
            let c = j.children().find(|c| c.has_tag_name("child")).unwrap().attribute("link").unwrap();
            assert!(links.contains(p) && links.contains(c));
            assert!(parent_of.insert(c, p).is_none(), "{c} has two parents");
        }
        // every link walks up to base_link without revisiting
        for &l in &links {
            let mut cur = l;
            let mut seen = HashSet::new();
            while let Some(&p) = parent_of.get(cur) {
                assert!(seen.insert(cur), "cycle at {cur}");
                cur = p;
            }
            assert_eq!(cur, "base_link");
        }
        (links.len(), prismatic, revolute, fixed)
    }

    #[test]
    fn reference_hand_counts_and_limits() {
        let params = HandParams::reference();
        let out = generate(&params, &CouplingTopology::independent(4), &UrdfOptions::default()).unwrap();
        let (links, prismatic, revolute, fixed) = parse_counts(&out.urdf);
        assert_eq!((prismatic, revolute, fixed), (12, 32, 4));
        assert_eq!(links, 1 + 4 * 12);
        assert_eq!(out.urdf.matches("upper=\"0.020000\"").count(), 12);
        assert_eq!(out.sidecar.closures.len(), 8);
        assert_eq!(out.sidecar.mimic_groups.len(), 12);
        assert!(out.sidecar.mimic_groups.iter().all(|g| g.followers.is_empty()));
        for name in ["f0_rail1", "f3_link3", "ee_2", "f1_rail2_joint"] {
            assert!(out.urdf.contains(&format!("\"{name}\"")), "{name}");
        }
    }

    #[test]
    fn single_finger() {
        let params = HandParams::symmetric(1, 20.0, crate::kinematics::DeltaGeometry::reference());
        let out = generate(&params, &CouplingTopology::independent(1), &UrdfOptions::default()).unwrap();
        let (_, prismatic, _, _) = parse_counts(&out.urdf);
        assert_eq!(prismatic, 3);
        assert_eq!(out.sidecar.closures.len(), 2);
    }

    #[test]
    fn center_coupling_mimics() {
        let out = generate(&HandParams::reference(), &CouplingTopology::center_coupled(4), &UrdfOptions::default()).unwrap();
        let groups = &out.sidecar.mimic_groups;
        assert_eq!(groups.len(), 9);
        assert_eq!(groups.iter().filter(|g| g.followers.len() == 3).count(), 1);
        assert_eq!(groups.iter().filter(|g| g.followers.is_empty()).count(), 8);
        assert_eq!(groups[0].driver, "f0_rail1_joint");
        assert_eq!(out.urdf.matches("<mimic joint=\"f0_rail1_joint\"").count(), 3);
        parse_counts(&out.urdf);
    }

    #[test]
    fn closure_anchors_coincide_at_zero() {
        let hand = Hand::new(HandParams::reference(), CouplingTopology::independent(4)).unwrap();
        let out = generate_for(&hand, &UrdfOptions::default());
        // anchors are consistent: link vectors have the link length
        for c in &out.sidecar.closures {
            let p = Point3::from(c.parent_point);
            assert!((p.norm() - 0.045).abs() < 2e-6, "{}", p.norm());
        }
    }

    #[test]
    fn regeneration_is_byte_identical() {
        let p = HandParams::reference();
        let t = CouplingTopology::preset("5", 4).unwrap();
        let a = generate(&p, &t, &UrdfOptions::default()).unwrap();
        let b = generate(&p, &t, &UrdfOptions::default()).unwrap();
        assert_eq!(a.urdf, b.urdf);
        assert_eq!(a.sidecar_json(), b.sidecar_json());
    }

    #[test]
    fn invalid_topology_propagates() {
        let bad = CouplingTopology::from_assignment(1, vec![0; 11]);
        assert!(generate(&HandParams::reference(), &bad, &UrdfOptions::default()).is_err());
    }
}
