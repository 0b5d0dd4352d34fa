use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use deltahands::characterize::{write_force_log, write_pose_log, Direction, ForceRow, PoseRow};
use deltahands::kinematics::{forward_kinematics, ActuationTriple, DeltaGeometry};
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_deltahands"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn json_of(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn fk_home_is_a_symmetric_square() {
    let v = json_of(&run(&["fk", "--actuation", "home"]));
    let tips = v["fingertips"].as_array().unwrap();
    assert_eq!(tips.len(), 4);
    let xy: Vec<(f64, f64, f64)> =
        tips.iter().map(|t| (t["x"].as_f64().unwrap(), t["y"].as_f64().unwrap(), t["z"].as_f64().unwrap())).collect();
    let r0 = xy[0].0.hypot(xy[0].1);
    for (k, &(x, y, z)) in xy.iter().enumerate() {
        assert!((x.hypot(y) - r0).abs() < 1e-9);
        assert!((z - xy[0].2).abs() < 1e-9);
        let ang = y.atan2(x).to_degrees().rem_euclid(360.0);
        assert!((ang - 90.0 * k as f64).abs() < 1e-6 || (ang - 360.0).abs() < 1e-6);
    }
}

#[test]
fn synergy_nine_prints_center_average_projection() {
    let v = json_of(&run(&["synergy", "--topology", "9"]));
    let p: Vec<Vec<f64>> = serde_json::from_value(v["projection"].clone()).unwrap();
    assert_eq!(p.len(), 9);
    assert_eq!(p[0], [vec![0.25; 4], vec![0.0; 8]].concat());
    for (i, row) in p.iter().enumerate().skip(1) {
        for (j, &x) in row.iter().enumerate() {
            assert_eq!(x, if j == i + 3 { 1.0 } else { 0.0 });
        }
    }
    assert_eq!(v["validation"]["max_abs_pc_minus_identity"], 0.0);
    let v = json_of(&run(&["synergy", "--topology", "5"]));
    assert_eq!(v["n_reduced"], 5);
    assert_eq!(run(&["synergy", "--topology", "7"]).status.code(), Some(1));
}

#[test]
fn exit_codes_and_help() {
    let out = run(&["fk", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(run(&[]).status.code(), Some(1));
    for sub in [
        vec!["fk"],
        vec!["ik"],
        vec!["workspace"],
        vec!["synergy"],
        vec!["grasp"],
        vec!["urdf"],
        vec!["characterize"],
        vec!["characterize", "mae"],
        vec!["characterize", "force"],
        vec!["characterize", "sweep"],
        vec!["teleop-replay"],
        vec!["serve"],
    ] {
        let mut args = sub.clone();
        args.push("--help");
        let out = run(&args);
        assert_eq!(out.status.code(), Some(0), "{sub:?}");
        assert!(String::from_utf8_lossy(&out.stdout).contains("Usage"));
    }
    assert_eq!(run(&["fk", "--hand", "/does/not/exist.json"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"schema_version": 1, "params": 3}"#).unwrap();
    assert_eq!(run(&["fk", "--hand", path_str(&bad)]).status.code(), Some(1));
    assert_eq!(run(&["fk", "--actuation", "1,2"]).status.code(), Some(1));
    assert_eq!(run(&["fk", "--actuation", "30,0,0,0,0,0,0,0,0"]).status.code(), Some(1));
    assert_eq!(run(&["fk", "--out", "/does/not/exist/out.json"]).status.code(), Some(2));
}

#[test]
fn ik_inverts_fk_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let fk = dir.path().join("fk.json");
    let out = run(&["fk", "--actuation", "4,1,2,3,4,5,6,7,8", "--out", path_str(&fk)]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&fk).unwrap()).unwrap();
    let targets = dir.path().join("targets.json");
    std::fs::write(&targets, serde_json::to_string(&serde_json::json!({ "targets": v["fingertips"] })).unwrap()).unwrap();
    let ik = json_of(&run(&["ik", "--targets", path_str(&targets)]));
    let a: Vec<f64> = serde_json::from_value(ik["reduced_actuation"].clone()).unwrap();
    for (got, want) in a.iter().zip([4.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]) {
        assert!((got - want).abs() < 1e-9);
    }
}

#[test]
fn workspace_json_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("ws.csv");
    let v = json_of(&run(&["workspace", "--grid", "3", "--csv", path_str(&csv)]));
    assert_eq!(v["fingers"].as_array().unwrap().len(), 4);
    let ext = &v["extents"];
    assert!(ext["x"].as_f64().unwrap() > 50.0);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("finger,a1,a2,a3,reachable,x,y,z\n"));
    assert_eq!(text.lines().count(), 1 + 4 * 27);
}

#[test]
fn grasp_report_is_thread_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let obj = dir.path().join("cyl.json");
    std::fs::write(&obj, r#"{"shape": "cylinder", "radius": 15.0, "height": 60.0}"#).unwrap();
    let mut outputs = Vec::new();
    for threads in ["1", "2"] {
        let rep = dir.path().join(format!("rep{threads}"));
        let out = run(&[
            "grasp", "--object", path_str(&obj), "--samples", "80", "--seed", "7", "--threads", threads, "--out", path_str(&rep),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        outputs.push((
            std::fs::read(rep.join("aggregate.json")).unwrap(),
            std::fs::read(rep.join("samples.csv")).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
    let agg: Value = serde_json::from_slice(&outputs[0].0).unwrap();
    assert_eq!(agg["n_samples"], 80);
    let stdout = run(&["grasp", "--object", path_str(&obj), "--samples", "80", "--seed", "7", "--out", "-"]);
    assert_eq!(stdout.stdout, outputs[0].0);
    assert_eq!(run(&["grasp", "--object", "/nope.json"]).status.code(), Some(2));
}

#[test]
fn urdf_with_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let urdf = dir.path().join("hand.urdf");
    assert!(run(&["urdf", "--out", path_str(&urdf)]).status.success());
    let text = std::fs::read_to_string(&urdf).unwrap();
    let doc = roxmltree::Document::parse(&text).unwrap();
    assert_eq!(doc.descendants().filter(|n| n.has_tag_name("link")).count(), 49);
    let side: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("hand.sidecar.json")).unwrap()).unwrap();
    assert_eq!(side["closures"].as_array().unwrap().len(), 8);
    let again = run(&["urdf", "--out", "-"]);
    assert_eq!(again.stdout, text.as_bytes());
}

#[test]
fn characterize_pipelines() {
    let dir = tempfile::tempdir().unwrap();
    let geom = DeltaGeometry::reference();
    let mut rows = Vec::new();
    for a1 in [0.0, 10.0, 20.0] {
        for a2 in [0.0, 10.0, 20.0] {
            for a3 in [0.0, 10.0, 20.0] {
                let p = forward_kinematics(&geom, ActuationTriple::new(a1, a2, a3)).unwrap();
                rows.push(PoseRow { a1, a2, a3, x: p.x + 0.5, y: p.y, z: p.z, roll: 0.0, pitch: 0.0, yaw: 0.0 });
            }
        }
    }
    let log = dir.path().join("pose.csv");
    write_pose_log(&rows, std::fs::File::create(&log).unwrap()).unwrap();
    let errs = dir.path().join("errors.csv");
    let v = json_of(&run(&["characterize", "mae", "--in", path_str(&log), "--errors-csv", path_str(&errs)]));
    let mae: Vec<f64> = serde_json::from_value(v["mae_xyz"].clone()).unwrap();
    assert!((mae[0] - 0.5).abs() < 1e-9 && mae[1] < 1e-9 && mae[2] < 1e-9);
    assert_eq!(std::fs::read_to_string(&errs).unwrap().lines().count(), 28);

    let force = dir.path().join("soft.csv");
    let frows: Vec<ForceRow> = (0..10)
        .map(|i| ForceRow { direction: Direction::NegZ, a1: 0.0, a2: 0.0, a3: 0.0, advance: i as f64, force: 0.2 * i as f64 + 0.1 })
        .collect();
    write_force_log(&frows, std::fs::File::create(&force).unwrap()).unwrap();
    let v = json_of(&run(&["characterize", "force", "--in", path_str(&force)]));
    assert_eq!(v[0]["tag"], "soft");
    assert_eq!(v[0]["direction"], "-Z");
    assert!((v[0]["slope"].as_f64().unwrap() - 0.2).abs() < 1e-9);

    let v = json_of(&run(&["characterize", "sweep", "--grid", "3"]));
    assert_eq!(v.as_array().unwrap().len(), 9);
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "x,y\n1,2\n").unwrap();
    assert_eq!(run(&["characterize", "mae", "--in", path_str(&bad)]).status.code(), Some(1));
}

#[test]
fn teleop_replay_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let stream = dir.path().join("s.jsonl");
    let mut f = std::fs::File::create(&stream).unwrap();
    for i in 0..50 {
        let t = i as f64 * 0.02;
        let mut s = serde_json::to_value(deltahands::teleop::PoseSample::neutral()).unwrap();
        s["t"] = t.into();
        s["right_index"]["x"] = (60.0 - 20.0 * (t * 3.0).sin()).into();
        writeln!(f, "{s}").unwrap();
    }
    drop(f);
    let a = run(&["teleop-replay", "--stream", path_str(&stream), "--mapping", "polar"]);
    let b = run(&["teleop-replay", "--stream", path_str(&stream), "--mapping", "polar"]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(String::from_utf8(a.stdout).unwrap().lines().count(), 50);
    for m in ["direct", "principal"] {
        assert!(run(&["teleop-replay", "--stream", path_str(&stream), "--mapping", m]).status.success());
    }
    std::fs::write(&stream, "{\"t\": 0.0}\n").unwrap();
    assert_eq!(run(&["teleop-replay", "--stream", path_str(&stream)]).status.code(), Some(1));
}

#[test]
fn serve_answers_http() {
    let mut child = bin().args(["serve", "--port", "0"]).stderr(Stdio::piped()).spawn().unwrap();
    let mut line = String::new();
    BufReader::new(child.stderr.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().trim_start_matches("listening on http://").to_string();
    let mut s = TcpStream::connect(&addr).unwrap();
    write!(s, "GET /api/hand HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").unwrap();
    let mut resp = String::new();
    s.read_to_string(&mut resp).unwrap();
    child.kill().unwrap();
    let _ = child.wait();
    assert!(resp.starts_with("HTTP/1.1 200"), "{resp}");
    assert!(resp.contains("\"n_reduced\":9"));
}
