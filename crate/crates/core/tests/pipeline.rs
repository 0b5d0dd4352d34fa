use deltahands::config::HandConfig;
use deltahands::grasp::{sample_grasps, ObjectModel, SamplingConfig};
use deltahands::teleop::{Calibration, Mapping, PoseSample, RateLimit, Teleop};
use deltahands::urdf::{generate_for, UrdfOptions};

#[test]
fn default_config_roundtrips_and_builds() {
    let cfg = HandConfig::default();
    let back = HandConfig::from_json(&cfg.to_json_pretty()).unwrap();
    let hand = back.build().unwrap();
    assert_eq!(hand.n_fingers(), 4);
    let fk = hand.fk(&hand.home_reduced()).unwrap();
    let ik = hand.ik(&fk).unwrap();
    for (a, b) in ik.a_reduced.iter().zip(hand.home_reduced()) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn urdf_for_default_hand_parses() {
    let hand = HandConfig::default().build().unwrap();
    let out = generate_for(&hand, &UrdfOptions::default());
    let doc = roxmltree::Document::parse(&out.urdf).unwrap();
    let links = doc.descendants().filter(|n| n.has_tag_name("link")).count();
    assert_eq!(links, 1 + 12 * hand.n_fingers());
    let side: serde_json::Value = serde_json::from_str(&out.sidecar_json()).unwrap();
    assert_eq!(side["closures"].as_array().unwrap().len(), 2 * hand.n_fingers());
}

#[test]
fn small_grasp_study_is_reproducible() {
    let hand = HandConfig::default().build().unwrap();
    let object = ObjectModel::sphere(15.0).prepare().unwrap();
    let cfg = SamplingConfig { n_samples: 60, seed: 5, ..SamplingConfig::default() };
    let a = sample_grasps(&hand, &object, &cfg).unwrap();
    let b = sample_grasps(&hand, &object, &cfg).unwrap();
    let (mut ca, mut cb) = (Vec::new(), Vec::new());
    a.write_csv(&mut ca).unwrap();
    b.write_csv(&mut cb).unwrap();
    assert_eq!(ca, cb);
    assert_eq!(a.rows.len(), 60);
}

#[test]
fn neutral_stream_maps_inside_workspace() {
    let hand = HandConfig::default().build().unwrap();
    let teleop = Teleop::new(hand, Calibration::default()).unwrap();
    let stream: Vec<PoseSample> = (0..5).map(|i| PoseSample { t: i as f64 * 0.02, ..PoseSample::neutral() }).collect();
    let cmds = teleop.replay(&stream, &Mapping::Polar, RateLimit::default()).unwrap();
    assert_eq!(cmds.len(), 5);
    for c in &cmds {
        assert!(c.residual.iter().all(|r| r.is_finite()));
    }
}
