mod common;

use deltahands::grasp::{evaluate, force_closure, q_lrw, ContactPoint, WrenchSet};
use deltahands::Point3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn contact(p: [f64; 3], n: [f64; 3], mu: f64, finger_index: usize) -> ContactPoint {
    ContactPoint {
        position: Point3::new(p[0], p[1], p[2]),
        normal: Point3::new(n[0], n[1], n[2]).normalized().unwrap(),
        mu,
        finger_index,
    }
}

fn tripod(mu: f64) -> Vec<ContactPoint> {
    (0..3)
        .map(|i| {
            let t = i as f64 * 2.0 * std::f64::consts::PI / 3.0;
            let p = [t.cos(), t.sin(), 0.3 * (i as f64 - 1.0)];
            contact(p, [-p[0], -p[1], -p[2]], mu, i)
        })
        .collect()
}

#[test]
fn q_matches_exhaustive_facets_on_random_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(91);
    let mut checked = 0;
    for _ in 0..12 {
        let k = rng.random_range(2..=3usize);
        let contacts: Vec<ContactPoint> = (0..k)
            .map(|i| {
                let p = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                let j = [rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2)];
                contact(p, [-p[0] + j[0], -p[1] + j[1], -p[2] + j[2]], rng.random_range(0.3..0.9), i)
            })
            .collect();
        let ws = WrenchSet::new(&contacts, 6, Point3::ORIGIN, 1.0).unwrap();
        let (closure, q) = evaluate(&ws);
        match common::brute_force_facets(&ws.wrenches) {
            Some(bf) if bf > 1e-9 => {
                assert!(closure);
                assert!((q - bf).abs() <= 1e-9 * bf.max(1.0), "q {q} vs facets {bf}");
                checked += 1;
            }
            _ => assert!(!closure),
        }
    }
    assert!(checked > 0);
}

#[test]
fn tripod_agrees_with_both_oracles() {
    let ws = WrenchSet::new(&tripod(0.6), 8, Point3::ORIGIN, 1.0).unwrap();
    let q = q_lrw(&ws).unwrap();
    let bf = common::brute_force_facets(&ws.wrenches).unwrap();
    let h = common::support_min(&ws.wrenches, 50_000, 3);
    assert!((q - bf).abs() < 1e-9);
    assert!((q - h).abs() / q < 0.01);
}

#[test]
fn antipodal_pair_lacks_torsion_about_its_axis() {
    let c = vec![contact([1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], 0.5, 0), contact([-1.0, 0.0, 0.0], [1.0, 0.0, 0.0], 0.5, 1)];
    let ws = WrenchSet::new(&c, 8, Point3::ORIGIN, 1.0).unwrap();
    assert!(!force_closure(&ws));
    assert!(common::brute_force_facets(&ws.wrenches).is_none());
    assert!(common::support_min(&ws.wrenches, 20_000, 1) <= 1e-9);
}

#[test]
fn frictionless_equator_is_not_closure() {
    let c: Vec<ContactPoint> = (0..4)
        .map(|i| {
            let t = i as f64 * std::f64::consts::FRAC_PI_2;
            contact([t.cos(), t.sin(), 0.0], [-t.cos(), -t.sin(), 0.0], 0.0, i)
        })
        .collect();
    let ws = WrenchSet::new(&c, 8, Point3::ORIGIN, 1.0).unwrap();
    assert!(!force_closure(&ws));
    assert!(common::support_min(&ws.wrenches, 20_000, 2) <= 1e-9);
}
