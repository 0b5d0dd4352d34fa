//! Independent oracles for wrench-space checks. Nothing here calls the hull or LP code.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type W6 = [f64; 6];

fn dot(a: &W6, b: &W6) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(mut u: W6) -> W6 {
    let n = dot(&u, &u).sqrt();
    u.iter_mut().for_each(|v| *v /= n);
    u
}

fn support(w: &[W6], u: &W6) -> f64 {
    w.iter().map(|x| dot(x, u)).fold(f64::NEG_INFINITY, f64::max)
}

fn random_unit(rng: &mut ChaCha8Rng) -> W6 {
    normalize(std::array::from_fn(|_| rng.sample(StandardNormal)))
}

/// Smoothed support `T ln sum exp(w_i·u / T)` and its gradient.
fn smooth_support(w: &[W6], u: &W6, temp: f64) -> (f64, W6) {
    let dots: Vec<f64> = w.iter().map(|x| dot(x, u)).collect();
    let m = dots.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = dots.iter().map(|d| ((d - m) / temp).exp()).collect();
    let z: f64 = weights.iter().sum();
    let mut g = [0.0; 6];
    for (x, wt) in w.iter().zip(&weights) {
        for k in 0..6 {
            g[k] += wt / z * x[k];
        }
    }
    (m + temp * z.ln(), g)
}

/// `min_u max_i w_i·u` over unit directions: the inscribed radius at the origin when it is
/// inside the hull, non-positive otherwise. Dense sampling, then annealed smooth descent on
/// the sphere from well separated low samples, each finished on the plane of its active set.
pub fn support_min(w: &[W6], n_dirs: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Vec<(f64, W6)> = Vec::with_capacity(n_dirs);
    for _ in 0..n_dirs {
        let u = random_unit(&mut rng);
        best.push((support(w, &u), u));
    }
    best.sort_by(|a, b| a.0.total_cmp(&b.0));
    // well separated low starts
    let mut starts: Vec<(f64, W6)> = Vec::new();
    for (h, u) in best {
        if starts.len() >= 200 {
            break;
        }
        if starts.iter().all(|(_, s)| dot(s, &u) < 0.9) {
            starts.push((h, u));
        }
    }
    let mut overall = f64::INFINITY;
    for (h0, mut u) in starts {
        overall = overall.min(h0);
        let mut temp = 0.02;
        while temp > 1e-8 {
            let mut step = 0.1;
            for _ in 0..60 {
                let (f, g) = smooth_support(w, &u, temp);
                let gu = dot(&g, &u);
                let tangent: W6 = std::array::from_fn(|k| g[k] - gu * u[k]);
                if dot(&tangent, &tangent).sqrt() < 1e-15 {
                    break;
                }
                loop {
                    let cand = normalize(std::array::from_fn(|k| u[k] - step * tangent[k]));
                    if smooth_support(w, &cand, temp).0 < f {
                        u = cand;
                        step *= 1.5;
                        break;
                    }
                    step *= 0.5;
                    if step < 1e-14 {
                        break;
                    }
                }
                if step < 1e-14 {
                    break;
                }
            }
            overall = overall.min(support(w, &u));
            temp *= 0.5;
        }
        if let Some(v) = plane_of_most_active(w, &u) {
            overall = overall.min(support(w, &v));
        }
    }
    overall
}

/// Unit normal of the hyperplane through the six wrenches most aligned with `u`.
fn plane_of_most_active(w: &[W6], u: &W6) -> Option<W6> {
    use nalgebra::{Matrix6, Vector6};
    if w.len() < 6 {
        return None;
    }
    let mut order: Vec<usize> = (0..w.len()).collect();
    order.sort_by(|&a, &b| dot(&w[b], u).total_cmp(&dot(&w[a], u)));
    let m = Matrix6::from_fn(|r, c| w[order[r]][c]);
    let n = m.try_inverse()? * Vector6::repeat(1.0);
    let n: W6 = std::array::from_fn(|k| n[k]);
    if !n.iter().all(|v| v.is_finite()) || dot(&n, u) <= 0.0 {
        return None;
    }
    Some(normalize(n))
}

/// Smallest facet offset by enumerating every 6-subset; `None` when the origin is not
/// strictly inside.
pub fn brute_force_facets(w: &[W6]) -> Option<f64> {
    use nalgebra::{Matrix6, Vector6};
    let n = w.len();
    let mut best = f64::INFINITY;
    let mut any_outside = false;
    let mut idx = [0usize; 6];
    fn rec(w: &[W6], start: usize, depth: usize, idx: &mut [usize; 6], best: &mut f64, outside: &mut bool) {
        if depth == 6 {
            let m = Matrix6::from_fn(|r, c| w[idx[r]][c]);
            let Some(inv) = m.try_inverse() else { return };
            // plane n·x = 1 through the six points
            let nrm = inv * Vector6::repeat(1.0);
            if !nrm.iter().all(|v| v.is_finite()) {
                return;
            }
            let above = w.iter().any(|x| Vector6::from_row_slice(x).dot(&nrm) > 1.0 + 1e-9);
            if !above {
                *best = best.min(1.0 / nrm.norm());
            }
            // plane with the origin on the far side: n·x = -1 side
            let below = w.iter().all(|x| Vector6::from_row_slice(x).dot(&nrm) >= 1.0 - 1e-9);
            if below {
                *outside = true;
            }
            return;
        }
        for i in start..w.len() {
            idx[depth] = i;
            rec(w, i + 1, depth + 1, idx, best, outside);
        }
    }
    if n < 7 {
        return None;
    }
    rec(w, 0, 0, &mut idx, &mut best, &mut any_outside);
    if any_outside || !best.is_finite() {
        None
    } else {
        Some(best)
    }
}
