//! Convex hulls in arbitrary (small) dimension.
//!
//! Incremental quickhull over simplicial facets. Each facet stores an outward unit normal
//! `n` and offset `b` so that the hull is `{x : n·x <= b}` for every facet. Points lying
//! within a relative tolerance of a facet plane are treated as inside, which keeps the
//! construction stable for inputs with many coplanar points (friction-cone wrenches, lattice
//! workspaces). Coplanar regions therefore come out as several simplices sharing a plane.
//!
//! Used in 3D for workspace volumes and object meshes, and in 6D for grasp wrench spaces.

use std::collections::HashMap;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HullError {
    #[error("need at least {needed} points for a {needed}-vertex simplex, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("points span only {rank} of {dim} dimensions")]
    Degenerate { rank: usize, dim: usize },
    #[error("non-finite coordinate in hull input")]
    NonFinite,
}

/// A hull facet: `D` vertex indices into the input, unit outward normal and plane offset.
#[derive(Debug, Clone, PartialEq)]
pub struct Facet<const D: usize> {
    pub vertices: [usize; D],
    pub normal: [f64; D],
    pub offset: f64,
}

impl<const D: usize> Facet<D> {
    /// Signed distance of `x` above the facet plane (positive outside).
    pub fn height(&self, x: &[f64; D]) -> f64 {
        dot(&self.normal, x) - self.offset
    }
}

#[derive(Debug, Clone)]
pub struct ConvexHull<const D: usize> {
    points: Vec<[f64; D]>,
    facets: Vec<Facet<D>>,
    interior: [f64; D],
    eps: f64,
}

struct WorkFacet<const D: usize> {
    vertices: [usize; D],
    neighbors: [usize; D],
    normal: [f64; D],
    offset: f64,
    outside: Vec<usize>,
    alive: bool,
}

impl<const D: usize> WorkFacet<D> {
    fn height(&self, x: &[f64; D]) -> f64 {
        dot(&self.normal, x) - self.offset
    }
}

fn dot<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sub<const D: usize>(a: &[f64; D], b: &[f64; D]) -> [f64; D] {
    std::array::from_fn(|i| a[i] - b[i])
}

/// Unit normal of the hyperplane through `verts`, oriented away from `interior`.
fn hyperplane<const D: usize>(
    points: &[[f64; D]],
    verts: &[usize; D],
    interior: &[f64; D],
) -> Option<([f64; D], f64)> {
    let origin = &points[verts[0]];
    let mut rows: Vec<[f64; D]> = verts[1..].iter().map(|&v| sub(&points[v], origin)).collect();
    let scale = rows
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return None;
    }
    let mut cols: [usize; D] = std::array::from_fn(|i| i);
    let n_rows = D - 1;
    // Gaussian elimination with full pivoting on the (D-1) x D edge matrix.
    for r in 0..n_rows {
        let (mut bi, mut bj, mut best) = (r, r, 0.0);
        for (i, row) in rows.iter().enumerate().skip(r) {
            for j in r..D {
                let v = row[cols[j]].abs();
                if v > best {
                    best = v;
                    bi = i;
                    bj = j;
                }
            }
        }
        if best <= 1e-13 * scale {
            return None;
        }
        rows.swap(r, bi);
        cols.swap(r, bj);
        let pivot = rows[r][cols[r]];
        for i in (r + 1)..n_rows {
            let f = rows[i][cols[r]] / pivot;
            if f != 0.0 {
                for j in r..D {
                    let c = cols[j];
                    rows[i][c] -= f * rows[r][c];
                }
            }
        }
    }
    // One free column (the last in pivot order); back-substitute.
    let mut x = [0.0; D];
    x[cols[D - 1]] = 1.0;
    for r in (0..n_rows).rev() {
        let mut acc = 0.0;
        for j in (r + 1)..D {
            acc += rows[r][cols[j]] * x[cols[j]];
        }
        x[cols[r]] = -acc / rows[r][cols[r]];
    }
    let norm = dot(&x, &x).sqrt();
    if !norm.is_finite() || norm == 0.0 {
        return None;
    }
    let mut normal = x.map(|v| v / norm);
    let mut offset = dot(&normal, origin);
    if dot(&normal, interior) - offset > 0.0 {
        normal = normal.map(|v| -v);
        offset = -offset;
    }
    Some((normal, offset))
}

/// Determinant of a D x D matrix given as rows.
pub(crate) fn determinant<const D: usize>(mut m: [[f64; D]; D]) -> f64 {
    let mut det = 1.0;
    for c in 0..D {
        let p = (c..D)
            .max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs()))
            .unwrap_or(c);
        if m[p][c] == 0.0 {
            return 0.0;
        }
        if p != c {
            m.swap(p, c);
            det = -det;
        }
        det *= m[c][c];
        for r in (c + 1)..D {
            let f = m[r][c] / m[c][c];
            for k in c..D {
                m[r][k] -= f * m[c][k];
            }
        }
    }
    det
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

impl<const D: usize> ConvexHull<D> {
    pub fn new(points: &[[f64; D]]) -> Result<Self, HullError> {
        if D < 2 {
            return Err(HullError::Degenerate { rank: 0, dim: D });
        }
        if points.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(HullError::NonFinite);
        }
        if points.len() < D + 1 {
            return Err(HullError::TooFewPoints { needed: D + 1, got: points.len() });
        }
        let scale = points
            .iter()
            .flat_map(|p| p.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(1e-300);
        let eps = 1e-9 * scale;
        let simplex = initial_simplex(points, eps)?;

        let mut interior = [0.0; D];
        for &v in &simplex {
            for (acc, c) in interior.iter_mut().zip(&points[v]) {
                *acc += c / (D + 1) as f64;
            }
        }

        let mut facets: Vec<WorkFacet<D>> = Vec::with_capacity(4 * (D + 1));
        for omit in 0..=D {
            let mut vertices = [0usize; D];
            let mut neighbors = [0usize; D];
            let mut t = 0;
            for (s, &v) in simplex.iter().enumerate() {
                if s != omit {
                    vertices[t] = v;
                    // the facet across the ridge opposite simplex[s] omits s
                    neighbors[t] = s;
                    t += 1;
                }
            }
            let (normal, offset) = hyperplane(points, &vertices, &interior)
                .ok_or(HullError::Degenerate { rank: D - 1, dim: D })?;
            facets.push(WorkFacet {
                vertices,
                neighbors,
                normal,
                offset,
                outside: Vec::new(),
                alive: true,
            });
        }

        let in_simplex = |i: usize| simplex.contains(&i);
        for (i, p) in points.iter().enumerate() {
            if in_simplex(i) {
                continue;
            }
            let all = 0..facets.len();
            assign_outside(&mut facets, all, i, p, eps);
        }

        let mut stack: Vec<usize> = (0..facets.len())
            .filter(|&f| !facets[f].outside.is_empty())
            .collect();
        let mut vis_stamp: Vec<u32> = vec![0; facets.len()];
        let mut vis_value: Vec<bool> = vec![false; facets.len()];
        let mut generation = 0u32;

        while let Some(fi) = stack.pop() {
            if !facets[fi].alive || facets[fi].outside.is_empty() {
                continue;
            }
            let apex = {
                let f = &facets[fi];
                *f.outside
                    .iter()
                    .max_by(|&&a, &&b| f.height(&points[a]).total_cmp(&f.height(&points[b])))
                    .expect("non-empty outside set")
            };
            let p = &points[apex];

            generation += 1;
            vis_stamp.resize(facets.len(), 0);
            vis_value.resize(facets.len(), false);
            let mut visible = vec![fi];
            vis_stamp[fi] = generation;
            vis_value[fi] = true;
            let mut horizon: Vec<(usize, usize, usize)> = Vec::new();
            let mut k = 0;
            while k < visible.len() {
                let v = visible[k];
                k += 1;
                for t in 0..D {
                    let nb = facets[v].neighbors[t];
                    if vis_stamp[nb] != generation {
                        vis_stamp[nb] = generation;
                        vis_value[nb] = facets[nb].height(p) > eps;
                        if vis_value[nb] {
                            visible.push(nb);
                        }
                    }
                    if !vis_value[nb] {
                        horizon.push((v, t, nb));
                    }
                }
            }

            // Compute all cone facets first so a numerically degenerate apex can be dropped
            // without touching the structure.
            let mut planned = Vec::with_capacity(horizon.len());
            let mut degenerate = false;
            for &(v, t, nb) in &horizon {
                let mut vertices = facets[v].vertices;
                vertices[t] = apex;
                match hyperplane(points, &vertices, &interior) {
                    Some((normal, offset)) => planned.push((vertices, t, nb, v, normal, offset)),
                    None => {
                        degenerate = true;
                        break;
                    }
                }
            }
            if degenerate {
                facets[fi].outside.retain(|&q| q != apex);
                stack.push(fi);
                continue;
            }

            let first_new = facets.len();
            let mut ridges: HashMap<Vec<usize>, (usize, usize)> = HashMap::new();
            for (vertices, t, nb, v, normal, offset) in planned {
                let id = facets.len();
                let mut neighbors = [usize::MAX; D];
                neighbors[t] = nb;
                if let Some(slot) = facets[nb].neighbors.iter().position(|&x| x == v) {
                    facets[nb].neighbors[slot] = id;
                }
                facets.push(WorkFacet {
                    vertices,
                    neighbors,
                    normal,
                    offset,
                    outside: Vec::new(),
                    alive: true,
                });
                for u in 0..D {
                    if u == t {
                        continue;
                    }
                    let mut key: Vec<usize> = vertices
                        .iter()
                        .enumerate()
                        .filter(|&(i, _)| i != u)
                        .map(|(_, &x)| x)
                        .collect();
                    key.sort_unstable();
                    match ridges.remove(&key) {
                        Some((other, pos)) => {
                            facets[id].neighbors[u] = other;
                            facets[other].neighbors[pos] = id;
                        }
                        None => {
                            ridges.insert(key, (id, u));
                        }
                    }
                }
            }

            let new_range = first_new..facets.len();
            for &v in &visible {
                facets[v].alive = false;
                let orphans = std::mem::take(&mut facets[v].outside);
                for q in orphans {
                    if q != apex {
                        assign_outside(&mut facets, new_range.clone(), q, &points[q], eps);
                    }
                }
            }
            for f in new_range {
                if !facets[f].outside.is_empty() {
                    stack.push(f);
                }
            }
        }

        let facets = facets
            .into_iter()
            .filter(|f| f.alive)
            .map(|f| Facet { vertices: f.vertices, normal: f.normal, offset: f.offset })
            .collect();
        Ok(Self { points: points.to_vec(), facets, interior, eps })
    }

    pub fn facets(&self) -> &[Facet<D>] {
        &self.facets
    }

    pub fn points(&self) -> &[[f64; D]] {
        &self.points
    }

    /// A point strictly inside the hull (centroid of the seed simplex).
    pub fn interior_point(&self) -> [f64; D] {
        self.interior
    }

    /// Indices of input points that are hull vertices, sorted.
    pub fn vertex_indices(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.facets.iter().flat_map(|f| f.vertices).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn volume(&self) -> f64 {
        let c = self.interior;
        let total: f64 = self
            .facets
            .iter()
            .map(|f| {
                let m: [[f64; D]; D] = std::array::from_fn(|i| sub(&self.points[f.vertices[i]], &c));
                determinant(m).abs()
            })
            .sum();
        total / factorial(D)
    }

    /// Largest signed facet height of `x`: negative inside, positive outside.
    pub fn max_height(&self, x: &[f64; D]) -> f64 {
        self.facets
            .iter()
            .map(|f| f.height(x))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn contains(&self, x: &[f64; D], tol: f64) -> bool {
        self.max_height(x) <= tol
    }

    /// Distance from an interior point `x` to the nearest facet plane; negative when `x` is
    /// outside. For the origin this is the radius of the largest origin-centred ball in the hull.
    pub fn inscribed_radius_at(&self, x: &[f64; D]) -> f64 {
        -self.max_height(x)
    }

    pub fn tolerance(&self) -> f64 {
        self.eps
    }
}

fn assign_outside<const D: usize>(
    facets: &mut [WorkFacet<D>],
    candidates: std::ops::Range<usize>,
    idx: usize,
    p: &[f64; D],
    eps: f64,
) {
    let mut best: Option<(usize, f64)> = None;
    for f in candidates {
        if !facets[f].alive {
            continue;
        }
        let h = facets[f].height(p);
        if h > eps && best.is_none_or(|(_, bh)| h > bh) {
            best = Some((f, h));
        }
    }
    if let Some((f, _)) = best {
        facets[f].outside.push(idx);
    }
}

fn initial_simplex<const D: usize>(points: &[[f64; D]], eps: f64) -> Result<Vec<usize>, HullError> {
    // Widest pair along a coordinate axis.
    let (mut lo, mut hi, mut spread) = (0, 0, -1.0);
    for axis in 0..D {
        let (imin, _) = points
            .iter()
            .enumerate()
            .min_by(|a, b| a.1[axis].total_cmp(&b.1[axis]))
            .expect("non-empty");
        let (imax, _) = points
            .iter()
            .enumerate()
            .max_by(|a, b| a.1[axis].total_cmp(&b.1[axis]))
            .expect("non-empty");
        let s = points[imax][axis] - points[imin][axis];
        if s > spread {
            spread = s;
            lo = imin;
            hi = imax;
        }
    }
    if spread <= eps {
        return Err(HullError::Degenerate { rank: 0, dim: D });
    }
    let mut simplex = vec![lo, hi];
    let origin = points[lo];
    let mut basis: Vec<[f64; D]> = Vec::with_capacity(D);
    let first = sub(&points[hi], &origin);
    let n = dot(&first, &first).sqrt();
    basis.push(first.map(|v| v / n));

    while simplex.len() < D + 1 {
        let mut best: Option<(usize, f64, [f64; D])> = None;
        for (i, p) in points.iter().enumerate() {
            let mut r = sub(p, &origin);
            for b in &basis {
                let c = dot(&r, b);
                for (ri, bi) in r.iter_mut().zip(b) {
                    *ri -= c * bi;
                }
            }
            let d = dot(&r, &r).sqrt();
            if best.as_ref().is_none_or(|(_, bd, _)| d > *bd) {
                best = Some((i, d, r));
            }
        }
        let (i, d, r) = best.expect("non-empty");
        if d <= eps {
            return Err(HullError::Degenerate { rank: simplex.len() - 1, dim: D });
        }
        simplex.push(i);
        basis.push(r.map(|v| v / d));
    }
    Ok(simplex)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cube_points() -> Vec<[f64; 3]> {
        let mut pts = Vec::new();
        for x in 0..3 {
            for y in 0..3 {
                for z in 0..3 {
                    pts.push([x as f64, y as f64, z as f64]);
                }
            }
        }
        pts
    }

    #[test]
    fn lattice_cube_volume_and_vertices() {
        let hull = ConvexHull::new(&cube_points()).unwrap();
        assert!((hull.volume() - 8.0).abs() < 1e-9);
        // coplanar lattice points may be kept as vertices, but every facet is a cube face
        for f in hull.facets() {
            assert_eq!(f.normal.iter().filter(|v| (v.abs() - 1.0).abs() < 1e-12).count(), 1);
        }
        assert!(hull.vertex_indices().len() >= 8);
        assert!(hull.contains(&[1.0, 1.0, 1.0], 0.0));
        assert!(!hull.contains(&[2.5, 1.0, 1.0], 1e-9));
        assert!((hull.inscribed_radius_at(&[1.0, 1.0, 1.0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs_are_reported() {
        let flat: Vec<[f64; 3]> = (0..10).map(|i| [i as f64, (i * i) as f64, 0.0]).collect();
        assert_eq!(
            ConvexHull::new(&flat).unwrap_err(),
            HullError::Degenerate { rank: 2, dim: 3 }
        );
        assert!(matches!(
            ConvexHull::<3>::new(&[[0.0; 3]; 3]),
            Err(HullError::TooFewPoints { .. })
        ));
        assert_eq!(
            ConvexHull::<3>::new(&[[1.0, 1.0, 1.0]; 5]).unwrap_err(),
            HullError::Degenerate { rank: 0, dim: 3 }
        );
    }

    #[test]
    fn cross_polytope_6d_inscribed_radius() {
        let mut pts = Vec::new();
        for i in 0..6 {
            let mut p = [0.0; 6];
            p[i] = 1.0;
            pts.push(p);
            p[i] = -1.0;
            pts.push(p);
        }
        let hull = ConvexHull::new(&pts).unwrap();
        assert_eq!(hull.facets().len(), 64);
        // facets x·s = 1 with s in {±1}^6 / sqrt(6)
        assert!((hull.inscribed_radius_at(&[0.0; 6]) - 1.0 / 6f64.sqrt()).abs() < 1e-12);
        // volume of the 6D cross-polytope = 2^6 / 6!
        assert!((hull.volume() - 64.0 / 720.0).abs() < 1e-12);
    }

    /// Brute-force facet enumeration: every D-subset whose hyperplane has all points on
    /// one side is a supporting plane.
    fn brute_force_min_offset<const D: usize>(pts: &[[f64; D]]) -> f64 {
        fn rec<const D: usize>(
            pts: &[[f64; D]],
            start: usize,
            chosen: &mut Vec<usize>,
            best: &mut f64,
        ) {
            if chosen.len() == D {
                let verts: [usize; D] = std::array::from_fn(|i| chosen[i]);
                let centroid: [f64; D] = std::array::from_fn(|k| {
                    pts.iter().map(|p| p[k]).sum::<f64>() / pts.len() as f64
                });
                if let Some((n, b)) = hyperplane(pts, &verts, &centroid) {
                    if pts.iter().all(|p| dot(&n, p) - b <= 1e-9) {
                        *best = best.min(b);
                    }
                }
                return;
            }
            for i in start..pts.len() {
                chosen.push(i);
                rec(pts, i + 1, chosen, best);
                chosen.pop();
            }
        }
        let mut best = f64::INFINITY;
        rec(pts, 0, &mut Vec::new(), &mut best);
        best
    }

    #[test]
    fn random_hulls_match_brute_force_planes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let pts: Vec<[f64; 4]> = (0..14)
                .map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)))
                .collect();
            let hull = ConvexHull::new(&pts).unwrap();
            for p in &pts {
                assert!(hull.contains(p, 1e-9));
            }
            let centroid: [f64; 4] =
                std::array::from_fn(|k| pts.iter().map(|p| p[k]).sum::<f64>() / pts.len() as f64);
            let shifted: Vec<[f64; 4]> = pts.iter().map(|p| sub(p, &centroid)).collect();
            let hull_c = ConvexHull::new(&shifted).unwrap();
            let expected = brute_force_min_offset(&shifted);
            assert!((hull_c.inscribed_radius_at(&[0.0; 4]) - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn sphere_sample_volume_approaches_ball() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<[f64; 3]> = (0..4000)
            .map(|_| {
                let v: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
                let n = dot(&v, &v).sqrt();
                v.map(|x| x / n)
            })
            .collect();
        let hull = ConvexHull::new(&pts).unwrap();
        let ball = 4.0 / 3.0 * std::f64::consts::PI;
        assert!(hull.volume() < ball);
        assert!(hull.volume() > 0.98 * ball);
    }
}
