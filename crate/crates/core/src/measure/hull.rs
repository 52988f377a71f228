//! Convex hull of the support: exact for affine dimension <= 3, an outer
//! approximation by supporting half-spaces above that.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::DiscreteMeasure;
use crate::geom::{dist, dot, norm};

/// `normal . y <= offset`, with `normal` a unit vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfSpace {
    pub normal: Vec<f64>,
    pub offset: f64,
}

impl HalfSpace {
    #[inline]
    pub fn excess(&self, y: &[f64]) -> f64 {
        dot(&self.normal, y) - self.offset
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HullSummary {
    /// Diameter of the convex hull of the support.
    pub diameter: f64,
    /// Extreme points of the hull. Empty when the hull is only approximated.
    pub hull_vertices: Vec<Vec<f64>>,
    pub halfspaces: Vec<HalfSpace>,
    /// Affine dimension of the support.
    pub affine_dim: usize,
    /// False when the half-spaces are an outer approximation.
    pub exact: bool,
}

impl HullSummary {
    /// Largest violation of any half-space; `<= 0` inside the hull.
    pub fn excess(&self, y: &[f64]) -> f64 {
        self.halfspaces
            .iter()
            .map(|h| h.excess(y))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn contains(&self, y: &[f64], tol: f64) -> bool {
        self.excess(y) <= tol
    }
}

pub fn hull_summary(measure: &DiscreteMeasure) -> HullSummary {
    let d = measure.dim();
    let pts: Vec<&[f64]> = measure.points().collect();
    let origin = pts[0].to_vec();
    let scale = pts.iter().map(|p| dist(p, &origin)).fold(0.0, f64::max);
    let basis = affine_basis(&pts, &origin, 1e-12 * scale.max(f64::MIN_POSITIVE));
    let k = basis.len();
    let local: Vec<Vec<f64>> = pts
        .iter()
        .map(|p| {
            let rel: Vec<f64> = p.iter().zip(&origin).map(|(a, b)| a - b).collect();
            basis.iter().map(|b| dot(b, &rel)).collect()
        })
        .collect();

    let mut halfspaces = Vec::new();
    for u in orthogonal_complement(&basis, d) {
        let c = dot(&u, &origin);
        halfspaces.push(HalfSpace { normal: u.iter().map(|x| -x).collect(), offset: -c });
        halfspaces.push(HalfSpace { normal: u, offset: c });
    }
    // local half-space (n_loc, off_loc) lifts to (B^T n_loc, off_loc + n . origin)
    let lift = |n_loc: &[f64], off_loc: f64| {
        let mut n = vec![0.0; d];
        for (b, c) in basis.iter().zip(n_loc) {
            crate::geom::axpy(&mut n, *c, b);
        }
        let offset = off_loc + dot(&n, &origin);
        HalfSpace { normal: n, offset }
    };

    let (vertex_ids, exact): (Vec<usize>, bool) = match k {
        0 => (vec![0], true),
        1 => {
            let (lo, hi) = extreme_pair(&local, 0);
            halfspaces.push(lift(&[1.0], local[hi][0]));
            halfspaces.push(lift(&[-1.0], -local[lo][0]));
            (dedup_ids(vec![lo, hi]), true)
        }
        2 => {
            let ring = monotone_chain(&local);
            for w in 0..ring.len() {
                let a = &local[ring[w]];
                let b = &local[ring[(w + 1) % ring.len()]];
                let e = [b[0] - a[0], b[1] - a[1]];
                let len = (e[0] * e[0] + e[1] * e[1]).sqrt();
                // counter-clockwise ring: outward normal is the edge rotated clockwise
                let n = [e[1] / len, -e[0] / len];
                halfspaces.push(lift(&n, n[0] * a[0] + n[1] * a[1]));
            }
            (ring, true)
        }
        3 => {
            let faces = hull3(&local);
            let mut ids = Vec::new();
            for f in &faces {
                halfspaces.push(lift(&f.normal, f.offset));
                ids.extend_from_slice(&f.v);
            }
            ids.sort_unstable();
            ids.dedup();
            (ids, true)
        }
        _ => {
            for n in approx_directions(&local, k) {
                let off = local.iter().map(|q| dot(&n, q)).fold(f64::NEG_INFINITY, f64::max);
                halfspaces.push(lift(&n, off));
            }
            (Vec::new(), false)
        }
    };

    let diameter = if exact {
        max_pairwise(vertex_ids.iter().map(|&i| pts[i]))
    } else {
        max_pairwise(pts.iter().copied())
    };
    HullSummary {
        diameter,
        hull_vertices: vertex_ids.iter().map(|&i| pts[i].to_vec()).collect(),
        halfspaces,
        affine_dim: k,
        exact,
    }
}

fn max_pairwise<'a>(it: impl Iterator<Item = &'a [f64]>) -> f64 {
    let v: Vec<&[f64]> = it.collect();
    let mut best = 0.0_f64;
    for i in 0..v.len() {
        for j in i + 1..v.len() {
            best = best.max(dist(v[i], v[j]));
        }
    }
    best
}

fn dedup_ids(mut ids: Vec<usize>) -> Vec<usize> {
    ids.sort_unstable();
    ids.dedup();
    ids
}

/// Greedy orthonormal basis of the affine span, picking the point with the
/// largest residual each round.
fn affine_basis(pts: &[&[f64]], origin: &[f64], tol: f64) -> Vec<Vec<f64>> {
    let d = origin.len();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    while basis.len() < d {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for p in pts {
            let mut r: Vec<f64> = p.iter().zip(origin).map(|(a, b)| a - b).collect();
            for b in &basis {
                let c = dot(b, &r);
                crate::geom::axpy(&mut r, -c, b);
            }
            let n = norm(&r);
            if best.as_ref().is_none_or(|(bn, _)| n > *bn) {
                best = Some((n, r));
            }
        }
        match best {
            Some((n, r)) if n > tol => {
                let mut r: Vec<f64> = r.iter().map(|x| x / n).collect();
                // one re-orthogonalisation pass for stability
                for b in &basis {
                    let c = dot(b, &r);
                    crate::geom::axpy(&mut r, -c, b);
                }
                let n2 = norm(&r);
                basis.push(r.iter().map(|x| x / n2).collect());
            }
            _ => break,
        }
    }
    basis
}

fn orthogonal_complement(basis: &[Vec<f64>], d: usize) -> Vec<Vec<f64>> {
    let mut all: Vec<Vec<f64>> = basis.to_vec();
    let mut out = Vec::new();
    for j in 0..d {
        if all.len() == d {
            break;
        }
        let mut r = vec![0.0; d];
        r[j] = 1.0;
        for b in &all {
            let c = dot(b, &r);
            crate::geom::axpy(&mut r, -c, b);
        }
        let n = norm(&r);
        if n > 1e-8 {
            let u: Vec<f64> = r.iter().map(|x| x / n).collect();
            all.push(u.clone());
            out.push(u);
        }
    }
    out
}

fn extreme_pair(local: &[Vec<f64>], axis: usize) -> (usize, usize) {
    let mut lo = 0;
    let mut hi = 0;
    for (i, q) in local.iter().enumerate() {
        if q[axis] < local[lo][axis] {
            lo = i;
        }
        if q[axis] > local[hi][axis] {
            hi = i;
        }
    }
    (lo, hi)
}

fn cross2(o: &[f64], a: &[f64], b: &[f64]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Andrew's monotone chain; returns a counter-clockwise ring of indices.
fn monotone_chain(local: &[Vec<f64>]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..local.len()).collect();
    idx.sort_by(|&a, &b| {
        local[a][0]
            .total_cmp(&local[b][0])
            .then(local[a][1].total_cmp(&local[b][1]))
    });
    idx.dedup_by(|a, b| local[*a] == local[*b]);
    if idx.len() < 3 {
        return idx;
    }
    let mut hull: Vec<usize> = Vec::with_capacity(2 * idx.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &usize>> = if pass == 0 {
            Box::new(idx.iter())
        } else {
            Box::new(idx.iter().rev())
        };
        for &i in iter {
            while hull.len() >= start + 2
                && cross2(&local[hull[hull.len() - 2]], &local[hull[hull.len() - 1]], &local[i]) <= 0.0
            {
                hull.pop();
            }
            hull.push(i);
        }
        hull.pop();
    }
    hull
}

struct Face {
    v: [usize; 3],
    normal: Vec<f64>,
    offset: f64,
}

fn cross3(a: &[f64], b: &[f64]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn make_face(q: &[Vec<f64>], v: [usize; 3], interior: &[f64]) -> Face {
    let (a, b, c) = (&q[v[0]], &q[v[1]], &q[v[2]]);
    let ab = crate::geom::sub(b, a);
    let ac = crate::geom::sub(c, a);
    let n = cross3(&ab, &ac);
    let len = norm(&n);
    let mut normal: Vec<f64> = n.iter().map(|x| x / len).collect();
    let mut offset = dot(&normal, a);
    let mut v = v;
    if dot(&normal, interior) > offset {
        normal.iter_mut().for_each(|x| *x = -*x);
        offset = -offset;
        v.swap(1, 2);
    }
    Face { v, normal, offset }
}

/// Incremental 3-d hull over points with full affine rank.
fn hull3(q: &[Vec<f64>]) -> Vec<Face> {
    let scale = q.iter().map(|p| norm(p)).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let eps = 1e-12 * scale;

    let i0 = (0..q.len())
        .min_by(|&a, &b| q[a][0].total_cmp(&q[b][0]))
        .unwrap();
    let i1 = (0..q.len())
        .max_by(|&a, &b| dist(&q[a], &q[i0]).total_cmp(&dist(&q[b], &q[i0])))
        .unwrap();
    let line = crate::geom::sub(&q[i1], &q[i0]);
    let off_line = |p: &[f64]| norm(&cross3(&line, &crate::geom::sub(p, &q[i0])));
    let i2 = (0..q.len())
        .max_by(|&a, &b| off_line(&q[a]).total_cmp(&off_line(&q[b])))
        .unwrap();
    let pn = cross3(&line, &crate::geom::sub(&q[i2], &q[i0]));
    let off_plane = |p: &[f64]| dot(&pn, &crate::geom::sub(p, &q[i0])).abs();
    let i3 = (0..q.len())
        .max_by(|&a, &b| off_plane(&q[a]).total_cmp(&off_plane(&q[b])))
        .unwrap();

    let interior: Vec<f64> = (0..3)
        .map(|k| (q[i0][k] + q[i1][k] + q[i2][k] + q[i3][k]) / 4.0)
        .collect();
    let mut faces: Vec<Option<Face>> = [[i0, i1, i2], [i0, i1, i3], [i0, i2, i3], [i1, i2, i3]]
        .into_iter()
        .map(|v| Some(make_face(q, v, &interior)))
        .collect();

    for p in 0..q.len() {
        if [i0, i1, i2, i3].contains(&p) {
            continue;
        }
        let visible: Vec<usize> = faces
            .iter()
            .enumerate()
            .filter_map(|(fi, f)| f.as_ref().filter(|f| dot(&f.normal, &q[p]) - f.offset > eps).map(|_| fi))
            .collect();
        if visible.is_empty() {
            continue;
        }
        let mut edges: Vec<(usize, usize)> = Vec::new();
        for &fi in &visible {
            let v = faces[fi].as_ref().unwrap().v;
            edges.extend([(v[0], v[1]), (v[1], v[2]), (v[2], v[0])]);
        }
        let set: HashSet<(usize, usize)> = edges.iter().copied().collect();
        for &fi in &visible {
            faces[fi] = None;
        }
        for &(a, b) in &edges {
            if !set.contains(&(b, a)) {
                faces.push(Some(make_face(q, [a, b, p], &interior)));
            }
        }
    }
    faces.into_iter().flatten().collect()
}

/// Directions for the outer approximation in dimension > 3: local axes,
/// their pairwise diagonals, and differences of axis-extreme points.
fn approx_directions(local: &[Vec<f64>], k: usize) -> Vec<Vec<f64>> {
    let mut dirs = Vec::new();
    let unit = |v: Vec<f64>| {
        let n = norm(&v);
        (n > 0.0).then(|| v.iter().map(|x| x / n).collect::<Vec<f64>>())
    };
    for i in 0..k {
        for s in [1.0, -1.0] {
            let mut e = vec![0.0; k];
            e[i] = s;
            dirs.push(e);
        }
        for j in i + 1..k {
            for (si, sj) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                let mut e = vec![0.0; k];
                e[i] = si;
                e[j] = sj;
                dirs.extend(unit(e));
            }
        }
    }
    let extremes: Vec<usize> = (0..k)
        .flat_map(|a| {
            let (lo, hi) = extreme_pair(local, a);
            [lo, hi]
        })
        .collect();
    for &a in &extremes {
        for &b in &extremes {
            if a != b {
                dirs.extend(unit(crate::geom::sub(&local[b], &local[a])));
            }
        }
    }
    dirs
}
