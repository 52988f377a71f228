//! Closest-point projection onto a network, the pushforward of the measure
//! onto sampling nodes, and detection of the ambiguous locus.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{dist, project_to_segment};
use crate::measure::DiscreteMeasure;
use crate::network::{Network, SampledNetwork};

/// Thresholds for flagging a point as having two distinct nearest points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionOptions {
    /// Relative tolerance for a distance tie, in units of `scale`.
    pub rel_tol: f64,
    /// Minimum separation of two feet, in units of `scale`.
    pub sep_tol: f64,
    /// Length scale, normally the diameter of the measure's hull.
    pub scale: f64,
}

impl ProjectionOptions {
    pub fn with_scale(scale: f64) -> Self {
        Self {
            rel_tol: 1e-9,
            sep_tol: 1e-6,
            scale: if scale > 0.0 { scale } else { 1.0 },
        }
    }

    /// Uses the bounding-box diagonal of the measure as the scale.
    pub fn for_measure(measure: &DiscreteMeasure) -> Self {
        let d = measure.dim();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for p in measure.points() {
            for k in 0..d {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        Self::with_scale(dist(&lo, &hi))
    }

    fn tie_tol(&self) -> f64 {
        self.rel_tol * self.scale
    }

    fn sep(&self) -> f64 {
        self.sep_tol * self.scale
    }
}

/// Nearest-point data for one measure point.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionEntry {
    pub distance: f64,
    /// `None` only for an edgeless (single-vertex) network.
    pub edge: Option<usize>,
    pub t: f64,
    pub foot: Vec<f64>,
    pub ambiguous: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionTable {
    pub entries: Vec<ProjectionEntry>,
}

impl ProjectionTable {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// CSV export: `index,distance,edge,t,ambiguous`. The edge column is
    /// `-1` for an edgeless network.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,distance,edge,t,ambiguous\n");
        for (i, e) in self.entries.iter().enumerate() {
            let edge = e.edge.map_or(-1, |x| x as i64);
            out.push_str(&format!(
                "{i},{:?},{edge},{:?},{}\n",
                e.distance, e.t, e.ambiguous as u8
            ));
        }
        out
    }
}

/// Axis-aligned bounding-volume hierarchy over network edges.
#[derive(Debug, Clone)]
pub struct EdgeIndex {
    dim: usize,
    nodes: Vec<BvhNode>,
    order: Vec<usize>,
}

#[derive(Debug, Clone)]
struct BvhNode {
    lo: Vec<f64>,
    hi: Vec<f64>,
    /// Leaf: `order[start..end]`; inner: `left`, `right` child ids.
    kind: BvhKind,
}

#[derive(Debug, Clone)]
enum BvhKind {
    Leaf { start: usize, end: usize },
    Inner { left: usize, right: usize },
}

const LEAF_SIZE: usize = 4;

impl EdgeIndex {
    pub fn build(net: &Network) -> Self {
        let dim = net.dim();
        let m = net.num_edges();
        let boxes: Vec<(Vec<f64>, Vec<f64>)> = (0..m)
            .map(|e| {
                let [a, b] = net.edges()[e];
                let (pa, pb) = (net.vertex(a), net.vertex(b));
                let lo = pa.iter().zip(pb).map(|(x, y)| x.min(*y)).collect();
                let hi = pa.iter().zip(pb).map(|(x, y)| x.max(*y)).collect();
                (lo, hi)
            })
            .collect();
        let mut index = Self {
            dim,
            nodes: Vec::new(),
            order: (0..m).collect(),
        };
        if m > 0 {
            index.build_range(&boxes, 0, m);
        }
        index
    }

    fn build_range(&mut self, boxes: &[(Vec<f64>, Vec<f64>)], start: usize, end: usize) -> usize {
        let mut lo = vec![f64::INFINITY; self.dim];
        let mut hi = vec![f64::NEG_INFINITY; self.dim];
        for &e in &self.order[start..end] {
            for k in 0..self.dim {
                lo[k] = lo[k].min(boxes[e].0[k]);
                hi[k] = hi[k].max(boxes[e].1[k]);
            }
        }
        let id = self.nodes.len();
        self.nodes.push(BvhNode {
            lo: lo.clone(),
            hi: hi.clone(),
            kind: BvhKind::Leaf { start, end },
        });
        if end - start <= LEAF_SIZE {
            return id;
        }
        let axis = (0..self.dim)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap_or(0);
        let centre = |e: usize| boxes[e].0[axis] + boxes[e].1[axis];
        self.order[start..end].sort_by(|&x, &y| centre(x).total_cmp(&centre(y)).then(x.cmp(&y)));
        let mid = start + (end - start) / 2;
        let left = self.build_range(boxes, start, mid);
        let right = self.build_range(boxes, mid, end);
        self.nodes[id].kind = BvhKind::Inner { left, right };
        id
    }

    fn box_dist_sq(&self, node: usize, x: &[f64]) -> f64 {
        let n = &self.nodes[node];
        let mut d2 = 0.0;
        for k in 0..self.dim {
            let v = if x[k] < n.lo[k] {
                n.lo[k] - x[k]
            } else if x[k] > n.hi[k] {
                x[k] - n.hi[k]
            } else {
                0.0
            };
            d2 += v * v;
        }
        d2
    }

    /// Visits every edge whose box lies within squared distance `bound(x)`,
    /// where the bound may shrink as edges are reported.
    fn visit(&self, x: &[f64], mut f: impl FnMut(usize) -> f64) {
        if self.nodes.is_empty() {
            return;
        }
        let mut bound = f64::INFINITY;
        let mut stack = vec![(0usize, 0.0f64)];
        while let Some((node, lb)) = stack.pop() {
            if lb > bound {
                continue;
            }
            match self.nodes[node].kind {
                BvhKind::Leaf { start, end } => {
                    for &e in &self.order[start..end] {
                        bound = f(e);
                    }
                }
                BvhKind::Inner { left, right } => {
                    let dl = self.box_dist_sq(left, x);
                    let dr = self.box_dist_sq(right, x);
                    // push the farther child first so the nearer is explored first
                    if dl <= dr {
                        stack.push((right, dr));
                        stack.push((left, dl));
                    } else {
                        stack.push((left, dl));
                        stack.push((right, dr));
                    }
                }
            }
        }
    }
}

/// Slack on pruning bounds so exact distance ties are never pruned by
/// rounding in the box distance.
fn widen(d2: f64) -> f64 {
    d2 * (1.0 + 1e-12) + f64::MIN_POSITIVE
}

#[derive(Clone, Copy)]
struct Best {
    d2: f64,
    edge: usize,
    t: f64,
}

impl Best {
    fn offer(&mut self, d2: f64, edge: usize, t: f64) {
        if d2 < self.d2 || (d2 == self.d2 && edge < self.edge) {
            *self = Best { d2, edge, t };
        }
    }
}

fn entry_for(net: &Network, x: &[f64], best: Best, ambiguous: bool) -> ProjectionEntry {
    let foot = net.edge_point(best.edge, best.t);
    ProjectionEntry {
        distance: dist(x, &foot),
        edge: Some(best.edge),
        t: best.t,
        foot,
        ambiguous,
    }
}

fn point_entry(net: &Network, x: &[f64]) -> ProjectionEntry {
    let foot = net.vertex(0).to_vec();
    ProjectionEntry {
        distance: dist(x, &foot),
        edge: None,
        t: 0.0,
        foot,
        ambiguous: false,
    }
}

fn is_second_foot(net: &Network, best: &Best, foot: &[f64], e: usize, t: f64, d2: f64, opts: &ProjectionOptions) -> bool {
    if e == best.edge {
        return false;
    }
    let d = d2.sqrt();
    if d > best.d2.sqrt() + opts.tie_tol() {
        return false;
    }
    dist(&net.edge_point(e, t), foot) > opts.sep()
}

fn project_one_indexed(net: &Network, index: &EdgeIndex, x: &[f64], opts: &ProjectionOptions) -> ProjectionEntry {
    if net.num_edges() == 0 {
        return point_entry(net, x);
    }
    let edges = net.edges();
    let mut best = Best { d2: f64::INFINITY, edge: usize::MAX, t: 0.0 };
    index.visit(x, |e| {
        let [a, b] = edges[e];
        let (t, d2) = project_to_segment(x, net.vertex(a), net.vertex(b));
        best.offer(d2, e, t);
        widen(best.d2)
    });
    let foot = net.edge_point(best.edge, best.t);
    let reach = best.d2.sqrt() + opts.tie_tol();
    let limit = widen(reach * reach);
    let mut ambiguous = false;
    index.visit(x, |e| {
        if !ambiguous {
            let [a, b] = edges[e];
            let (t, d2) = project_to_segment(x, net.vertex(a), net.vertex(b));
            ambiguous = is_second_foot(net, &best, &foot, e, t, d2, opts);
        }
        if ambiguous { -1.0 } else { limit }
    });
    entry_for(net, x, best, ambiguous)
}

fn project_one_brute(net: &Network, x: &[f64], opts: &ProjectionOptions) -> ProjectionEntry {
    if net.num_edges() == 0 {
        return point_entry(net, x);
    }
    let cands: Vec<(f64, f64)> = net
        .edges()
        .iter()
        .map(|&[a, b]| {
            let (t, d2) = project_to_segment(x, net.vertex(a), net.vertex(b));
            (t, d2)
        })
        .collect();
    let mut best = Best { d2: f64::INFINITY, edge: usize::MAX, t: 0.0 };
    for (e, &(t, d2)) in cands.iter().enumerate() {
        best.offer(d2, e, t);
    }
    let foot = net.edge_point(best.edge, best.t);
    let ambiguous = cands
        .iter()
        .enumerate()
        .any(|(e, &(t, d2))| is_second_foot(net, &best, &foot, e, t, d2, opts));
    entry_for(net, x, best, ambiguous)
}

fn check_dims(measure: &DiscreteMeasure, net: &Network) -> Result<()> {
    if measure.dim() != net.dim() {
        return Err(Error::DimensionMismatch {
            expected: measure.dim(),
            found: net.dim(),
        });
    }
    Ok(())
}

/// Projects every measure point onto the network using the edge index.
/// Ties go to the lowest edge index.
pub fn project(measure: &DiscreteMeasure, net: &Network, opts: &ProjectionOptions) -> Result<ProjectionTable> {
    check_dims(measure, net)?;
    let index = EdgeIndex::build(net);
    let entries = (0..measure.len())
        .into_par_iter()
        .map(|i| project_one_indexed(net, &index, measure.point(i), opts))
        .collect();
    Ok(ProjectionTable { entries })
}

/// Reference projection scanning every edge for every point.
pub fn project_brute_force(measure: &DiscreteMeasure, net: &Network, opts: &ProjectionOptions) -> Result<ProjectionTable> {
    check_dims(measure, net)?;
    let entries = (0..measure.len())
        .into_par_iter()
        .map(|i| project_one_brute(net, measure.point(i), opts))
        .collect();
    Ok(ProjectionTable { entries })
}

/// Distance from a single point to the network.
pub fn distance_to(net: &Network, x: &[f64]) -> f64 {
    if net.num_edges() == 0 {
        return dist(x, net.vertex(0));
    }
    net.edges()
        .iter()
        .map(|&[a, b]| project_to_segment(x, net.vertex(a), net.vertex(b)).1)
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

/// `nu = (pi_Sigma)_# mu` lumped onto sampling nodes, with fibers.
#[derive(Debug, Clone, PartialEq)]
pub struct PushforwardMeasure {
    pub node_mass: Vec<f64>,
    pub fiber: Vec<Vec<usize>>,
    /// Node receiving each measure point.
    pub node_of_point: Vec<usize>,
}

impl PushforwardMeasure {
    pub fn total_mass(&self) -> f64 {
        self.node_mass.iter().sum()
    }
}

/// Assigns each point to the sampled node nearest its foot along the
/// owning edge.
pub fn pushforward(table: &ProjectionTable, sampled: &SampledNetwork, measure: &DiscreteMeasure) -> Result<PushforwardMeasure> {
    if table.len() != measure.len() {
        return Err(Error::validation("projection table does not match the measure"));
    }
    let mut node_mass = vec![0.0; sampled.len()];
    let mut fiber = vec![Vec::new(); sampled.len()];
    let mut node_of_point = Vec::with_capacity(table.len());
    for (i, entry) in table.entries.iter().enumerate() {
        let node = match entry.edge {
            Some(e) => {
                if e >= sampled.base().num_edges() {
                    return Err(Error::validation("projection table built on a different network"));
                }
                sampled.nearest_node_on_edge(e, entry.t)
            }
            None => 0,
        };
        node_mass[node] += measure.weight(i);
        fiber[node].push(i);
        node_of_point.push(node);
    }
    Ok(PushforwardMeasure {
        node_mass,
        fiber,
        node_of_point,
    })
}

/// Measure of the flagged ambiguous points.
pub fn ambiguous_mass(table: &ProjectionTable, measure: &DiscreteMeasure) -> f64 {
    table
        .entries
        .iter()
        .enumerate()
        .filter(|(_, e)| e.ambiguous)
        .map(|(i, _)| measure.weight(i))
        .fold(0.0, |acc, w| acc + w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(p: Vec<f64>) -> DiscreteMeasure {
        DiscreteMeasure::new(p.len(), &[p], None).unwrap()
    }

    #[test]
    fn endpoint_projection() {
        let net = Network::segment(&[0.0, 0.0], &[1.0, 0.0]).unwrap();
        let m = single(vec![2.0, 0.0]);
        let t = project(&m, &net, &ProjectionOptions::with_scale(2.0)).unwrap();
        let e = &t.entries[0];
        assert_eq!(e.foot, vec![1.0, 0.0]);
        assert_eq!(e.distance, 1.0);
        assert!(!e.ambiguous);
    }

    fn parallel_pair() -> Network {
        let v = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 2.0], vec![1.0, 2.0], vec![-1.0, 1.0]];
        // the two rails are joined far away through vertex 4
        Network::new(2, &v, vec![[0, 1], [2, 3], [0, 4], [2, 4]]).unwrap()
    }

    #[test]
    fn bisector_point_is_ambiguous() {
        let m = single(vec![0.5, 1.0]);
        let t = project(&m, &parallel_pair(), &ProjectionOptions::with_scale(2.0)).unwrap();
        assert!(t.entries[0].ambiguous);
        assert_eq!(t.entries[0].edge, Some(0));
        assert_eq!(ambiguous_mass(&t, &m), 1.0);
    }

    #[test]
    fn shared_vertex_foot_not_ambiguous() {
        // the corner of an L: feet on both edges coincide
        let net = Network::polyline(&[vec![0.0, 1.0], vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let m = single(vec![-1.0, -1.0]);
        let t = project(&m, &net, &ProjectionOptions::with_scale(2.0)).unwrap();
        assert!(!t.entries[0].ambiguous);
        assert_eq!(t.entries[0].foot, vec![0.0, 0.0]);
    }

    #[test]
    fn single_segment_no_ambiguity() {
        let net = Network::segment(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        let m = crate::measure::sample_density(&crate::measure::DensitySpec::unit_square(), 300, 5).unwrap();
        let t = project(&m, &net, &ProjectionOptions::for_measure(&m)).unwrap();
        assert_eq!(ambiguous_mass(&t, &m), 0.0);
    }

    #[test]
    fn dimension_mismatch() {
        let net = Network::segment(&[0.0, 0.0, 0.0], &[1.0, 0.0, 0.0]).unwrap();
        let m = single(vec![0.0, 0.0]);
        assert!(matches!(
            project(&m, &net, &ProjectionOptions::with_scale(1.0)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn point_network() {
        let net = Network::point(&[1.0, 1.0]);
        let m = DiscreteMeasure::new(2, &[vec![0.0, 1.0], vec![1.0, 3.0]], None).unwrap();
        let t = project(&m, &net, &ProjectionOptions::with_scale(1.0)).unwrap();
        assert_eq!(t.entries[0].distance, 1.0);
        assert_eq!(t.entries[1].distance, 2.0);
        let s = net.subdivide(0.1).unwrap();
        let pf = pushforward(&t, &s, &m).unwrap();
        assert_eq!(pf.node_mass, vec![1.0]);
    }

    #[test]
    fn pushforward_concentration() {
        let net = Network::segment(&[0.0, 0.0], &[1.0, 0.0]).unwrap();
        let m = DiscreteMeasure::new(2, &[vec![2.0, 1.0], vec![3.0, -1.0], vec![1.5, 0.0]], None).unwrap();
        let t = project(&m, &net, &ProjectionOptions::with_scale(3.0)).unwrap();
        let s = net.subdivide(0.1).unwrap();
        let pf = pushforward(&t, &s, &m).unwrap();
        let v1 = s.vertex_node(1);
        assert!((pf.node_mass[v1] - 1.0).abs() < 1e-15);
        assert_eq!(pf.fiber[v1], vec![0, 1, 2]);
    }

    #[test]
    fn pushforward_mirror_symmetry() {
        let net = Network::segment(&[0.0, 0.0], &[1.0, 0.0]).unwrap();
        let pts = vec![vec![0.2, 0.5], vec![0.8, 0.5], vec![0.1, -0.3], vec![0.9, -0.3]];
        let m = DiscreteMeasure::new(2, &pts, None).unwrap();
        let t = project(&m, &net, &ProjectionOptions::with_scale(1.0)).unwrap();
        let s = net.subdivide(0.1).unwrap();
        let pf = pushforward(&t, &s, &m).unwrap();
        // node at parameter t mirrors the node at 1 - t
        for (id, node) in s.nodes().iter().enumerate() {
            let mirror = s.nearest_node_on_edge(0, 1.0 - (if id == s.vertex_node(1) { 1.0 } else if id == s.vertex_node(0) { 0.0 } else { node.t }));
            assert!((pf.node_mass[id] - pf.node_mass[mirror]).abs() < 1e-15);
        }
        assert!((pf.total_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn csv_export() {
        let net = Network::segment(&[0.0, 0.0], &[1.0, 0.0]).unwrap();
        let t = project(&single(vec![0.5, 1.0]), &net, &ProjectionOptions::with_scale(1.0)).unwrap();
        assert_eq!(t.to_csv(), "index,distance,edge,t,ambiguous\n0,1.0,0,0.5,0\n");
    }
}
