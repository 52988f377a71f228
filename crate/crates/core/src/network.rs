//! Embedded straight-edge networks: length, topology, sampling and cleanup.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{dist, lerp};

/// Edges shorter than this are rejected as degenerate.
pub const MIN_EDGE_LENGTH: f64 = 1e-12;

/// A connected graph embedded in `R^d` with straight edges.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    dim: usize,
    coords: Vec<f64>,
    edges: Vec<[usize; 2]>,
}

/// JSON schema for networks: `{"dim": d, "vertices": [[...]], "edges": [[i, j], ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkJson {
    pub dim: usize,
    pub vertices: Vec<Vec<f64>>,
    pub edges: Vec<[usize; 2]>,
}

impl Network {
    pub fn new(dim: usize, vertices: &[Vec<f64>], edges: Vec<[usize; 2]>) -> Result<Self> {
        let mut coords = Vec::with_capacity(vertices.len() * dim);
        for (i, v) in vertices.iter().enumerate() {
            if v.len() != dim {
                return Err(Error::validation(format!(
                    "vertex {i} has {} coordinates, expected {dim}",
                    v.len()
                )));
            }
            coords.extend_from_slice(v);
        }
        Self::from_flat(dim, coords, edges)
    }

    pub fn from_flat(dim: usize, coords: Vec<f64>, edges: Vec<[usize; 2]>) -> Result<Self> {
        let net = Self { dim, coords, edges };
        net.validate()?;
        Ok(net)
    }

    /// A single-vertex network.
    pub fn point(p: &[f64]) -> Self {
        Self {
            dim: p.len(),
            coords: p.to_vec(),
            edges: Vec::new(),
        }
    }

    /// A segment `[a, b]`.
    pub fn segment(a: &[f64], b: &[f64]) -> Result<Self> {
        Self::new(a.len(), &[a.to_vec(), b.to_vec()], vec![[0, 1]])
    }

    /// Open polyline through `pts` in order.
    pub fn polyline(pts: &[Vec<f64>]) -> Result<Self> {
        let dim = pts.first().map_or(0, Vec::len);
        let edges = (1..pts.len()).map(|i| [i - 1, i]).collect();
        Self::new(dim, pts, edges)
    }

    fn validate(&self) -> Result<()> {
        if self.dim < 1 {
            return Err(Error::validation("network dimension must be positive"));
        }
        if self.coords.is_empty() || !self.coords.len().is_multiple_of(self.dim) {
            return Err(Error::validation("a network needs at least one vertex"));
        }
        if self.coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::validation("network has a non-finite coordinate"));
        }
        let n = self.num_vertices();
        let mut seen = std::collections::HashSet::with_capacity(self.edges.len());
        for (e, &[a, b]) in self.edges.iter().enumerate() {
            if a >= n || b >= n {
                return Err(Error::validation(format!("edge {e} references a missing vertex")));
            }
            if a == b {
                return Err(Error::validation(format!("edge {e} is a self-loop")));
            }
            if !seen.insert((a.min(b), a.max(b))) {
                return Err(Error::validation(format!("edge {e} duplicates an earlier edge")));
            }
            let len = dist(self.vertex(a), self.vertex(b));
            if len < MIN_EDGE_LENGTH {
                return Err(Error::DegenerateGeometry(format!(
                    "edge {e} has length {len:e}"
                )));
            }
        }
        if !is_connected(n, &self.edges) {
            return Err(Error::validation("network is not connected"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_vertices(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    #[inline]
    pub fn vertex(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn vertices(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    pub fn edge_length(&self, e: usize) -> f64 {
        let [a, b] = self.edges[e];
        dist(self.vertex(a), self.vertex(b))
    }

    /// Point at parameter `t` on edge `e`.
    pub fn edge_point(&self, e: usize, t: f64) -> Vec<f64> {
        let [a, b] = self.edges[e];
        lerp(self.vertex(a), self.vertex(b), t)
    }

    /// `H^1` of the network: the sum of Euclidean edge lengths.
    pub fn total_length(&self) -> f64 {
        (0..self.edges.len()).map(|e| self.edge_length(e)).fold(0.0, |acc, l| acc + l)
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_vertices()];
        for &[a, b] in &self.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }

    /// Incident edge ids per vertex, in edge order.
    pub fn incidence(&self) -> Vec<Vec<usize>> {
        let mut inc = vec![Vec::new(); self.num_vertices()];
        for (e, &[a, b]) in self.edges.iter().enumerate() {
            inc[a].push(e);
            inc[b].push(e);
        }
        inc
    }

    /// Same graph with vertex coordinates replaced. Validates the result.
    pub fn with_coords(&self, coords: Vec<f64>) -> Result<Self> {
        if coords.len() != self.coords.len() {
            return Err(Error::validation("coordinate buffer size changed"));
        }
        Self::from_flat(self.dim, coords, self.edges.clone())
    }

    /// Homothety `v -> center + ratio * (v - center)`.
    pub fn scaled_about(&self, center: &[f64], ratio: f64) -> Result<Self> {
        let coords = self
            .coords
            .chunks_exact(self.dim)
            .flat_map(|v| v.iter().zip(center).map(|(x, c)| c + ratio * (x - c)))
            .collect();
        self.with_coords(coords)
    }

    pub fn translated(&self, shift: &[f64]) -> Self {
        let coords = self
            .coords
            .chunks_exact(self.dim)
            .flat_map(|v| v.iter().zip(shift).map(|(x, s)| x + s))
            .collect();
        Self {
            dim: self.dim,
            coords,
            edges: self.edges.clone(),
        }
    }

    /// Index of the vertex nearest to `p` (lowest index on ties).
    pub fn nearest_vertex(&self, p: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (i, v) in self.vertices().enumerate() {
            let d = dist(v, p);
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    pub fn to_json(&self) -> NetworkJson {
        NetworkJson {
            dim: self.dim,
            vertices: self.vertices().map(<[f64]>::to_vec).collect(),
            edges: self.edges.clone(),
        }
    }

    pub fn from_json(raw: &NetworkJson) -> Result<Self> {
        Self::new(raw.dim, &raw.vertices, raw.edges.clone())
    }

    pub fn parse_json(text: &str) -> Result<Self> {
        let raw: NetworkJson = serde_json::from_str(text)?;
        Self::from_json(&raw)
    }

    pub fn topology_report(&self) -> Result<TopologyReport> {
        TopologyReport::from_graph(self.num_vertices(), &self.edges)
    }

    pub fn subdivide(&self, h: f64) -> Result<SampledNetwork> {
        SampledNetwork::new(self.clone(), h, &[])
    }

    /// Contracts edges shorter than `min_edge`. The kept endpoint of each
    /// contraction is chosen so every original vertex stays within
    /// `min_edge` of its image; edges that cannot be contracted under that
    /// rule are left in place.
    pub fn simplify(&self, min_edge: f64) -> Network {
        simplify(self, min_edge)
    }
}

fn is_connected(n: usize, edges: &[[usize; 2]]) -> bool {
    if n == 0 {
        return false;
    }
    let adj = adjacency(n, edges);
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    let mut count = 1;
    while let Some(v) = stack.pop() {
        for &(w, _) in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                count += 1;
                stack.push(w);
            }
        }
    }
    count == n
}

fn adjacency(n: usize, edges: &[[usize; 2]]) -> Vec<Vec<(usize, usize)>> {
    let mut adj = vec![Vec::new(); n];
    for (e, &[a, b]) in edges.iter().enumerate() {
        adj[a].push((b, e));
        adj[b].push((a, e));
    }
    adj
}

/// Graph-level topology of a network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologyReport {
    pub vertex_count: usize,
    pub edge_count: usize,
    pub endpoint_count: usize,
    pub branch_point_count: usize,
    pub max_degree: usize,
    /// `|E| - |V| + 1`; zero exactly for trees.
    pub cycle_rank: usize,
    pub articulation_vertex_ids: Vec<usize>,
    pub endpoint_vertex_ids: Vec<usize>,
}

impl TopologyReport {
    pub fn from_graph(n: usize, edges: &[[usize; 2]]) -> Result<Self> {
        if !is_connected(n, edges) {
            return Err(Error::validation("topology requires a connected graph"));
        }
        let mut deg = vec![0usize; n];
        for &[a, b] in edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        let endpoint_vertex_ids: Vec<usize> = (0..n).filter(|&v| deg[v] == 1).collect();
        Ok(Self {
            vertex_count: n,
            edge_count: edges.len(),
            endpoint_count: endpoint_vertex_ids.len(),
            branch_point_count: deg.iter().filter(|&&d| d >= 3).count(),
            max_degree: deg.iter().copied().max().unwrap_or(0),
            cycle_rank: edges.len() + 1 - n,
            articulation_vertex_ids: articulation_points(n, edges),
            endpoint_vertex_ids,
        })
    }

    pub fn is_tree(&self) -> bool {
        self.cycle_rank == 0
    }
}

/// Cut vertices by iterative depth-first low-link, sorted ascending.
pub fn articulation_points(n: usize, edges: &[[usize; 2]]) -> Vec<usize> {
    let adj = adjacency(n, edges);
    let mut order = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut is_cut = vec![false; n];
    let mut counter = 0;
    for root in 0..n {
        if order[root] != usize::MAX {
            continue;
        }
        order[root] = counter;
        low[root] = counter;
        counter += 1;
        let mut root_children = 0;
        // (vertex, parent edge, next adjacency slot)
        let mut stack: Vec<(usize, usize, usize)> = vec![(root, usize::MAX, 0)];
        while let Some(top) = stack.last_mut() {
            let (v, parent_edge, slot) = *top;
            if slot < adj[v].len() {
                top.2 += 1;
                let (w, e) = adj[v][slot];
                if e == parent_edge {
                    continue;
                }
                if order[w] == usize::MAX {
                    order[w] = counter;
                    low[w] = counter;
                    counter += 1;
                    if v == root {
                        root_children += 1;
                    }
                    stack.push((w, e, 0));
                } else {
                    low[v] = low[v].min(order[w]);
                }
            } else {
                stack.pop();
                if let Some(&(u, _, _)) = stack.last() {
                    low[u] = low[u].min(low[v]);
                    if u != root && low[v] >= order[u] {
                        is_cut[u] = true;
                    }
                }
            }
        }
        if root_children >= 2 {
            is_cut[root] = true;
        }
    }
    (0..n).filter(|&v| is_cut[v]).collect()
}

/// A sampling node on a network edge. `edge` is `None` only for the lone
/// vertex of an edgeless network.
#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub edge: Option<usize>,
    pub t: f64,
    pub pos: Vec<f64>,
}

/// A network together with sample nodes at spacing at most `h` along each
/// edge. Every base vertex is a node.
#[derive(Debug, Clone)]
pub struct SampledNetwork {
    base: Network,
    nodes: Vec<Node>,
    spacing: f64,
    vertex_node: Vec<usize>,
    /// Per edge: node ids ordered by increasing `t`, first and last being the
    /// edge's endpoint vertices.
    edge_nodes: Vec<Vec<usize>>,
}

impl SampledNetwork {
    /// Samples `base` at spacing `h`, additionally inserting nodes at the
    /// `(edge, t)` locations in `extra`.
    pub fn new(base: Network, h: f64, extra: &[(usize, f64)]) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::validation(format!("subdivision spacing must be positive, got {h}")));
        }
        let nv = base.num_vertices();
        let mut nodes: Vec<Node> = Vec::with_capacity(nv);
        let mut vertex_node = vec![usize::MAX; nv];
        let inc = base.incidence();
        for v in 0..nv {
            let (edge, t) = match inc[v].first() {
                Some(&e) => (Some(e), if base.edges[e][0] == v { 0.0 } else { 1.0 }),
                None => (None, 0.0),
            };
            vertex_node[v] = nodes.len();
            nodes.push(Node {
                edge,
                t,
                pos: base.vertex(v).to_vec(),
            });
        }

        let mut extra_by_edge: Vec<Vec<f64>> = vec![Vec::new(); base.num_edges()];
        for &(e, t) in extra {
            if e >= base.num_edges() || !(0.0..=1.0).contains(&t) {
                return Err(Error::validation(format!("extra node ({e}, {t}) is off the network")));
            }
            extra_by_edge[e].push(t);
        }

        let mut edge_nodes = Vec::with_capacity(base.num_edges());
        for e in 0..base.num_edges() {
            let [a, b] = base.edges[e];
            let len = base.edge_length(e);
            let k = (len / h).ceil().max(1.0) as usize;
            let mut ts: Vec<f64> = (1..k).map(|j| j as f64 / k as f64).collect();
            ts.extend(extra_by_edge[e].iter().copied());
            ts.sort_by(f64::total_cmp);
            // drop parameters that would coincide with a neighbour or an endpoint
            let min_dt = MIN_EDGE_LENGTH / len;
            let mut kept: Vec<f64> = Vec::with_capacity(ts.len());
            for t in ts {
                let prev = kept.last().copied().unwrap_or(0.0);
                if t - prev >= min_dt && 1.0 - t >= min_dt {
                    kept.push(t);
                }
            }
            let mut ids = Vec::with_capacity(kept.len() + 2);
            ids.push(vertex_node[a]);
            for t in kept {
                ids.push(nodes.len());
                nodes.push(Node {
                    edge: Some(e),
                    t,
                    pos: base.edge_point(e, t),
                });
            }
            ids.push(vertex_node[b]);
            edge_nodes.push(ids);
        }
        Ok(Self {
            base,
            nodes,
            spacing: h,
            vertex_node,
            edge_nodes,
        })
    }

    pub fn base(&self) -> &Network {
        &self.base
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn dim(&self) -> usize {
        self.base.dim
    }

    pub fn vertex_node(&self, v: usize) -> usize {
        self.vertex_node[v]
    }

    pub fn edge_nodes(&self, e: usize) -> &[usize] {
        &self.edge_nodes[e]
    }

    /// Parameter of node `id` measured along edge `e` (the node must lie on it).
    fn param_on_edge(&self, id: usize, e: usize) -> f64 {
        let ids = &self.edge_nodes[e];
        if id == ids[0] {
            0.0
        } else if id == ids[ids.len() - 1] {
            1.0
        } else {
            self.nodes[id].t
        }
    }

    /// Node on edge `e` nearest to parameter `t` (lower node on exact ties).
    pub fn nearest_node_on_edge(&self, e: usize, t: f64) -> usize {
        let ids = &self.edge_nodes[e];
        let pos = ids.partition_point(|&id| self.param_on_edge(id, e) < t);
        if pos == 0 {
            return ids[0];
        }
        if pos == ids.len() {
            return ids[ids.len() - 1];
        }
        let lo = ids[pos - 1];
        let hi = ids[pos];
        if t - self.param_on_edge(lo, e) <= self.param_on_edge(hi, e) - t {
            lo
        } else {
            hi
        }
    }

    /// The refined polyline network whose vertices are exactly the nodes
    /// (vertex `i` is node `i`).
    pub fn node_network(&self) -> Network {
        let mut coords = Vec::with_capacity(self.nodes.len() * self.base.dim);
        for n in &self.nodes {
            coords.extend_from_slice(&n.pos);
        }
        let mut edges = Vec::new();
        for ids in &self.edge_nodes {
            for w in ids.windows(2) {
                edges.push([w[0], w[1]]);
            }
        }
        Network {
            dim: self.base.dim,
            coords,
            edges,
        }
    }

    /// Length of the polyline through consecutive nodes of every edge.
    pub fn polyline_length(&self) -> f64 {
        self.edge_nodes
            .iter()
            .flat_map(|ids| ids.windows(2))
            .map(|w| dist(&self.nodes[w[0]].pos, &self.nodes[w[1]].pos))
            .sum()
    }
}

fn simplify(net: &Network, min_edge: f64) -> Network {
    let dim = net.dim;
    let n = net.num_vertices();
    let pos: Vec<Vec<f64>> = net.vertices().map(<[f64]>::to_vec).collect();
    // original vertices absorbed into each current vertex
    let mut members: Vec<Vec<usize>> = (0..n).map(|v| vec![v]).collect();
    let mut alive = vec![true; n];
    let mut edges: Vec<[usize; 2]> = net.edges.clone();
    let original: Vec<Vec<f64>> = pos.clone();

    loop {
        let mut order: Vec<usize> = (0..edges.len()).collect();
        let lens: Vec<f64> = edges.iter().map(|&[a, b]| dist(&pos[a], &pos[b])).collect();
        order.sort_by(|&x, &y| lens[x].total_cmp(&lens[y]).then(x.cmp(&y)));
        let mut contracted = false;
        for e in order {
            if lens[e] >= min_edge {
                break;
            }
            let [a, b] = edges[e];
            let fits = |keep: usize, drop: usize| {
                members[drop]
                    .iter()
                    .chain(&members[keep])
                    .all(|&m| dist(&original[m], &pos[keep]) <= min_edge)
            };
            let deg = |v: usize| edges.iter().filter(|ed| ed.contains(&v)).count();
            let (keep, drop) = if deg(a) >= deg(b) { (a, b) } else { (b, a) };
            let (keep, drop) = if fits(keep, drop) {
                (keep, drop)
            } else if fits(drop, keep) {
                (drop, keep)
            } else {
                continue;
            };
            let moved = std::mem::take(&mut members[drop]);
            members[keep].extend(moved);
            alive[drop] = false;
            let mut next: Vec<[usize; 2]> = Vec::with_capacity(edges.len());
            let mut seen = std::collections::HashSet::new();
            for &[x, y] in &edges {
                let x = if x == drop { keep } else { x };
                let y = if y == drop { keep } else { y };
                if x != y && seen.insert((x.min(y), x.max(y))) {
                    next.push([x, y]);
                }
            }
            edges = next;
            contracted = true;
            break;
        }
        if !contracted {
            break;
        }
    }

    let mut remap = vec![usize::MAX; n];
    let mut coords = Vec::new();
    let mut count = 0;
    for v in 0..n {
        if alive[v] {
            remap[v] = count;
            count += 1;
            coords.extend_from_slice(&pos[v]);
        }
    }
    let edges = edges.iter().map(|&[a, b]| [remap[a], remap[b]]).collect();
    Network { dim, coords, edges }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> Network {
        Network::polyline(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![2.0, 0.0]]).unwrap()
    }

    fn star(arms: usize) -> Network {
        let mut v = vec![vec![0.0, 0.0]];
        let mut e = Vec::new();
        for k in 0..arms {
            let a = 2.0 * std::f64::consts::PI * k as f64 / arms as f64;
            v.push(vec![a.cos(), a.sin()]);
            e.push([0, k + 1]);
        }
        Network::new(2, &v, e).unwrap()
    }

    #[test]
    fn lengths() {
        assert_eq!(Network::segment(&[0.0, 0.0], &[1.0, 0.0]).unwrap().total_length(), 1.0);
        let p = Network::polyline(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0], vec![2.0, 1.0]])
            .unwrap();
        assert_eq!(p.total_length(), 3.0);
        let s = p.scaled_about(&[0.3, 0.2], 0.75).unwrap();
        assert!((s.total_length() - 0.75 * 3.0).abs() < 1e-14);
    }

    #[test]
    fn validation_rejects_bad_graphs() {
        let v = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![2.0, 0.0]];
        assert!(Network::new(2, &v, vec![[0, 1]]).is_err()); // disconnected
        assert!(Network::new(2, &v, vec![[0, 0], [0, 1], [1, 2]]).is_err());
        assert!(Network::new(2, &v, vec![[0, 1], [1, 0], [1, 2]]).is_err());
        assert!(Network::new(2, &v, vec![[0, 1], [1, 3]]).is_err());
        let dup = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
        assert!(matches!(
            Network::new(2, &dup, vec![[0, 1]]),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn topology_path() {
        let t = path3().topology_report().unwrap();
        assert_eq!(t.endpoint_count, 2);
        assert_eq!(t.branch_point_count, 0);
        assert_eq!(t.cycle_rank, 0);
        assert_eq!(t.articulation_vertex_ids, vec![1]);
    }

    #[test]
    fn topology_star() {
        let t = star(3).topology_report().unwrap();
        assert_eq!(t.endpoint_count, 3);
        assert_eq!(t.branch_point_count, 1);
        assert_eq!(t.max_degree, 3);
        assert_eq!(t.cycle_rank, 0);
        assert_eq!(t.articulation_vertex_ids, vec![0]);
    }

    #[test]
    fn topology_triangle() {
        let v = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        let t = Network::new(2, &v, vec![[0, 1], [1, 2], [2, 0]])
            .unwrap()
            .topology_report()
            .unwrap();
        assert_eq!(t.endpoint_count, 0);
        assert_eq!(t.cycle_rank, 1);
        assert!(t.articulation_vertex_ids.is_empty());
    }

    #[test]
    fn topology_disconnected_rejected() {
        assert!(TopologyReport::from_graph(3, &[[0, 1]]).is_err());
    }

    #[test]
    fn articulation_two_triangles_sharing_vertex() {
        let edges = [[0, 1], [1, 2], [2, 0], [2, 3], [3, 4], [4, 2]];
        assert_eq!(articulation_points(5, &edges), vec![2]);
    }

    #[test]
    fn long_path_articulation_no_recursion_limit() {
        let n = 200_000;
        let edges: Vec<[usize; 2]> = (1..n).map(|i| [i - 1, i]).collect();
        let cut = articulation_points(n, &edges);
        assert_eq!(cut.len(), n - 2);
    }

    #[test]
    fn subdivide_even() {
        let s = Network::segment(&[0.0, 0.0], &[1.0, 0.0]).unwrap().subdivide(0.5).unwrap();
        let mut ts: Vec<f64> = s.edge_nodes(0).iter().map(|&i| s.nodes()[i].pos[0]).collect();
        ts.sort_by(f64::total_cmp);
        assert_eq!(ts, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn subdivide_coarse_only_endpoints() {
        let s = Network::segment(&[0.0, 0.0], &[1.0, 0.0]).unwrap().subdivide(3.0).unwrap();
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn subdivide_rejects_nonpositive_spacing() {
        assert!(path3().subdivide(0.0).is_err());
        assert!(path3().subdivide(-1.0).is_err());
    }

    #[test]
    fn subdivide_positions_match_interpolation() {
        let net = star(5);
        let h = 0.13;
        let s = net.subdivide(h).unwrap();
        assert!(s.len() <= net.num_vertices() + (net.total_length() / h) as usize + net.num_edges());
        for node in s.nodes() {
            let e = node.edge.unwrap();
            let expect = net.edge_point(e, node.t);
            assert!(crate::geom::dist(&expect, &node.pos) < 1e-15);
        }
        for e in 0..net.num_edges() {
            for w in s.edge_nodes(e).windows(2) {
                assert!(crate::geom::dist(&s.nodes()[w[0]].pos, &s.nodes()[w[1]].pos) <= h + 1e-12);
            }
        }
        assert!((s.polyline_length() - net.total_length()).abs() < 1e-12);
        for v in 0..net.num_vertices() {
            assert_eq!(s.nodes()[s.vertex_node(v)].pos, net.vertex(v));
        }
    }

    #[test]
    fn node_network_preserves_geometry() {
        let net = star(4);
        let s = net.subdivide(0.3).unwrap();
        let nn = s.node_network();
        assert_eq!(nn.num_vertices(), s.len());
        assert!((nn.total_length() - net.total_length()).abs() < 1e-12);
        assert!(nn.topology_report().unwrap().is_tree());
    }

    #[test]
    fn simplify_keeps_valid_chain() {
        let p = path3();
        assert_eq!(p.simplify(1e-6), p);
    }

    #[test]
    fn simplify_merges_close_vertices() {
        let v = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0 + 1e-8, 0.0], vec![2.0, 0.0]];
        let net = Network::polyline(&v).unwrap();
        let s = net.simplify(1e-6);
        assert_eq!(s.num_vertices(), 3);
        assert_eq!(s.num_edges(), 2);
        assert!(s.topology_report().is_ok());
        assert!((s.total_length() - 2.0).abs() < 1e-6);
    }
}
