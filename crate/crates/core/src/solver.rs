//! Descent along the barycentre field under a length budget (hard mode) or
//! a length penalty (soft mode), with topological maintenance and budget
//! sweeps.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functional::{self, BarycentreField, LipschitzField};
use crate::geom::{axpy, dist, dist_sq, dot, norm, norm_sq, pow0, sub};
use crate::measure::{hull_summary, DiscreteMeasure};
use crate::network::{Network, NetworkJson, SampledNetwork};
use crate::perturb;
use crate::projection::{self, ProjectionOptions, ProjectionTable, PushforwardMeasure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Hard,
    Soft,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    PrincipalSegment,
    MstOfCenters,
    Point,
}

impl std::str::FromStr for InitStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "principal_segment" => Ok(Self::PrincipalSegment),
            "mst_of_centers" => Ok(Self::MstOfCenters),
            "point" => Ok(Self::Point),
            _ => Err(Error::validation(format!("unknown init strategy `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyConfig {
    /// Leaf edges carrying less mass than this are candidates for removal.
    pub prune_mass_tol: f64,
    /// Unused budget that triggers grafting a segment at an endpoint.
    /// `None` disables grafting.
    pub atom_insert_threshold: Option<f64>,
    /// `None` means `1e-6` times the measure diameter.
    pub min_edge: Option<f64>,
    /// Maintenance runs every `every` iterations.
    pub every: usize,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        Self {
            prune_mass_tol: 1e-9,
            atom_insert_threshold: None,
            min_edge: None,
            every: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub p: f64,
    pub mode: Mode,
    /// Length budget `l` (hard mode).
    pub budget: f64,
    /// Penalty `lambda` (soft mode).
    pub lambda: f64,
    /// Vertex spacing; `None` means `0.02` times the measure diameter.
    pub h: Option<f64>,
    pub step: f64,
    pub max_iters: usize,
    /// Stop once the stationarity residual falls below this.
    pub grad_tol: f64,
    pub seed: u64,
    /// Mollification bandwidth; `None` means `h`.
    pub bandwidth: Option<f64>,
    pub init: InitStrategy,
    /// Initial length in soft mode; `None` means half the diameter.
    pub init_length: Option<f64>,
    pub topology: TopologyConfig,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            p: 2.0,
            mode: Mode::Hard,
            budget: 1.0,
            lambda: 0.05,
            h: None,
            step: 0.05,
            max_iters: 2000,
            grad_tol: 1e-7,
            seed: 0,
            bandwidth: None,
            init: InitStrategy::PrincipalSegment,
            init_length: None,
            topology: TopologyConfig::default(),
        }
    }
}

impl SolverConfig {
    pub fn hard(p: f64, budget: f64) -> Self {
        Self {
            p,
            budget,
            ..Self::default()
        }
    }

    pub fn soft(p: f64, lambda: f64) -> Self {
        Self {
            p,
            lambda,
            mode: Mode::Soft,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::validation(format!("{name} must be positive, got {v}")))
            }
        };
        if !(self.p >= 1.0 && self.p.is_finite()) {
            return Err(Error::validation(format!("p must be >= 1, got {}", self.p)));
        }
        match self.mode {
            Mode::Hard => {
                if !(self.budget >= 0.0 && self.budget.is_finite()) {
                    return Err(Error::validation(format!("length budget must be >= 0, got {}", self.budget)));
                }
            }
            Mode::Soft => positive("lambda", self.lambda)?,
        }
        if let Some(h) = self.h {
            positive("h", h)?;
        }
        if let Some(b) = self.bandwidth {
            positive("bandwidth", b)?;
        }
        if let Some(m) = self.topology.min_edge {
            positive("min_edge", m)?;
        }
        if let Some(a) = self.topology.atom_insert_threshold {
            positive("atom_insert_threshold", a)?;
        }
        if let Some(l) = self.init_length {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::validation(format!("init_length must be >= 0, got {l}")));
            }
        }
        positive("step", self.step)?;
        positive("grad_tol", self.grad_tol)?;
        if !(self.topology.prune_mass_tol >= 0.0) {
            return Err(Error::validation("prune_mass_tol must be >= 0"));
        }
        if self.topology.every == 0 {
            return Err(Error::validation("maintenance interval must be >= 1"));
        }
        Ok(())
    }

    fn resolved(&self, scale: f64) -> Resolved {
        let h = self.h.unwrap_or(0.02 * scale);
        Resolved {
            h,
            bandwidth: self.bandwidth.unwrap_or(h),
            min_edge: self.topology.min_edge.unwrap_or(1e-6 * scale),
            budget: match self.mode {
                Mode::Hard => self.budget,
                Mode::Soft => f64::INFINITY,
            },
            lambda: match self.mode {
                Mode::Hard => 0.0,
                Mode::Soft => self.lambda,
            },
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Resolved {
    h: f64,
    bandwidth: f64,
    min_edge: f64,
    budget: f64,
    lambda: f64,
}

/// One row of the iteration trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub j_p: f64,
    pub h1: f64,
    pub b_l2sq: f64,
    pub net_norm: f64,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub network: Network,
    pub j_value: f64,
    /// `J_p` in hard mode, `J_p + lambda H^1` in soft mode.
    pub objective: f64,
    /// Barycentre field on `sampled`.
    pub field: BarycentreField,
    /// Mollified field on `sampled`; `None` when the field is trivial or
    /// could not be approximated.
    pub xi: Option<LipschitzField>,
    pub sampled: SampledNetwork,
    pub iterations: usize,
    pub trace: Vec<TraceRow>,
    pub converged: bool,
    pub diagnostic: Option<String>,
    pub mollify_failures: usize,
    /// Topological moves that were rejected because they raised the
    /// objective too much.
    pub skipped_moves: Vec<String>,
    pub h: f64,
    pub config: SolverConfig,
}

/// JSON form of a [`SolveResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionJson {
    pub network: NetworkJson,
    pub j_value: f64,
    pub objective: f64,
    pub total_length: f64,
    pub iterations: usize,
    pub converged: bool,
    pub diagnostic: Option<String>,
    pub mollify_failures: usize,
    pub skipped_moves: Vec<String>,
    pub h: f64,
    pub trace: TraceColumns,
    pub config: SolverConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceColumns {
    pub j_p: Vec<f64>,
    pub h1: Vec<f64>,
    pub b_l2sq: Vec<f64>,
    pub net_norm: Vec<f64>,
}

impl SolveResult {
    pub fn to_json(&self) -> SolutionJson {
        SolutionJson {
            network: self.network.to_json(),
            j_value: self.j_value,
            objective: self.objective,
            total_length: self.network.total_length(),
            iterations: self.iterations,
            converged: self.converged,
            diagnostic: self.diagnostic.clone(),
            mollify_failures: self.mollify_failures,
            skipped_moves: self.skipped_moves.clone(),
            h: self.h,
            trace: TraceColumns {
                j_p: self.trace.iter().map(|r| r.j_p).collect(),
                h1: self.trace.iter().map(|r| r.h1).collect(),
                b_l2sq: self.trace.iter().map(|r| r.b_l2sq).collect(),
                net_norm: self.trace.iter().map(|r| r.net_norm).collect(),
            },
            config: self.config.clone(),
        }
    }

    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iter,J_p,H1,B_l2sq,net_norm\n");
        for r in &self.trace {
            out.push_str(&format!("{},{},{},{},{}\n", r.iter, r.j_p, r.h1, r.b_l2sq, r.net_norm));
        }
        out
    }
}

/// Homothety about `center` bringing the length down to `l` when it
/// exceeds it.
pub fn enforce_length(net: &Network, l: f64, center: &[f64]) -> Result<Network> {
    if !(l >= 0.0) {
        return Err(Error::validation(format!("length budget must be >= 0, got {l}")));
    }
    let len = net.total_length();
    if len <= l {
        return Ok(net.clone());
    }
    if l == 0.0 {
        return Ok(Network::point(center));
    }
    let mut ratio = l / len;
    loop {
        let scaled = net.scaled_about(center, ratio)?;
        if scaled.total_length() <= l || ratio <= 0.0 {
            return Ok(scaled);
        }
        // rounding left the length just above the budget
        ratio = ratio.next_down();
    }
}

/// Inserts a vertex at the foot of `point` on the network. `scale` is the
/// reference length for the proximity tolerance (normally the diameter).
pub fn snap_to_vertex(net: &Network, point: &[f64], scale: f64) -> Result<(Network, usize)> {
    if point.len() != net.dim() {
        return Err(Error::DimensionMismatch {
            expected: net.dim(),
            found: point.len(),
        });
    }
    let tol = 1e-6 * scale;
    let (v, dv) = net.nearest_vertex(point);
    if net.num_edges() == 0 {
        return if dv <= tol {
            Ok((net.clone(), v))
        } else {
            Err(Error::validation(format!("point is {dv:e} from the network")))
        };
    }
    let mut best = (0, 0.0, f64::INFINITY);
    for (e, &[a, b]) in net.edges().iter().enumerate() {
        let (t, d2) = crate::geom::project_to_segment(point, net.vertex(a), net.vertex(b));
        if d2 < best.2 {
            best = (e, t, d2);
        }
    }
    let (e, t, d2) = best;
    let d = d2.sqrt();
    if d > tol {
        return Err(Error::validation(format!("point is {d:e} from the network")));
    }
    let foot = net.edge_point(e, t);
    let [a, b] = net.edges()[e];
    let merge = crate::network::MIN_EDGE_LENGTH.max(1e-12 * scale);
    for end in [a, b] {
        if dist(&foot, net.vertex(end)) <= merge {
            return Ok((net.clone(), end));
        }
    }
    Ok((split_edge(net, e, &foot)?, net.num_vertices()))
}

fn split_edge(net: &Network, e: usize, at: &[f64]) -> Result<Network> {
    let mut coords = net.coords().to_vec();
    coords.extend_from_slice(at);
    let id = net.num_vertices();
    let mut edges = net.edges().to_vec();
    let [a, b] = edges[e];
    edges[e] = [a, id];
    edges.push([id, b]);
    Network::from_flat(net.dim(), coords, edges)
}

/// Splits every edge into pieces no longer than `h`.
fn refine(net: &Network, h: f64) -> Result<Network> {
    let d = net.dim();
    let mut coords = net.coords().to_vec();
    let mut edges = Vec::with_capacity(net.num_edges());
    for (e, &[a, b]) in net.edges().iter().enumerate() {
        let k = (net.edge_length(e) / h).ceil().max(1.0) as usize;
        let mut prev = a;
        for j in 1..k {
            let id = coords.len() / d;
            coords.extend(net.edge_point(e, j as f64 / k as f64));
            edges.push([prev, id]);
            prev = id;
        }
        edges.push([prev, b]);
    }
    Network::from_flat(d, coords, edges)
}

fn remove_vertex(net: &Network, v: usize) -> Result<Network> {
    let d = net.dim();
    let mut coords = Vec::with_capacity(net.coords().len() - d);
    for (i, x) in net.vertices().enumerate() {
        if i != v {
            coords.extend_from_slice(x);
        }
    }
    let remap = |i: usize| if i > v { i - 1 } else { i };
    let edges = net
        .edges()
        .iter()
        .filter(|e| !e.contains(&v))
        .map(|&[a, b]| [remap(a), remap(b)])
        .collect();
    Network::from_flat(d, coords, edges)
}

/// Weighted covariance top eigenvector by power iteration.
fn principal_axis(measure: &DiscreteMeasure, mean: &[f64]) -> Vec<f64> {
    let d = measure.dim();
    let mut cov = vec![0.0; d * d];
    for (x, &w) in measure.points().zip(measure.weights()) {
        let r = sub(x, mean);
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] += w * r[i] * r[j];
            }
        }
    }
    let k = (0..d).max_by(|&a, &b| cov[a * d + a].total_cmp(&cov[b * d + b])).unwrap_or(0);
    let mut v: Vec<f64> = (0..d).map(|i| if i == k { 1.0 } else { 0.1 }).collect();
    for _ in 0..500 {
        let mut next = vec![0.0; d];
        for i in 0..d {
            for j in 0..d {
                next[i] += cov[i * d + j] * v[j];
            }
        }
        let n = norm(&next);
        if n == 0.0 {
            break;
        }
        next.iter_mut().for_each(|c| *c /= n);
        v = next;
    }
    let n = norm(&v);
    v.iter_mut().for_each(|c| *c /= n);
    v
}

fn kmeans_centers(measure: &DiscreteMeasure, k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = measure.len();
    let first = WeightedIndex::new(measure.weights()).map(|w| w.sample(&mut rng)).unwrap_or(0);
    let mut centers = vec![measure.point(first).to_vec()];
    let mut d2: Vec<f64> = measure.points().map(|x| dist_sq(x, &centers[0])).collect();
    while centers.len() < k {
        let probs: Vec<f64> = d2.iter().zip(measure.weights()).map(|(a, w)| a * w).collect();
        let Ok(dist) = WeightedIndex::new(&probs) else { break };
        let c = measure.point(dist.sample(&mut rng)).to_vec();
        for (i, x) in measure.points().enumerate() {
            d2[i] = d2[i].min(dist_sq(x, &c));
        }
        centers.push(c);
    }
    let dim = measure.dim();
    for _ in 0..50 {
        let mut sums = vec![vec![0.0; dim]; centers.len()];
        let mut mass = vec![0.0; centers.len()];
        for i in 0..n {
            let x = measure.point(i);
            let c = (0..centers.len())
                .min_by(|&a, &b| dist_sq(x, &centers[a]).total_cmp(&dist_sq(x, &centers[b])))
                .unwrap();
            axpy(&mut sums[c], measure.weight(i), x);
            mass[c] += measure.weight(i);
        }
        for (c, (s, m)) in centers.iter_mut().zip(sums.iter().zip(&mass)) {
            if *m > 0.0 {
                *c = s.iter().map(|v| v / m).collect();
            }
        }
    }
    centers
}

/// Initial network with length at most `l`.
pub fn init_network(measure: &DiscreteMeasure, l: f64, strategy: InitStrategy, seed: u64) -> Result<Network> {
    if !(l >= 0.0 && l.is_finite()) {
        return Err(Error::validation(format!("length budget must be >= 0, got {l}")));
    }
    let mean = measure.mean();
    let scale = hull_summary(measure).diameter;
    let tiny = 1e-12 * scale.max(1.0);
    if l <= tiny || strategy == InitStrategy::Point || scale == 0.0 {
        return Ok(Network::point(&mean));
    }
    match strategy {
        InitStrategy::Point => unreachable!(),
        InitStrategy::PrincipalSegment => {
            let axis = principal_axis(measure, &mean);
            let (lo, hi) = measure
                .points()
                .map(|x| dot(&sub(x, &mean), &axis))
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), s| (a.min(s), b.max(s)));
            let (s0, s1) = if hi - lo <= l {
                (lo, hi)
            } else {
                let a = (-0.5 * l).clamp(lo, hi - l);
                (a, a + l)
            };
            if s1 - s0 <= tiny {
                return Ok(Network::point(&mean));
            }
            let at = |s: f64| mean.iter().zip(&axis).map(|(m, u)| m + s * u).collect::<Vec<_>>();
            Network::segment(&at(s0), &at(s1))
        }
        InitStrategy::MstOfCenters => {
            let mut centers: Vec<Vec<f64>> = Vec::new();
            for c in kmeans_centers(measure, measure.len().min(8), seed) {
                if centers.iter().all(|o| dist(o, &c) > tiny) {
                    centers.push(c);
                }
            }
            let k = centers.len();
            if k == 1 {
                return Ok(Network::point(&mean));
            }
            let mut in_tree = vec![false; k];
            let mut best = vec![(f64::INFINITY, 0usize); k];
            in_tree[0] = true;
            for j in 1..k {
                best[j] = (dist(&centers[0], &centers[j]), 0);
            }
            let mut edges = Vec::with_capacity(k - 1);
            for _ in 1..k {
                let j = (0..k)
                    .filter(|&j| !in_tree[j])
                    .min_by(|&a, &b| best[a].0.total_cmp(&best[b].0))
                    .unwrap();
                in_tree[j] = true;
                edges.push([best[j].1, j]);
                for i in 0..k {
                    if !in_tree[i] {
                        let dd = dist(&centers[j], &centers[i]);
                        if dd < best[i].0 {
                            best[i] = (dd, j);
                        }
                    }
                }
            }
            let net = Network::new(measure.dim(), &centers, edges)?;
            let len = net.total_length();
            if len <= l {
                return Ok(net);
            }
            match enforce_length(&net, l, &mean) {
                Ok(n) => Ok(n),
                Err(Error::DegenerateGeometry(_)) => Ok(Network::point(&mean)),
                Err(e) => Err(e),
            }
        }
    }
}

/// Gradient data of `J_p` with respect to vertex positions, using the
/// linear interpolation of each foot between its edge's endpoints.
struct VertexGradient {
    /// `-dJ/dv` per vertex.
    g: Vec<f64>,
    /// Interpolated mass per vertex.
    mass: Vec<f64>,
    centroid: Vec<f64>,
}

fn vertex_gradient(measure: &DiscreteMeasure, net: &Network, table: &ProjectionTable, p: f64, exclude: f64) -> VertexGradient {
    let d = net.dim();
    let nv = net.num_vertices();
    let mut g = vec![0.0; nv * d];
    let mut mass = vec![0.0; nv];
    let mut centroid = vec![0.0; d];
    for (i, entry) in table.entries.iter().enumerate() {
        let w = measure.weight(i);
        axpy(&mut centroid, w, &entry.foot);
        let (a, b, t) = match entry.edge {
            Some(e) => {
                let [a, b] = net.edges()[e];
                (a, b, entry.t)
            }
            None => (0, 0, 0.0),
        };
        mass[a] += (1.0 - t) * w;
        mass[b] += t * w;
        if p < 2.0 && entry.distance <= exclude {
            continue;
        }
        let c = w * p * pow0(entry.distance, p - 2.0);
        let r = sub(measure.point(i), &entry.foot);
        axpy(&mut g[a * d..(a + 1) * d], (1.0 - t) * c, &r);
        axpy(&mut g[b * d..(b + 1) * d], t * c, &r);
    }
    VertexGradient { g, mass, centroid }
}

/// `dH^1/dv` per vertex.
fn length_gradient(net: &Network) -> Vec<f64> {
    let d = net.dim();
    let mut g = vec![0.0; net.num_vertices() * d];
    for (e, &[a, b]) in net.edges().iter().enumerate() {
        let len = net.edge_length(e);
        let u: Vec<f64> = sub(net.vertex(a), net.vertex(b)).iter().map(|c| c / len).collect();
        axpy(&mut g[a * d..(a + 1) * d], 1.0, &u);
        axpy(&mut g[b * d..(b + 1) * d], -1.0, &u);
    }
    g
}

/// Field quantities on a network sampled with every foot as a node.
pub struct FieldSnapshot {
    pub table: ProjectionTable,
    pub sampled: SampledNetwork,
    pub pushforward: PushforwardMeasure,
    pub field: BarycentreField,
}

/// Barycentre field of `net` on a sampling at spacing `h` with the feet of
/// all measure points inserted as nodes. Points within `1e-12 M` of the
/// network are left out when `p < 2`.
pub fn field_snapshot(measure: &DiscreteMeasure, net: &Network, p: f64, h: f64, opts: &ProjectionOptions) -> Result<FieldSnapshot> {
    let table = projection::project(measure, net, opts)?;
    let extra: Vec<(usize, f64)> = table.entries.iter().filter_map(|e| e.edge.map(|edge| (edge, e.t))).collect();
    let sampled = SampledNetwork::new(net.clone(), h, &extra)?;
    let pushforward = projection::pushforward(&table, &sampled, measure)?;
    let field = functional::barycentre_field(measure, &pushforward, &sampled, p, Some(1e-12 * opts.scale))?;
    Ok(FieldSnapshot {
        table,
        sampled,
        pushforward,
        field,
    })
}

struct Evaluator<'a> {
    measure: &'a DiscreteMeasure,
    opts: ProjectionOptions,
    p: f64,
    lambda: f64,
}

impl Evaluator<'_> {
    fn eval(&self, net: &Network) -> Result<(ProjectionTable, f64, f64)> {
        let table = projection::project(self.measure, net, &self.opts)?;
        let j = functional::j_p(self.measure, &table, self.p)?;
        Ok((table, j, j + self.lambda * net.total_length()))
    }
}

struct State {
    net: Network,
    table: ProjectionTable,
    j: f64,
    f: f64,
}

/// Runs the descent.
pub fn solve(measure: &DiscreteMeasure, config: &SolverConfig, init: Option<&Network>) -> Result<SolveResult> {
    config.validate()?;
    if let Some(n) = init {
        if n.dim() != measure.dim() {
            return Err(Error::DimensionMismatch {
                expected: measure.dim(),
                found: n.dim(),
            });
        }
    }
    let m = hull_summary(measure).diameter;
    let scale = if m > 0.0 { m } else { 1.0 };
    let rc = config.resolved(scale);
    let opts = ProjectionOptions::with_scale(scale);
    let p = config.p;
    let exclude = 1e-12 * scale;
    let ev = Evaluator {
        measure,
        opts,
        p,
        lambda: rc.lambda,
    };
    let hard = config.mode == Mode::Hard;

    let start = match init {
        Some(n) => n.clone(),
        None => {
            let l0 = match config.mode {
                Mode::Hard => config.budget,
                Mode::Soft => config.init_length.unwrap_or(0.5 * scale),
            };
            init_network(measure, l0, config.init, config.seed)?
        }
    };
    let start = if hard {
        enforce_length(&start, rc.budget, &measure.mean())?
    } else {
        start
    };
    let net = refine(&start, rc.h)?;
    let (table, j, f) = ev.eval(&net)?;
    let mut st = State { net, table, j, f };

    let mut trace = vec![trace_row(0, measure, &st, p, rc.h, &opts)?];
    let mut mem = Memory::default();
    let max_step = 64.0 * config.step;
    let mut converged = false;
    let mut diagnostic = None;
    let mut mollify_failures = 0;
    let mut skipped_moves = Vec::new();
    let mut iterations = 0;
    let mut scaling_rounds = 0;
    let mut since_progress = 0usize;
    let mut f_window = st.f;

    while iterations < config.max_iters {
        iterations += 1;
        let nv_before = st.net.num_vertices();
        let outcome = descent_step(&ev, &mut st, &rc, config, exclude, &mut mem, &mut mollify_failures)?;
        mem.step = mem.step.min(max_step);
        let mut stop = matches!(outcome, StepOutcome::Stationary);

        if iterations % config.topology.every == 0 || stop {
            maintenance(&ev, &mut st, &rc, config, &mut skipped_moves)?;
        }
        if st.net.num_vertices() != nv_before {
            mem.reset();
        }
        if !hard && (stop || iterations % config.topology.every == 0) {
            let improved = scaling_search(&ev, &mut st)?;
            if improved && stop && scaling_rounds < 50 {
                scaling_rounds += 1;
                stop = false;
            }
        }
        trace.push(trace_row(iterations, measure, &st, p, rc.h, &opts)?);
        if stop {
            converged = true;
            break;
        }
        since_progress += 1;
        if since_progress >= 50 {
            if f_window - st.f <= 1e-12 * f_window.abs() {
                diagnostic = Some(format!("objective stalled for 50 iterations at {:e}", st.f));
                break;
            }
            f_window = st.f;
            since_progress = 0;
        }
    }
    if !converged && diagnostic.is_none() {
        diagnostic = Some(format!("iteration limit {} reached", config.max_iters));
    }

    let snap = field_snapshot(measure, &st.net, p, rc.h, &opts)?;
    let xi = if snap.field.l2sq > 0.0 {
        match functional::mollify(&snap.field, &snap.sampled, rc.bandwidth) {
            Ok(x) => Some(x),
            Err(e) => {
                log::warn!("final mollification failed: {e}");
                None
            }
        }
    } else {
        None
    };
    Ok(SolveResult {
        network: st.net,
        j_value: st.j,
        objective: st.f,
        field: snap.field,
        xi,
        sampled: snap.sampled,
        iterations,
        trace,
        converged,
        diagnostic,
        mollify_failures,
        skipped_moves,
        h: rc.h,
        config: config.clone(),
    })
}

fn trace_row(iter: usize, measure: &DiscreteMeasure, st: &State, p: f64, h: f64, opts: &ProjectionOptions) -> Result<TraceRow> {
    let snap = field_snapshot(measure, &st.net, p, h, opts)?;
    Ok(TraceRow {
        iter,
        j_p: st.j,
        h1: st.net.total_length(),
        b_l2sq: snap.field.l2sq,
        net_norm: norm(&snap.field.net),
    })
}

enum StepOutcome {
    Moved,
    Stationary,
}

/// Conjugate-gradient memory in the mass metric.
#[derive(Default)]
struct Memory {
    residual: Vec<f64>,
    direction: Vec<f64>,
    rr: f64,
    step: f64,
    shift: f64,
}

impl Memory {
    fn reset(&mut self) {
        self.residual.clear();
        self.direction.clear();
        self.rr = 0.0;
    }
}

/// Backtracks from `s` until the objective drops, then keeps doubling while
/// it continues to drop. Returns the accepted step.
fn line_search(
    ev: &Evaluator,
    st: &mut State,
    s0: f64,
    mut make: impl FnMut(f64) -> Result<Option<Network>>,
) -> Result<Option<f64>> {
    let mut s = s0;
    let mut best: Option<(f64, Network, ProjectionTable, f64, f64)> = None;
    for _ in 0..=20 {
        if let Some(cand) = make(s)? {
            let (table, j, f) = ev.eval(&cand)?;
            if f < st.f {
                best = Some((s, cand, table, j, f));
                break;
            }
        }
        s *= 0.5;
    }
    let Some(mut b) = best else { return Ok(None) };
    for _ in 0..10 {
        let s2 = 2.0 * b.0;
        let Some(cand) = make(s2)? else { break };
        let (table, j, f) = ev.eval(&cand)?;
        if f < b.4 {
            b = (s2, cand, table, j, f);
        } else {
            break;
        }
    }
    let (s, net, table, j, f) = b;
    *st = State { net, table, j, f };
    Ok(Some(s))
}

fn descent_step(
    ev: &Evaluator,
    st: &mut State,
    rc: &Resolved,
    config: &SolverConfig,
    exclude: f64,
    mem: &mut Memory,
    mollify_failures: &mut usize,
) -> Result<StepOutcome> {
    let net = st.net.clone();
    let d = net.dim();
    let nv = net.num_vertices();
    let vg = vertex_gradient(ev.measure, &net, &st.table, ev.p, exclude);
    let lg = length_gradient(&net);
    let reg = 0.25 / nv as f64;
    let mt: Vec<f64> = vg.mass.iter().map(|m| m + reg).collect();

    // preconditioned descent direction
    let mut raw = vec![0.0; nv * d];
    for v in 0..nv {
        for k in 0..d {
            let i = v * d + k;
            raw[i] = (vg.g[i] - rc.lambda * lg[i]) / mt[v];
        }
    }
    let hard = config.mode == Mode::Hard;
    let len = net.total_length();
    let at_budget = hard && len >= rc.budget * (1.0 - 1e-9);
    let gmg: f64 = (0..nv).map(|v| norm_sq(&lg[v * d..(v + 1) * d]) / mt[v]).sum();
    let tangent = |dir: &[f64]| -> Vec<f64> {
        let gd = dot(&lg, dir);
        if !at_budget || gd <= 0.0 || gmg <= 0.0 {
            return dir.to_vec();
        }
        let eta = gd / gmg;
        dir.iter()
            .enumerate()
            .map(|(i, x)| x - eta * lg[i] / mt[i / d])
            .collect()
    };
    let mdot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).enumerate().map(|(i, (x, y))| mt[i / d] * x * y).sum() };
    let r = tangent(&raw);
    let rr = mdot(&r, &r);
    if rr.sqrt() <= config.grad_tol {
        return Ok(StepOutcome::Stationary);
    }

    // Polak-Ribiere update, restarted when it stops being a descent direction
    let mut cg = r.clone();
    if mem.residual.len() == r.len() && mem.rr > 0.0 {
        let diff: Vec<f64> = r.iter().zip(&mem.residual).map(|(a, b)| a - b).collect();
        let beta = (mdot(&r, &diff) / mem.rr).max(0.0);
        if beta > 0.0 {
            let mixed: Vec<f64> = r.iter().zip(&mem.direction).map(|(a, b)| a + beta * b).collect();
            let mixed = tangent(&mixed);
            if mdot(&mixed, &raw) > 0.0 {
                cg = mixed;
            }
        }
    }

    let mut directions = vec![cg.clone()];
    if cg != r {
        directions.push(r.clone());
    }
    if nv > 1 {
        let vertex_sampling = SampledNetwork::new(net.clone(), 2.0 * len + 1.0, &[])?;
        let field = BarycentreField::from_parts(d, raw.clone(), mt.clone(), ev.p)?;
        match functional::mollify(&field, &vertex_sampling, rc.bandwidth) {
            Ok(xi) => directions.push(tangent(xi.values())),
            Err(e) => {
                *mollify_failures += 1;
                log::debug!("mollification skipped: {e}");
            }
        }
    }

    for dir in &directions {
        let s0 = if mem.step > 0.0 { mem.step } else { config.step };
        let found = line_search(ev, st, s0, |s| try_move(&net, dir, s, rc, &vg.centroid, hard))?;
        if let Some(s) = found {
            mem.step = s;
            mem.residual = r;
            mem.direction = dir.clone();
            mem.rr = rr;
            translation_step(ev, st, exclude, rc.h, mem)?;
            return Ok(StepOutcome::Moved);
        }
        mem.reset();
    }
    Ok(StepOutcome::Stationary)
}

/// Rigid translation along the net field.
fn translation_step(ev: &Evaluator, st: &mut State, exclude: f64, h: f64, mem: &mut Memory) -> Result<()> {
    let d = st.net.dim();
    let vg = vertex_gradient(ev.measure, &st.net, &st.table, ev.p, exclude);
    let mut net_dir = vec![0.0; d];
    for g in vg.g.chunks_exact(d) {
        axpy(&mut net_dir, 1.0, g);
    }
    let n = norm(&net_dir);
    if n == 0.0 {
        return Ok(());
    }
    net_dir.iter_mut().for_each(|c| *c /= n);
    let base = st.net.clone();
    let s0 = if mem.shift > 0.0 { mem.shift } else { 0.1 * h };
    if let Some(s) = line_search(ev, st, s0, |s| Ok(Some(base.translated(&net_dir.iter().map(|c| c * s).collect::<Vec<_>>()))))? {
        mem.shift = s;
    }
    Ok(())
}

fn try_move(net: &Network, dir: &[f64], s: f64, rc: &Resolved, centroid: &[f64], hard: bool) -> Result<Option<Network>> {
    let moved = match perturb::deform_by_values(net, dir, s) {
        Ok(n) => n,
        Err(Error::DegenerateGeometry(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    if !hard {
        return Ok(Some(moved));
    }
    match enforce_length(&moved, rc.budget, centroid) {
        Ok(n) => Ok(Some(n)),
        Err(Error::DegenerateGeometry(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Applies `cand` if it lowers the objective by at least `-allowance`.
fn accept_if(ev: &Evaluator, st: &mut State, cand: Network, allowance: f64) -> Result<bool> {
    let (table, j, f) = ev.eval(&cand)?;
    if f <= st.f + allowance {
        *st = State { net: cand, table, j, f };
        Ok(true)
    } else {
        Ok(false)
    }
}

fn maintenance(ev: &Evaluator, st: &mut State, rc: &Resolved, config: &SolverConfig, skipped: &mut Vec<String>) -> Result<()> {
    let hard = config.mode == Mode::Hard;

    // merge near-coincident vertices
    let simplified = st.net.simplify(rc.min_edge);
    if simplified != st.net {
        let cand = if hard {
            enforce_length(&simplified, rc.budget, st.net.vertex(0))?
        } else {
            simplified
        };
        if !accept_if(ev, st, cand, 0.0)? {
            skipped.push("simplify".into());
        }
    }

    // prune empty leaf edges
    loop {
        if st.net.num_edges() <= 1 {
            break;
        }
        let vg = vertex_gradient(ev.measure, &st.net, &st.table, ev.p, f64::INFINITY);
        let deg = st.net.degrees();
        let inc = st.net.incidence();
        let leaf = (0..st.net.num_vertices()).find(|&v| {
            if deg[v] != 1 {
                return false;
            }
            let e = inc[v][0];
            let [a, b] = st.net.edges()[e];
            let other = if a == v { b } else { a };
            let on_edge: f64 = st
                .table
                .entries
                .iter()
                .enumerate()
                .filter(|(_, en)| en.edge == Some(e) && {
                    let t_other = if st.net.edges()[e][0] == other { 0.0 } else { 1.0 };
                    en.t != t_other
                })
                .map(|(i, _)| ev.measure.weight(i))
                .sum();
            vg.mass[v] + on_edge < config.topology.prune_mass_tol
        });
        let Some(v) = leaf else { break };
        let cand = remove_vertex(&st.net, v)?;
        if !accept_if(ev, st, cand, 0.0)? {
            skipped.push(format!("prune leaf {v}"));
            break;
        }
    }

    // split vertices of degree four or more
    for _ in 0..st.net.num_vertices() {
        let deg = st.net.degrees();
        let Some(v) = (0..deg.len()).find(|&v| deg[v] >= 4) else { break };
        let cand = split_high_degree(&st.net, v, 2.0 * rc.min_edge)?;
        let cand = if hard {
            enforce_length(&cand, rc.budget, st.net.vertex(v))?
        } else {
            cand
        };
        if !accept_if(ev, st, cand, config.grad_tol)? {
            skipped.push(format!("split vertex {v} (degree {})", deg[v]));
            break;
        }
    }

    // graft a segment at the endpoint with the strongest pull
    if let (true, Some(threshold)) = (hard, config.topology.atom_insert_threshold) {
        let slack = rc.budget - st.net.total_length();
        if slack >= threshold && st.net.num_edges() > 0 {
            let vg = vertex_gradient(ev.measure, &st.net, &st.table, ev.p, 1e-12 * ev.opts.scale);
            let d = st.net.dim();
            let deg = st.net.degrees();
            let best = (0..deg.len())
                .filter(|&v| deg[v] == 1)
                .max_by(|&a, &b| norm(&vg.g[a * d..(a + 1) * d]).total_cmp(&norm(&vg.g[b * d..(b + 1) * d])));
            if let Some(v) = best {
                let gv = &vg.g[v * d..(v + 1) * d];
                let n = norm(gv);
                if n > 0.0 {
                    let len = slack.min(rc.h);
                    let tip: Vec<f64> = st.net.vertex(v).iter().zip(gv).map(|(x, g)| x + len * g / n).collect();
                    let mut coords = st.net.coords().to_vec();
                    coords.extend_from_slice(&tip);
                    let mut edges = st.net.edges().to_vec();
                    edges.push([v, st.net.num_vertices()]);
                    let cand = Network::from_flat(d, coords, edges)?;
                    if !accept_if(ev, st, cand, 0.0)? {
                        skipped.push(format!("graft at endpoint {v}"));
                    }
                }
            }
        }
    }

    // keep edges no longer than h
    let needs = (0..st.net.num_edges()).any(|e| st.net.edge_length(e) > rc.h);
    if needs {
        let cand = refine(&st.net, rc.h)?;
        let (table, j, f) = ev.eval(&cand)?;
        *st = State { net: cand, table, j, f: f.min(st.f) };
        st.f = j + ev.lambda * st.net.total_length();
    }
    Ok(())
}

/// Pulls the two closest-angled edges at `v` onto a new vertex `sep` away
/// along their bisector.
fn split_high_degree(net: &Network, v: usize, sep: f64) -> Result<Network> {
    let d = net.dim();
    let inc = net.incidence();
    let dirs: Vec<(usize, Vec<f64>)> = inc[v]
        .iter()
        .map(|&e| {
            let [a, b] = net.edges()[e];
            let o = if a == v { b } else { a };
            let u = sub(net.vertex(o), net.vertex(v));
            let n = norm(&u);
            (e, u.iter().map(|c| c / n).collect())
        })
        .collect();
    let mut best = (0, 1, f64::NEG_INFINITY);
    for i in 0..dirs.len() {
        for j in i + 1..dirs.len() {
            let c = dot(&dirs[i].1, &dirs[j].1);
            if c > best.2 {
                best = (i, j, c);
            }
        }
    }
    let (i, j, _) = best;
    let mut bis: Vec<f64> = dirs[i].1.iter().zip(&dirs[j].1).map(|(a, b)| a + b).collect();
    let n = norm(&bis);
    if n < 1e-12 {
        bis = dirs[i].1.clone();
    } else {
        bis.iter_mut().for_each(|c| *c /= n);
    }
    let w = net.num_vertices();
    let mut coords = net.coords().to_vec();
    coords.extend(net.vertex(v).iter().zip(&bis).map(|(x, b)| x + sep * b));
    let mut edges = net.edges().to_vec();
    for &k in &[i, j] {
        let e = dirs[k].0;
        for end in edges[e].iter_mut() {
            if *end == v {
                *end = w;
            }
        }
    }
    edges.push([v, w]);
    let _ = d;
    Network::from_flat(net.dim(), coords, edges)
}

/// Golden-section search of `eps -> F((1 - eps) Sigma)` on `[0, 1/2]`
/// about the centroid of the projected measure. Returns whether it moved.
fn scaling_search(ev: &Evaluator, st: &mut State) -> Result<bool> {
    if st.net.num_edges() == 0 {
        return Ok(false);
    }
    let d = st.net.dim();
    let mut center = vec![0.0; d];
    for (i, e) in st.table.entries.iter().enumerate() {
        axpy(&mut center, ev.measure.weight(i), &e.foot);
    }
    let phi = |eps: f64| -> Result<f64> {
        match perturb::shrink(&st.net, eps, &center) {
            Ok(n) => Ok(ev.eval(&n)?.2),
            Err(Error::DegenerateGeometry(_)) => Ok(f64::INFINITY),
            Err(e) => Err(e),
        }
    };
    let gr = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0, 0.5);
    let mut c = b - gr * (b - a);
    let mut e = a + gr * (b - a);
    let mut fc = phi(c)?;
    let mut fe = phi(e)?;
    while b - a > 1e-12 {
        if fc <= fe {
            b = e;
            e = c;
            fe = fc;
            c = b - gr * (b - a);
            fc = phi(c)?;
        } else {
            a = c;
            c = e;
            fc = fe;
            e = a + gr * (b - a);
            fe = phi(e)?;
        }
    }
    let eps = if fc <= fe { c } else { e };
    if eps <= 0.0 {
        return Ok(false);
    }
    let cand = match perturb::shrink(&st.net, eps, &center) {
        Ok(n) => n,
        Err(Error::DegenerateGeometry(_)) => return Ok(false),
        Err(e) => return Err(e),
    };
    let (table, j, f) = ev.eval(&cand)?;
    if f < st.f {
        *st = State { net: cand, table, j, f };
        Ok(true)
    } else {
        Ok(false)
    }
}

/// `J(l)` estimates over increasing budgets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub lengths: Vec<f64>,
    pub j_values: Vec<f64>,
    /// `(J(l_{k+1}) - J(l_k)) / (l_{k+1} - l_k)`.
    pub quotients: Vec<f64>,
    pub converged: Vec<bool>,
    #[serde(skip)]
    pub networks: Vec<Network>,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("l,J,quotient\n");
        for (k, (l, j)) in self.lengths.iter().zip(&self.j_values).enumerate() {
            match self.quotients.get(k) {
                Some(q) => out.push_str(&format!("{l},{j},{q}\n")),
                None => out.push_str(&format!("{l},{j},\n")),
            }
        }
        out
    }
}

/// Solves at each budget in turn, warm-starting from the previous solution.
pub fn sweep(measure: &DiscreteMeasure, lengths: &[f64], config: &SolverConfig) -> Result<SweepResult> {
    if lengths.is_empty() {
        return Err(Error::validation("no budgets given"));
    }
    if lengths.iter().any(|&l| !(l >= 0.0 && l.is_finite())) || lengths.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::validation("budgets must be nonnegative and strictly increasing"));
    }
    let mut j_values = Vec::with_capacity(lengths.len());
    let mut converged = Vec::with_capacity(lengths.len());
    let mut networks: Vec<Network> = Vec::with_capacity(lengths.len());
    for &l in lengths {
        let cfg = SolverConfig {
            mode: Mode::Hard,
            budget: l,
            ..config.clone()
        };
        let res = solve(measure, &cfg, networks.last())?;
        j_values.push(res.j_value);
        converged.push(res.converged);
        networks.push(res.network);
    }
    let quotients = lengths
        .windows(2)
        .zip(j_values.windows(2))
        .map(|(l, j)| (j[1] - j[0]) / (l[1] - l[0]))
        .collect();
    Ok(SweepResult {
        lengths: lengths.to_vec(),
        j_values,
        quotients,
        converged,
        networks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{sample_density, DensitySpec};
    use approx::assert_abs_diff_eq;

    #[test]
    fn enforce_length_cases() {
        let net = Network::segment(&[0.0, 0.0], &[2.0, 0.0]).unwrap();
        assert_eq!(enforce_length(&net, 3.0, &[0.0, 0.0]).unwrap(), net);
        let half = enforce_length(&net, 1.0, &[0.0, 0.0]).unwrap();
        assert_eq!(half.vertex(1), &[1.0, 0.0]);
        assert!(half.total_length() <= 1.0);
        assert_eq!(enforce_length(&half, 1.0, &[0.0, 0.0]).unwrap(), half);
    }

    #[test]
    fn snap_cases() {
        let net = Network::segment(&[0.0, 0.0], &[1.0, 0.0]).unwrap();
        let (same, v) = snap_to_vertex(&net, &[1.0, 0.0], 1.0).unwrap();
        assert_eq!(v, 1);
        assert_eq!(same, net);
        let (split, v) = snap_to_vertex(&net, &[0.5, 0.0], 1.0).unwrap();
        assert_eq!(v, 2);
        assert_eq!(split.num_edges(), 2);
        assert_abs_diff_eq!(split.edge_length(0), split.edge_length(1), epsilon = 1e-15);
        assert_abs_diff_eq!(split.total_length(), 1.0, epsilon = 1e-12);
        assert!(snap_to_vertex(&net, &[0.5, 0.1], 1.0).is_err());
    }

    #[test]
    fn init_zero_budget_is_mean() {
        let m = sample_density(&DensitySpec::unit_square(), 50, 3).unwrap();
        for s in [InitStrategy::PrincipalSegment, InitStrategy::MstOfCenters, InitStrategy::Point] {
            let n = init_network(&m, 0.0, s, 1).unwrap();
            assert_eq!(n.num_vertices(), 1);
            assert_eq!(n.vertex(0), m.mean().as_slice());
        }
    }

    #[test]
    fn principal_segment_on_line() {
        let pts: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 * 0.1, 0.5 + i as f64 * 0.05]).collect();
        let m = DiscreteMeasure::new(2, &pts, None).unwrap();
        let n = init_network(&m, 10.0, InitStrategy::PrincipalSegment, 0).unwrap();
        for x in &pts {
            assert!(projection::distance_to(&n, x) < 1e-9);
        }
        let short = init_network(&m, 0.5, InitStrategy::PrincipalSegment, 0).unwrap();
        assert_abs_diff_eq!(short.total_length(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn mst_init_within_budget() {
        let m = sample_density(&DensitySpec::unit_square(), 300, 5).unwrap();
        for l in [0.3, 1.0, 10.0] {
            let n = init_network(&m, l, InitStrategy::MstOfCenters, 9).unwrap();
            assert!(n.total_length() <= l + 1e-12);
            assert!(n.topology_report().unwrap().is_tree());
        }
    }

    #[test]
    fn split_reduces_degree() {
        let verts = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0], vec![0.0, -1.0]];
        let net = Network::new(2, &verts, vec![[0, 1], [0, 2], [0, 3], [0, 4]]).unwrap();
        let s = split_high_degree(&net, 0, 1e-3).unwrap();
        let t = s.topology_report().unwrap();
        assert_eq!(t.max_degree, 3);
        assert!(t.is_tree());
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let m = sample_density(&DensitySpec::unit_square(), 200, 11).unwrap();
        let net = Network::polyline(&[vec![0.2, 0.3], vec![0.5, 0.55], vec![0.8, 0.4]]).unwrap();
        let opts = ProjectionOptions::with_scale(1.0);
        let table = projection::project(&m, &net, &opts).unwrap();
        let vg = vertex_gradient(&m, &net, &table, 2.0, 0.0);
        let j0 = functional::j_p(&m, &table, 2.0).unwrap();
        let h = 1e-7;
        for i in 0..net.coords().len() {
            let mut c = net.coords().to_vec();
            c[i] += h;
            let j1 = functional::evaluate(&m, &net.with_coords(c).unwrap(), 2.0, &opts).unwrap();
            assert_abs_diff_eq!(-(j1 - j0) / h, vg.g[i], epsilon = 1e-5);
        }
    }
}
