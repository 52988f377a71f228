//! Perturbations of a network: deformation by a displacement field,
//! homothety, the cross gadget and the competitor built from it, plus the
//! pointwise and aggregate lower bounds that accompany the competitor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functional::{j_p, LipschitzField};
use crate::geom::{dist, dot, norm_inf, norm_sq, pow0, sub};
use crate::measure::{hull_summary, DiscreteMeasure};
use crate::network::{Network, SampledNetwork};
use crate::projection::{self, ProjectionOptions, ProjectionTable, PushforwardMeasure};

/// Moves every vertex `v` of the base network to `v + eps * xi(v)`.
pub fn deform(sampled: &SampledNetwork, xi: &LipschitzField, eps: f64) -> Result<Network> {
    if xi.len() != sampled.len() {
        return Err(Error::validation("displacement is not defined on this sampling"));
    }
    let base = sampled.base();
    let values: Vec<f64> = (0..base.num_vertices())
        .flat_map(|v| xi.at(sampled.vertex_node(v)).to_vec())
        .collect();
    deform_by_values(base, &values, eps)
}

/// Moves vertex `i` by `eps * values[i]` (row-major, one row per vertex).
pub fn deform_by_values(net: &Network, values: &[f64], eps: f64) -> Result<Network> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::validation(format!("deformation size must be >= 0, got {eps}")));
    }
    if values.len() != net.coords().len() {
        return Err(Error::validation("one displacement per vertex is required"));
    }
    let coords = net.coords().iter().zip(values).map(|(x, v)| x + eps * v).collect();
    net.with_coords(coords)
}

/// `(1 - eps) Sigma` about `center`.
pub fn shrink(net: &Network, eps: f64, center: &[f64]) -> Result<Network> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::validation(format!("shrink factor must lie in [0, 1), got {eps}")));
    }
    if center.len() != net.dim() {
        return Err(Error::DimensionMismatch {
            expected: net.dim(),
            found: center.len(),
        });
    }
    net.scaled_about(center, 1.0 - eps)
}

/// Star at the origin with arms `+- tau e_k`, `k = 1..d`. Vertex 0 is the
/// centre; arm `2k + 1` points along `+e_k`, arm `2k + 2` along `-e_k`.
pub fn cross(tau: f64, d: usize) -> Result<Network> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::validation(format!("cross arm length must be positive, got {tau}")));
    }
    if d < 2 {
        return Err(Error::validation("cross needs d >= 2"));
    }
    let mut verts = vec![vec![0.0; d]];
    let mut edges = Vec::with_capacity(2 * d);
    for k in 0..d {
        for s in [1.0, -1.0] {
            let mut v = vec![0.0; d];
            v[k] = s * tau;
            edges.push([0, verts.len()]);
            verts.push(v);
        }
    }
    Network::new(d, &verts, edges)
}

/// Squared distance from `x` to the cross of arm length `tau` at the origin.
pub fn cross_dist_sq(x: &[f64], tau: f64) -> f64 {
    let inf = norm_inf(x);
    let over = (inf - tau).max(0.0);
    (norm_sq(x) + over * over - inf * inf).max(0.0)
}

/// Parameters of the competitor `(1 - eps) Sigma u S_tau` centred at a
/// vertex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompetitorSpec {
    pub center: Vec<f64>,
    pub eps: f64,
    pub tau: f64,
    pub alpha: f64,
    pub budget: f64,
}

impl CompetitorSpec {
    /// `alpha = l / 2d`, `tau = alpha * eps`, so the cross has length `l eps`.
    pub fn new(center: Vec<f64>, eps: f64, budget: f64) -> Result<Self> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::validation(format!("eps must lie in (0, 1), got {eps}")));
        }
        if !(budget > 0.0 && budget.is_finite()) {
            return Err(Error::validation(format!("budget must be positive, got {budget}")));
        }
        let d = center.len();
        if d < 2 {
            return Err(Error::validation("competitor centre needs d >= 2"));
        }
        let alpha = budget / (2 * d) as f64;
        Ok(Self {
            center,
            eps,
            tau: alpha * eps,
            alpha,
            budget,
        })
    }

    pub fn cross_length(&self) -> f64 {
        2.0 * self.center.len() as f64 * self.tau
    }
}

fn find_vertex(net: &Network, p: &[f64]) -> Option<usize> {
    let (v, d) = net.nearest_vertex(p);
    let tol = 1e-12 * (1.0 + p.iter().map(|c| c.abs()).fold(0.0, f64::max));
    (d <= tol).then_some(v)
}

/// Shrinks about the centre vertex and grafts the cross onto it.
pub fn competitor(net: &Network, spec: &CompetitorSpec) -> Result<Network> {
    if spec.center.len() != net.dim() {
        return Err(Error::DimensionMismatch {
            expected: net.dim(),
            found: spec.center.len(),
        });
    }
    let c = find_vertex(net, &spec.center).ok_or_else(|| {
        Error::validation("competitor centre is not a network vertex; snap it first")
    })?;
    let shrunk = shrink(net, spec.eps, &spec.center)?;
    let d = net.dim();
    let mut coords = shrunk.coords().to_vec();
    let mut edges = shrunk.edges().to_vec();
    let base = net.vertex(c).to_vec();
    for k in 0..d {
        for s in [1.0, -1.0] {
            let id = coords.len() / d;
            let mut v = base.clone();
            v[k] += s * spec.tau;
            coords.extend_from_slice(&v);
            edges.push([c, id]);
        }
    }
    Network::from_flat(d, coords, edges)
}

/// `kappa_p(eps)`: `0` at `p = 2`, `(c eps)^{p-2}` for `2 < p < 3`,
/// `(p - 2) c eps M^{p-3}` for `p >= 3`.
pub fn kappa_p(p: f64, c: f64, eps: f64, m: f64) -> f64 {
    if p == 2.0 {
        0.0
    } else if p < 3.0 {
        (c * eps).powf(p - 2.0)
    } else {
        (p - 2.0) * c * eps * pow0(m, p - 3.0)
    }
}

/// `zeta(d, d*)` for the three exponent regimes.
pub fn zeta(p: f64, d: f64, d_star: f64) -> f64 {
    if p == 2.0 {
        0.0
    } else if p < 3.0 {
        -(d - d_star).abs().powf(p - 2.0)
    } else {
        (p - 2.0) * (d_star - d) * pow0(d, p - 3.0)
    }
}

/// The two arguments of the max defining `psi_1`, with `x` and its foot
/// `pi` in coordinates centred at the competitor centre.
pub fn psi_parts(x: &[f64], pi: &[f64], eps: f64, tau: f64) -> (f64, f64) {
    let r = sub(x, pi);
    let pr = dot(pi, &r);
    let pp = norm_sq(pi);
    let shrink_part = -2.0 * eps * pr - eps * eps * pp;
    let cross_part = -2.0 * pr - pp + 2.0 * tau * norm_inf(x) - tau * tau;
    (shrink_part, cross_part)
}

/// `psi = min(psi_1, 0)`.
pub fn psi(x: &[f64], pi: &[f64], eps: f64, tau: f64) -> f64 {
    let (a, b) = psi_parts(x, pi, eps, tau);
    a.max(b).min(0.0)
}

/// Pointwise and aggregate comparison of `Sigma` with its competitor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub p: f64,
    pub eps: f64,
    pub tau: f64,
    pub alpha: f64,
    pub kappa_p: f64,
    #[serde(rename = "M")]
    pub m: f64,
    pub c: f64,
    pub a_radius: f64,
    pub a_mass: f64,
    pub beta_a: f64,
    pub tol: f64,
    pub violations: usize,
    /// Smallest `lhs - psi` over the points.
    pub min_slack: f64,
    pub j_sigma: f64,
    pub j_star: f64,
    /// `J_p(Sigma) - J_p(Sigma*)`.
    pub aggregate_lhs: f64,
    /// `(p/2) int psi d^{p-2} + (p/2) int psi zeta`.
    pub aggregate_rhs: f64,
    pub aggregate_tol: f64,
    pub aggregate_holds: bool,
    /// `(p/2) int psi dist(x, Sigma*)^{p-2}`, the bound before `zeta` enters.
    pub star_rhs: f64,
    pub star_holds: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub psi: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub zeta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lhs: Vec<f64>,
}

impl BoundReport {
    /// Drops the per-point arrays.
    pub fn summary(mut self) -> Self {
        self.psi.clear();
        self.zeta.clear();
        self.lhs.clear();
        self
    }
}

/// Evaluates the pointwise bound `dist(x,Sigma)^2 - dist(x,Sigma*)^2 >= psi(x)`
/// and the aggregate bound on `J_p(Sigma) - J_p(Sigma*)`.
///
/// `table` must be the projection of `measure` onto `net`. The set `A` is
/// the part of the network within `a_radius` of the centre; its mass and
/// extent are measured through the feet of the measure points.
pub fn bound_check(
    measure: &DiscreteMeasure,
    net: &Network,
    table: &ProjectionTable,
    spec: &CompetitorSpec,
    p: f64,
    a_radius: f64,
) -> Result<BoundReport> {
    if !(p >= 2.0 && p.is_finite()) {
        return Err(Error::Unsupported(format!("bound check needs p >= 2, got {p}")));
    }
    if table.len() != measure.len() {
        return Err(Error::validation("projection table does not match the measure"));
    }
    let star = competitor(net, spec)?;
    let m = hull_summary(measure).diameter;
    let opts = ProjectionOptions::with_scale(m);
    let star_table = projection::project(measure, &star, &opts)?;
    let center = &spec.center;

    let n = measure.len();
    let tol = 1e-9 * m * m;
    let mut psi_v = Vec::with_capacity(n);
    let mut zeta_v = Vec::with_capacity(n);
    let mut lhs_v = Vec::with_capacity(n);
    let mut violations = 0;
    let mut min_slack = f64::INFINITY;
    let mut rhs = 0.0;
    let mut star_rhs = 0.0;
    let mut a_mass = 0.0;
    let mut beta_a: f64 = 0.0;
    for i in 0..n {
        let x = sub(measure.point(i), center);
        let entry = &table.entries[i];
        let pi = sub(&entry.foot, center);
        let d = entry.distance;
        let ds = star_table.entries[i].distance;
        let ps = psi(&x, &pi, spec.eps, spec.tau);
        let z = zeta(p, d, ds);
        let lhs = d * d - ds * ds;
        if lhs < ps - tol {
            violations += 1;
        }
        min_slack = min_slack.min(lhs - ps);
        let w = measure.weight(i);
        rhs += w * (ps * pow0(d, p - 2.0) + ps * z);
        star_rhs += w * ps * pow0(ds, p - 2.0);
        let r = norm_sq(&pi).sqrt();
        if r <= a_radius {
            a_mass += w;
            beta_a = beta_a.max(r);
        }
        psi_v.push(ps);
        zeta_v.push(z);
        lhs_v.push(lhs);
    }
    rhs *= p / 2.0;
    star_rhs *= p / 2.0;
    let j_sigma = j_p(measure, table, p)?;
    let j_star = j_p(measure, &star_table, p)?;
    let aggregate_lhs = j_sigma - j_star;
    let aggregate_tol = 1e-9 * m.powf(p);
    let c = m.max(spec.alpha);
    Ok(BoundReport {
        p,
        eps: spec.eps,
        tau: spec.tau,
        alpha: spec.alpha,
        kappa_p: kappa_p(p, c, spec.eps, m),
        m,
        c,
        a_radius,
        a_mass,
        beta_a,
        tol,
        violations,
        min_slack,
        j_sigma,
        j_star,
        aggregate_lhs,
        aggregate_rhs: rhs,
        aggregate_tol,
        aggregate_holds: aggregate_lhs >= rhs - aggregate_tol,
        star_rhs,
        star_holds: aggregate_lhs >= star_rhs - aggregate_tol,
        psi: psi_v,
        zeta: zeta_v,
        lhs: lhs_v,
    })
}

/// Ball-mass ratios `nu(B_r(node)) / r^s` over a list of radii.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub in_bks: bool,
    pub ratios: Vec<f64>,
}

pub fn local_dimension_probe(
    pushforward: &PushforwardMeasure,
    sampled: &SampledNetwork,
    node: usize,
    radii: &[f64],
    s: f64,
    k: f64,
) -> Result<ProbeResult> {
    if node >= sampled.len() {
        return Err(Error::validation(format!("node {node} out of range")));
    }
    if radii.iter().any(|&r| !(r > 0.0)) || radii.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::validation("radii must be positive and decreasing"));
    }
    if !(0.0..1.0).contains(&s) {
        return Err(Error::validation(format!("exponent s must lie in [0, 1), got {s}")));
    }
    let center = &sampled.nodes()[node].pos;
    let ratios: Vec<f64> = radii
        .iter()
        .map(|&r| {
            let mass: f64 = sampled
                .nodes()
                .iter()
                .zip(&pushforward.node_mass)
                .filter(|(n, _)| dist(&n.pos, center) <= r)
                .map(|(_, m)| m)
                .sum();
            mass / r.powf(s)
        })
        .collect();
    let in_bks = ratios.iter().any(|&r| r > k);
    Ok(ProbeResult { in_bks, ratios })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit_segment() -> Network {
        Network::segment(&[0.0, 0.0], &[1.0, 0.0]).unwrap()
    }

    #[test]
    fn deform_identity_and_translation() {
        let s = unit_segment().subdivide(0.5).unwrap();
        let xi = LipschitzField::from_fn(&s, |_| vec![0.3, -0.2]).unwrap();
        assert_eq!(&deform(&s, &xi, 0.0).unwrap(), s.base());
        let moved = deform(&s, &xi, 0.5).unwrap();
        assert_eq!(moved.vertex(0), &[0.15, -0.1]);
        assert_abs_diff_eq!(moved.total_length(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn deform_collapse_is_degenerate() {
        let net = unit_segment();
        let r = deform_by_values(&net, &[1.0, 0.0, 0.0, 0.0], 1.0);
        assert!(matches!(r, Err(Error::DegenerateGeometry(_))));
    }

    #[test]
    fn deform_length_bound() {
        let net = Network::polyline(&[vec![0.0, 0.0], vec![0.4, 0.1], vec![0.7, -0.2]]).unwrap();
        let s = net.subdivide(0.05).unwrap();
        let l = net.total_length();
        // 1/l-Lipschitz rotation-like field
        let xi = LipschitzField::from_fn(&s, |x| vec![-x[1] / l, x[0] / l]).unwrap();
        assert!(xi.lip_estimate <= 1.0 / l + 1e-12);
        for eps in [1e-3, 1e-2] {
            let moved = deform(&s, &xi, eps).unwrap();
            assert!(moved.total_length() <= l + eps + 1e-12);
            assert!(moved.total_length() <= (1.0 + eps * xi.lip_estimate) * l + 1e-12);
        }
    }

    #[test]
    fn shrink_cases() {
        let net = unit_segment();
        assert_eq!(shrink(&net, 0.0, &[0.3, 0.0]).unwrap(), net);
        let s = shrink(&net, 0.5, &[0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(s.total_length(), 0.5, epsilon = 1e-15);
        assert_eq!(s.vertex(0), &[0.0, 0.0]);
        assert!(shrink(&net, 1.0, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn cross_shapes() {
        let c = cross(1.0, 2).unwrap();
        assert_eq!(c.total_length(), 4.0);
        let c3 = cross(0.5, 3).unwrap();
        assert_eq!(c3.total_length(), 3.0);
        let t = c3.topology_report().unwrap();
        assert_eq!(t.endpoint_count, 6);
        assert_eq!(t.branch_point_count, 1);
        assert_eq!(t.max_degree, 6);
    }

    #[test]
    fn cross_distance_examples() {
        assert_eq!(cross_dist_sq(&[0.0, 0.0], 1.0), 0.0);
        assert_abs_diff_eq!(cross_dist_sq(&[3.0, 4.0], 5.0), 9.0, epsilon = 1e-12);
        assert_abs_diff_eq!(cross_dist_sq(&[0.0, 6.0], 5.0), 1.0, epsilon = 1e-12);
        let c = cross(5.0, 2).unwrap();
        let d = projection::distance_to(&c, &[3.0, 4.0]);
        assert_abs_diff_eq!(d * d, 9.0, epsilon = 1e-12);
    }

    #[test]
    fn competitor_budget_and_topology() {
        let net = Network::polyline(&[vec![0.0, 0.0], vec![0.5, 0.0], vec![0.5, 0.5]]).unwrap();
        let l = net.total_length();
        let spec = CompetitorSpec::new(vec![0.5, 0.0], 0.1, l).unwrap();
        assert_abs_diff_eq!(spec.cross_length(), l * 0.1, epsilon = 1e-15);
        let star = competitor(&net, &spec).unwrap();
        assert!(star.total_length() <= l + 1e-9);
        let t0 = net.topology_report().unwrap();
        let t1 = star.topology_report().unwrap();
        assert_eq!(t1.cycle_rank, t0.cycle_rank);
        assert_eq!(t1.endpoint_count, t0.endpoint_count + 4);

        let off = CompetitorSpec::new(vec![0.25, 0.0], 0.1, l).unwrap();
        assert!(competitor(&net, &off).is_err());
    }

    #[test]
    fn kappa_regimes() {
        assert_eq!(kappa_p(2.0, 1.0, 0.01, 1.0), 0.0);
        assert_abs_diff_eq!(kappa_p(2.5, 1.0, 0.01, 1.0), 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(kappa_p(4.0, 2.0, 0.1, 3.0), 2.0 * 2.0 * 0.1 * 3.0, epsilon = 1e-15);
    }

    #[test]
    fn psi_structure() {
        let x = [0.3, 0.8];
        let pi = [0.2, 0.1];
        let (a, b) = psi_parts(&x, &pi, 0.05, 0.02);
        let full = psi(&x, &pi, 0.05, 0.02);
        assert!(full <= 0.0);
        assert!(a.min(0.0) <= full && b.min(0.0) <= full);
    }

    #[test]
    fn bound_check_rejects_small_p() {
        let m = DiscreteMeasure::new(2, &[vec![0.2, 0.3]], None).unwrap();
        let net = unit_segment();
        let t = projection::project(&m, &net, &ProjectionOptions::with_scale(1.0)).unwrap();
        let spec = CompetitorSpec::new(vec![0.0, 0.0], 0.1, 1.0).unwrap();
        assert!(matches!(bound_check(&m, &net, &t, &spec, 1.5, 0.1), Err(Error::Unsupported(_))));
    }

    #[test]
    fn bound_check_p2_small_instance() {
        let pts: Vec<Vec<f64>> = (0..40)
            .map(|i| {
                let a = i as f64 * 0.37;
                vec![0.5 + 0.4 * a.cos(), 0.5 + 0.4 * (1.3 * a).sin()]
            })
            .collect();
        let m = DiscreteMeasure::new(2, &pts, None).unwrap();
        let net = Network::polyline(&[vec![0.2, 0.5], vec![0.5, 0.5], vec![0.8, 0.6]]).unwrap();
        let t = projection::project(&m, &net, &ProjectionOptions::with_scale(1.0)).unwrap();
        let spec = CompetitorSpec::new(vec![0.5, 0.5], 0.05, net.total_length()).unwrap();
        let r = bound_check(&m, &net, &t, &spec, 2.0, 0.1).unwrap();
        assert_eq!(r.violations, 0);
        assert_eq!(r.kappa_p, 0.0);
        assert!(r.aggregate_holds && r.star_holds);
        assert!(r.psi.iter().all(|&v| v <= 0.0));
    }

    #[test]
    fn probe_atom_and_uniform() {
        let net = unit_segment();
        let s = net.subdivide(0.01).unwrap();
        let n = s.len();
        let mut mass = vec![0.5 / (n - 1) as f64; n];
        mass[0] = 0.5;
        let pf = PushforwardMeasure {
            node_mass: mass,
            fiber: vec![Vec::new(); n],
            node_of_point: Vec::new(),
        };
        let r = local_dimension_probe(&pf, &s, 0, &[0.1, 0.01, 0.001], 0.0, 0.4).unwrap();
        assert!(r.in_bks);
        assert!(r.ratios.iter().all(|&v| v >= 0.5));

        let uni = PushforwardMeasure {
            node_mass: vec![1.0 / n as f64; n],
            fiber: vec![Vec::new(); n],
            node_of_point: Vec::new(),
        };
        let mid = s.nearest_node_on_edge(0, 0.5);
        let r = local_dimension_probe(&uni, &s, mid, &[0.2, 0.02, 0.001], 0.0, 0.5).unwrap();
        assert!(r.ratios.windows(2).all(|w| w[1] <= w[0]));
        assert!(r.ratios[2] < 0.011);
    }
}
