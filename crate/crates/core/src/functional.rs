//! The objective `J_p`, its soft-penalty variant, the barycentre field and
//! its Lipschitz smoothing, and first-variation checks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{axpy, dist, dot, norm_sq, pow0};
use crate::measure::DiscreteMeasure;
use crate::network::{Network, SampledNetwork};
use crate::projection::{self, ProjectionOptions, ProjectionTable, PushforwardMeasure};

fn check_p(p: f64) -> Result<()> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::validation(format!("exponent p must be >= 1, got {p}")));
    }
    Ok(())
}

/// `J_p = sum_i w_i dist_i^p`.
pub fn j_p(measure: &DiscreteMeasure, table: &ProjectionTable, p: f64) -> Result<f64> {
    check_p(p)?;
    if table.len() != measure.len() {
        return Err(Error::validation("projection table does not match the measure"));
    }
    Ok(table
        .entries
        .iter()
        .zip(measure.weights())
        .map(|(e, &w)| w * e.distance.powf(p))
        .sum())
}

/// `J_p + lambda * H^1`.
pub fn j_soft(measure: &DiscreteMeasure, table: &ProjectionTable, net: &Network, p: f64, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::validation(format!("penalty lambda must be > 0, got {lambda}")));
    }
    Ok(j_p(measure, table, p)? + lambda * net.total_length())
}

/// Projects and evaluates `J_p` in one step.
pub fn evaluate(measure: &DiscreteMeasure, net: &Network, p: f64, opts: &ProjectionOptions) -> Result<f64> {
    let table = projection::project(measure, net, opts)?;
    j_p(measure, &table, p)
}

/// Barycentre field on the nodes of a sampled network.
#[derive(Debug, Clone, PartialEq)]
pub struct BarycentreField {
    dim: usize,
    /// Row-major `B(sigma)` per node.
    b: Vec<f64>,
    /// `nu(sigma)` per node.
    pub mass: Vec<f64>,
    /// `sum_sigma B(sigma) nu(sigma)`.
    pub net: Vec<f64>,
    /// `sum_sigma |B(sigma)|^2 nu(sigma)`.
    pub l2sq: f64,
    pub p: f64,
}

impl BarycentreField {
    /// Builds a field from explicit node vectors and masses.
    pub fn from_parts(dim: usize, b: Vec<f64>, mass: Vec<f64>, p: f64) -> Result<Self> {
        if b.len() != dim * mass.len() {
            return Err(Error::validation("field vectors and masses disagree in length"));
        }
        let mut net = vec![0.0; dim];
        let mut l2sq = 0.0;
        for (v, &m) in b.chunks_exact(dim).zip(&mass) {
            axpy(&mut net, m, v);
            l2sq += norm_sq(v) * m;
        }
        Ok(Self { dim, b, mass, net, l2sq, p })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    #[inline]
    pub fn at(&self, node: usize) -> &[f64] {
        &self.b[node * self.dim..(node + 1) * self.dim]
    }

    pub fn vectors(&self) -> &[f64] {
        &self.b
    }

    pub fn max_norm(&self) -> f64 {
        self.b
            .chunks_exact(self.dim)
            .map(|v| norm_sq(v).sqrt())
            .fold(0.0, f64::max)
    }

    /// `int |B| d nu` over the nodes in `ids`.
    pub fn l1_over(&self, ids: impl IntoIterator<Item = usize>) -> f64 {
        ids.into_iter()
            .map(|i| norm_sq(self.at(i)).sqrt() * self.mass[i])
            .sum()
    }

    /// CSV export: `node,x_1..x_d,nu,B_1..B_d`.
    pub fn to_csv(&self, sampled: &SampledNetwork) -> String {
        let mut out = String::from("node");
        for k in 0..self.dim {
            out.push_str(&format!(",x{}", k + 1));
        }
        out.push_str(",nu");
        for k in 0..self.dim {
            out.push_str(&format!(",B{}", k + 1));
        }
        out.push('\n');
        for (i, node) in sampled.nodes().iter().enumerate() {
            out.push_str(&i.to_string());
            for c in &node.pos {
                out.push_str(&format!(",{c:?}"));
            }
            out.push_str(&format!(",{:?}", self.mass[i]));
            for c in self.at(i) {
                out.push_str(&format!(",{c:?}"));
            }
            out.push('\n');
        }
        out
    }
}

/// `B(sigma) = (p / nu(sigma)) sum_{i in fiber} w_i |x_i - sigma|^{p-2} (x_i - sigma)`.
///
/// For `p < 2` a fiber point coinciding with its node makes the integrand
/// singular. With `exclude_within = None` this is an error; with
/// `Some(tol)` points closer than `tol` are dropped from the sums (their
/// mass still counts towards `nu`) and a warning is logged.
pub fn barycentre_field(
    measure: &DiscreteMeasure,
    pushforward: &PushforwardMeasure,
    sampled: &SampledNetwork,
    p: f64,
    exclude_within: Option<f64>,
) -> Result<BarycentreField> {
    check_p(p)?;
    let dim = measure.dim();
    if pushforward.node_mass.len() != sampled.len() {
        return Err(Error::validation("pushforward was built on a different sampling"));
    }
    let mut b = vec![0.0; sampled.len() * dim];
    let mut excluded = 0usize;
    for (node, fiber) in pushforward.fiber.iter().enumerate() {
        let mass = pushforward.node_mass[node];
        if mass <= 0.0 {
            continue;
        }
        let sigma = &sampled.nodes()[node].pos;
        let acc = &mut b[node * dim..(node + 1) * dim];
        for &i in fiber {
            let x = measure.point(i);
            let r = dist(x, sigma);
            if p < 2.0 {
                let tol = exclude_within.unwrap_or(0.0);
                if r <= tol {
                    if exclude_within.is_none() {
                        return Err(Error::SingularIntegrand { index: i, p });
                    }
                    excluded += 1;
                    continue;
                }
            }
            let s = measure.weight(i) * pow0(r, p - 2.0);
            for k in 0..dim {
                acc[k] += s * (x[k] - sigma[k]);
            }
        }
        let scale = p / mass;
        acc.iter_mut().for_each(|c| *c *= scale);
    }
    if excluded > 0 {
        log::warn!("{excluded} measure points lie on the network and were left out of the barycentre field (p = {p})");
    }
    BarycentreField::from_parts(dim, b, pushforward.node_mass.clone(), p)
}

/// `B^net = int B d nu`.
pub fn net_field(field: &BarycentreField) -> Vec<f64> {
    field.net.clone()
}

/// A displacement field on sampling nodes with its Lipschitz data.
#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzField {
    dim: usize,
    xi: Vec<f64>,
    pub lip_estimate: f64,
    pub sup_norm: f64,
    /// `<xi, B>_{L^2(nu)}` against the field it was built from; zero for
    /// fields not derived from a barycentre field.
    pub pairing: f64,
    pub bandwidth: f64,
}

impl LipschitzField {
    /// Wraps explicit node values; the Lipschitz estimate is taken over all
    /// node pairs of `sampled`.
    pub fn from_values(sampled: &SampledNetwork, xi: Vec<f64>) -> Result<Self> {
        let dim = sampled.dim();
        if xi.len() != dim * sampled.len() {
            return Err(Error::validation("field values do not match the node count"));
        }
        let lip_estimate = lipschitz_over_pairs(sampled, &xi, dim);
        let sup_norm = sup_norm(&xi, dim);
        Ok(Self {
            dim,
            xi,
            lip_estimate,
            sup_norm,
            pairing: 0.0,
            bandwidth: 0.0,
        })
    }

    /// Samples a map `R^d -> R^d` at the nodes.
    pub fn from_fn(sampled: &SampledNetwork, f: impl Fn(&[f64]) -> Vec<f64>) -> Result<Self> {
        let xi = sampled.nodes().iter().flat_map(|n| f(&n.pos)).collect();
        Self::from_values(sampled, xi)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.xi.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.xi.is_empty()
    }

    #[inline]
    pub fn at(&self, node: usize) -> &[f64] {
        &self.xi[node * self.dim..(node + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.xi
    }

    /// `min{1/L, 1/max|xi|}`: the largest `lambda` making `lambda xi` both
    /// 1-Lipschitz and bounded by 1, as the endpoint mass bound requires.
    pub fn lambda_constant(&self) -> f64 {
        let inv = |x: f64| if x > 0.0 { 1.0 / x } else { f64::INFINITY };
        inv(self.lip_estimate).min(inv(self.sup_norm))
    }

    /// `max{1/L, 1/max|xi|}`, reported alongside [`Self::lambda_constant`].
    pub fn lambda_max_constant(&self) -> f64 {
        let inv = |x: f64| if x > 0.0 { 1.0 / x } else { f64::INFINITY };
        inv(self.lip_estimate).max(inv(self.sup_norm))
    }
}

fn sup_norm(xi: &[f64], dim: usize) -> f64 {
    xi.chunks_exact(dim).map(|v| norm_sq(v).sqrt()).fold(0.0, f64::max)
}

fn lipschitz_over_pairs(sampled: &SampledNetwork, xi: &[f64], dim: usize) -> f64 {
    let nodes = sampled.nodes();
    let mut lip = 0.0_f64;
    for i in 0..nodes.len() {
        for j in i + 1..nodes.len() {
            let d = dist(&nodes[i].pos, &nodes[j].pos);
            if d > 0.0 {
                let dv = dist(&xi[i * dim..(i + 1) * dim], &xi[j * dim..(j + 1) * dim]);
                lip = lip.max(dv / d);
            }
        }
    }
    lip
}

/// Maximum number of bandwidth halvings in [`mollify`].
pub const MAX_HALVINGS: usize = 40;

/// Gaussian kernel regression of `B` against `nu` over the nodes. The
/// bandwidth is halved until `<xi, B> > l2sq / 2`.
pub fn mollify(field: &BarycentreField, sampled: &SampledNetwork, bandwidth: f64) -> Result<LipschitzField> {
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::validation(format!("bandwidth must be positive, got {bandwidth}")));
    }
    if field.len() != sampled.len() {
        return Err(Error::validation("field and sampling disagree on the node set"));
    }
    if field.l2sq <= 0.0 {
        return Err(Error::validation("barycentre field is trivial; nothing to approximate"));
    }
    let dim = field.dim;
    let nodes = sampled.nodes();
    let n = nodes.len();
    // pairwise squared distances, reused across halvings
    let mut d2 = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = crate::geom::dist_sq(&nodes[i].pos, &nodes[j].pos);
            d2[i * n + j] = v;
            d2[j * n + i] = v;
        }
    }
    let mut bw = bandwidth;
    let mut last_pairing = 0.0;
    for _ in 0..=MAX_HALVINGS {
        let inv = 1.0 / (2.0 * bw * bw);
        let mut xi = vec![0.0; n * dim];
        for i in 0..n {
            let mut den = 0.0;
            let acc = &mut xi[i * dim..(i + 1) * dim];
            for j in 0..n {
                let m = field.mass[j];
                if m <= 0.0 {
                    continue;
                }
                let k = (-d2[i * n + j] * inv).exp() * m;
                if k == 0.0 {
                    continue;
                }
                den += k;
                for c in 0..dim {
                    acc[c] += k * field.b[j * dim + c];
                }
            }
            if den > 0.0 {
                acc.iter_mut().for_each(|c| *c /= den);
            }
        }
        let pairing: f64 = (0..n)
            .map(|i| dot(&xi[i * dim..(i + 1) * dim], field.at(i)) * field.mass[i])
            .sum();
        last_pairing = pairing;
        if pairing > 0.5 * field.l2sq {
            let lip_estimate = lipschitz_over_pairs(sampled, &xi, dim);
            return Ok(LipschitzField {
                dim,
                sup_norm: sup_norm(&xi, dim),
                xi,
                lip_estimate,
                pairing,
                bandwidth: bw,
            });
        }
        bw *= 0.5;
    }
    Err(Error::Mollification {
        halvings: MAX_HALVINGS,
        pairing: last_pairing,
        l2sq: field.l2sq,
    })
}

/// `-sum_sigma xi(sigma) . B(sigma) nu(sigma)`, the first-order change of
/// `J_p` along the deformation `sigma -> sigma + eps xi(sigma)`.
pub fn first_variation(field: &BarycentreField, xi: &LipschitzField) -> Result<f64> {
    if field.len() != xi.len() || field.dim != xi.dim {
        return Err(Error::validation(format!(
            "node sets differ: field has {} nodes, displacement has {}",
            field.len(),
            xi.len()
        )));
    }
    Ok(-(0..field.len())
        .map(|i| dot(xi.at(i), field.at(i)) * field.mass[i])
        .sum::<f64>())
}

/// Finite-difference check of the first variation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdReport {
    pub eps: Vec<f64>,
    pub quotients: Vec<f64>,
    pub first_variation: f64,
    /// `q(eps) - first_variation` per step.
    pub gaps: Vec<f64>,
    /// `|gap_i| / |gap_{i+1}|`.
    pub ratios: Vec<f64>,
    /// `|gap_0| / eps_0`.
    pub fitted_c: f64,
    /// Every gap satisfies `|gap| <= 2 C eps + floor`.
    pub linear_decay: bool,
    pub j0: f64,
}

/// Deforms the node polyline of `sampled` by `eps * xi` and compares
/// `(J_p(deformed) - J_p) / eps` with [`first_variation`].
///
/// The node-lumped first variation is exact when every foot point is a
/// node, so callers wanting second-order agreement should sample with the
/// feet inserted (see [`sampled_with_feet`]).
pub fn fd_check(
    measure: &DiscreteMeasure,
    sampled: &SampledNetwork,
    xi: &LipschitzField,
    p: f64,
    eps_list: &[f64],
    opts: &ProjectionOptions,
) -> Result<FdReport> {
    check_p(p)?;
    if eps_list.iter().any(|&e| !(e > 0.0)) || eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::validation("eps list must be positive and decreasing"));
    }
    let base = sampled.base();
    let table = projection::project(measure, base, opts)?;
    let pf = projection::pushforward(&table, sampled, measure)?;
    let field = barycentre_field(measure, &pf, sampled, p, None)?;
    let fv = first_variation(&field, xi)?;
    let j0 = j_p(measure, &table, p)?;

    let poly = sampled.node_network();
    let mut quotients = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let moved = crate::perturb::deform_by_values(&poly, xi.values(), eps)?;
        let j = evaluate(measure, &moved, p, opts)?;
        quotients.push((j - j0) / eps);
    }
    let gaps: Vec<f64> = quotients.iter().map(|q| q - fv).collect();
    let ratios = gaps
        .windows(2)
        .map(|w| if w[1] != 0.0 { w[0].abs() / w[1].abs() } else { f64::INFINITY })
        .collect();
    let fitted_c = match (gaps.first(), eps_list.first()) {
        (Some(g), Some(e)) => g.abs() / e,
        _ => 0.0,
    };
    let floor = 1e-10 * (j0.abs() + 1e-300).max(1e-12);
    let linear_decay = gaps
        .iter()
        .zip(eps_list)
        .all(|(g, e)| g.abs() <= 2.0 * fitted_c * e + floor);
    Ok(FdReport {
        eps: eps_list.to_vec(),
        quotients,
        first_variation: fv,
        gaps,
        ratios,
        fitted_c,
        linear_decay,
        j0,
    })
}

/// Samples `net` at spacing `h` and inserts a node at every foot point of
/// the measure.
pub fn sampled_with_feet(measure: &DiscreteMeasure, net: &Network, h: f64, opts: &ProjectionOptions) -> Result<SampledNetwork> {
    let table = projection::project(measure, net, opts)?;
    let extra: Vec<(usize, f64)> = table
        .entries
        .iter()
        .filter_map(|e| e.edge.map(|edge| (edge, e.t)))
        .collect();
    SampledNetwork::new(net.clone(), h, &extra)
}
