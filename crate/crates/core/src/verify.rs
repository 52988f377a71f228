//! Checks of the structural properties expected of minimizers, evaluated on
//! a given measure and network. Failures are reported, never raised.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functional::{self, FdReport, LipschitzField};
use crate::geom::{axpy, dist, norm, pow0};
use crate::measure::{hull_summary, DiscreteMeasure};
use crate::network::{Network, TopologyReport};
use crate::perturb;
use crate::projection::{self, ProjectionOptions};
use crate::solver::{field_snapshot, FieldSnapshot, Mode, SolveResult, SolverConfig};

/// `(p/q)(a^q - b^q) b^{p-q}` and `(p/q)(a^q - b^q) a^{p-q}`, which bracket
/// `a^p - b^p`.
pub fn power_bounds(a: f64, b: f64, p: f64, q: f64) -> Result<(f64, f64)> {
    if !(q > 0.0 && p >= q) {
        return Err(Error::validation(format!("need p >= q > 0, got p = {p}, q = {q}")));
    }
    if !(a >= 0.0 && b >= 0.0) {
        return Err(Error::validation("a and b must be nonnegative"));
    }
    let diff = (p / q) * (a.powf(q) - b.powf(q));
    let lo = diff * pow0(b, p - q);
    let hi = diff * pow0(a, p - q);
    Ok((lo.min(hi), lo.max(hi)))
}

/// Whether the topological characterization covers exponent `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeInfo {
    pub p: f64,
    pub covered: bool,
    pub threshold: f64,
}

/// Largest root of `p^2 - 3p + 1`.
pub const REGIME_THRESHOLD: f64 = 2.618_033_988_749_895;

pub fn regime_table(p: f64) -> Result<RegimeInfo> {
    if !(p >= 1.0) {
        return Err(Error::validation(format!("p must be >= 1, got {p}")));
    }
    Ok(RegimeInfo {
        p,
        covered: p == 2.0 || p > REGIME_THRESHOLD,
        threshold: REGIME_THRESHOLD,
    })
}

/// Endpoint mass check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomCheck {
    pub vertex: usize,
    pub position: Vec<f64>,
    /// `nu` of the ball of radius `2h` about the endpoint.
    pub ball_mass: f64,
    pub b_norm: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
    /// Right side with `max{1/L, 1/max|xi|}` in place of the minimum.
    pub rhs_max_constant: f64,
    pub pass_max_constant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub p: f64,
    pub length: f64,
    pub budget: f64,
    pub h: f64,
    pub diameter: f64,
    pub j_value: f64,
    pub net_field_norm: f64,
    pub net_field_tol: f64,
    pub stationary: bool,
    pub hull_violations: usize,
    pub ambiguous_mass: f64,
    pub topology: TopologyReport,
    pub b_l2sq: f64,
    pub lambda: Option<f64>,
    pub lambda_max_constant: Option<f64>,
    pub lip_estimate: Option<f64>,
    pub sup_norm: Option<f64>,
    pub atom_checks: Vec<AtomCheck>,
    pub power_bound_failures: usize,
    pub fd_gap: Option<f64>,
    pub fd: Option<FdReport>,
    pub regime: RegimeInfo,
}

impl DiagnosticsReport {
    pub fn atoms_pass(&self) -> bool {
        self.atom_checks.iter().all(|a| a.pass)
    }

    /// Structural claims that hold at minimizers.
    pub fn failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.stationary {
            out.push(format!("net field {:e} exceeds {:e}", self.net_field_norm, self.net_field_tol));
        }
        if self.hull_violations > 0 {
            out.push(format!("{} vertices outside the hull", self.hull_violations));
        }
        if self.ambiguous_mass > 0.02 {
            out.push(format!("ambiguous mass {}", self.ambiguous_mass));
        }
        if self.topology.cycle_rank > 0 {
            out.push(format!("cycle rank {}", self.topology.cycle_rank));
        }
        if self.topology.max_degree > 3 {
            out.push(format!("max degree {}", self.topology.max_degree));
        }
        for a in self.atom_checks.iter().filter(|a| !a.pass) {
            out.push(format!("endpoint {} fails the mass bound ({:e} < {:e})", a.vertex, a.lhs, a.rhs));
        }
        if self.power_bound_failures > 0 {
            out.push(format!("{} power bound failures", self.power_bound_failures));
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "J_p = {:.6e}  length = {:.6} / {:.6}\nnet field = {:.3e} (tol {:.3e})\nhull violations = {}  ambiguous mass = {:.3e}\ncycle rank = {}  max degree = {}  endpoints = {}\n",
            self.j_value,
            self.length,
            self.budget,
            self.net_field_norm,
            self.net_field_tol,
            self.hull_violations,
            self.ambiguous_mass,
            self.topology.cycle_rank,
            self.topology.max_degree,
            self.topology.endpoint_count,
        );
        for a in &self.atom_checks {
            s.push_str(&format!(
                "endpoint {}: mass {:.4e} |B| {:.4e} lhs {:.4e} rhs {:.4e} {} (max-constant rhs {:.4e} {})\n",
                a.vertex,
                a.ball_mass,
                a.b_norm,
                a.lhs,
                a.rhs,
                if a.pass { "pass" } else { "FAIL" },
                a.rhs_max_constant,
                if a.pass_max_constant { "pass" } else { "fail" }
            ));
        }
        let f = self.failures();
        if f.is_empty() {
            s.push_str("all checks pass\n");
        } else {
            for line in f {
                s.push_str(&format!("failure: {line}\n"));
            }
        }
        s
    }
}

/// Options controlling [`check_network`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckOptions {
    pub p: f64,
    /// The `l` in the endpoint bound; the network length is used when `None`.
    pub budget: Option<f64>,
    pub h: f64,
    pub bandwidth: f64,
    pub run_fd: bool,
}

impl CheckOptions {
    /// Options matching a solver configuration.
    pub fn from_config(config: &SolverConfig, h: f64) -> Self {
        Self {
            p: config.p,
            budget: (config.mode == Mode::Hard).then_some(config.budget),
            h,
            bandwidth: config.bandwidth.unwrap_or(h),
            run_fd: true,
        }
    }
}

/// Diagnostics for a solver result.
pub fn check_minimizer(measure: &DiscreteMeasure, result: &SolveResult, config: &SolverConfig) -> Result<DiagnosticsReport> {
    check_network(measure, &result.network, &CheckOptions::from_config(config, result.h))
}

/// Diagnostics for an arbitrary network.
pub fn check_network(measure: &DiscreteMeasure, net: &Network, opts: &CheckOptions) -> Result<DiagnosticsReport> {
    let p = opts.p;
    let hull = hull_summary(measure);
    let m = hull.diameter;
    let scale = if m > 0.0 { m } else { 1.0 };
    let popts = ProjectionOptions::with_scale(scale);
    let FieldSnapshot {
        table,
        sampled,
        pushforward,
        field,
    } = field_snapshot(measure, net, p, opts.h, &popts)?;
    let j_value = functional::j_p(measure, &table, p)?;
    let length = net.total_length();
    let budget = opts.budget.unwrap_or(length);

    let net_field_norm = norm(&field.net);
    let net_field_tol = 1e-3 * p * pow0(m, p - 1.0);
    let hull_tol = 1e-9 * scale;
    let hull_violations = net.vertices().filter(|v| !hull.contains(v, hull_tol)).count();
    let topology = net.topology_report()?;

    let xi: Option<LipschitzField> = if field.l2sq > 0.0 {
        functional::mollify(&field, &sampled, opts.bandwidth).ok()
    } else {
        None
    };
    let lambda = xi.as_ref().map(LipschitzField::lambda_constant);
    let lambda_max = xi.as_ref().map(LipschitzField::lambda_max_constant);

    let mut atom_checks = Vec::new();
    let deg = net.degrees();
    for v in (0..net.num_vertices()).filter(|&v| deg[v] == 1) {
        let pos = net.vertex(v);
        let ball_mass: f64 = sampled
            .nodes()
            .iter()
            .zip(&pushforward.node_mass)
            .filter(|(n, _)| dist(&n.pos, pos) <= 2.0 * opts.h)
            .map(|(_, m)| m)
            .sum();
        let b_norm = norm(field.at(sampled.vertex_node(v)));
        let lhs = ball_mass * b_norm;
        let bound = |lam: Option<f64>| match lam {
            Some(l) if budget > 0.0 => l / (4.0 * budget) * field.l2sq,
            _ => f64::INFINITY,
        };
        let rhs = bound(lambda);
        let rhs_max_constant = bound(lambda_max);
        atom_checks.push(AtomCheck {
            vertex: v,
            position: pos.to_vec(),
            ball_mass,
            b_norm,
            lhs,
            rhs,
            pass: lhs >= rhs,
            rhs_max_constant,
            pass_max_constant: lhs >= rhs_max_constant,
        });
    }

    // squeeze |x - sigma_eps|^p - |x - sigma|^p along the mollified field
    let mut power_bound_failures = 0;
    if let Some(xi) = &xi {
        let eps = 1e-2 * scale / xi.sup_norm.max(f64::MIN_POSITIVE);
        for (i, &node) in pushforward.node_of_point.iter().enumerate() {
            let x = measure.point(i);
            let sigma = &sampled.nodes()[node].pos;
            let mut moved = sigma.clone();
            axpy(&mut moved, eps, xi.at(node));
            let a = dist(x, &moved);
            let b = dist(x, sigma);
            let val = a.powf(p) - b.powf(p);
            for q in [1.0, 2.0_f64.min(p)] {
                let (lo, hi) = power_bounds(a, b, p, q)?;
                let tol = 1e-9 * (val.abs().max(lo.abs()).max(hi.abs())).max(f64::MIN_POSITIVE);
                if val < lo - tol || val > hi + tol {
                    power_bound_failures += 1;
                }
            }
        }
    }

    let fd = match (&xi, opts.run_fd) {
        (Some(xi), true) => {
            let eps = [1e-2, 1e-3, 1e-4].map(|e| e * scale / xi.sup_norm.max(f64::MIN_POSITIVE));
            functional::fd_check(measure, &sampled, xi, p, &eps, &popts).ok()
        }
        _ => None,
    };

    Ok(DiagnosticsReport {
        p,
        length,
        budget,
        h: opts.h,
        diameter: m,
        j_value,
        net_field_norm,
        net_field_tol,
        stationary: net_field_norm <= net_field_tol,
        hull_violations,
        ambiguous_mass: projection::ambiguous_mass(&table, measure),
        topology,
        b_l2sq: field.l2sq,
        lambda,
        lambda_max_constant: lambda_max,
        lip_estimate: xi.as_ref().map(|x| x.lip_estimate),
        sup_norm: xi.as_ref().map(|x| x.sup_norm),
        atom_checks,
        power_bound_failures,
        fd_gap: fd.as_ref().and_then(|f| f.gaps.last().copied()),
        fd,
        regime: regime_table(p)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftReport {
    /// False when the network has zero length.
    pub applicable: bool,
    pub lambda: f64,
    pub length: f64,
    pub b_l2sq: f64,
    pub nontrivial_field: bool,
    /// `(F((1 - eps) Sigma) - F(Sigma)) / eps` at `eps = 1e-7`, scaling about
    /// the centroid of the projected measure.
    pub scaling_quotient: f64,
    pub scaling_tol: f64,
    pub scaling_pass: bool,
    pub topology: TopologyReport,
}

/// Checks on a soft-penalty solution.
pub fn check_soft(measure: &DiscreteMeasure, net: &Network, lambda: f64, p: f64, grad_tol: f64, h: f64) -> Result<SoftReport> {
    if !(lambda > 0.0) {
        return Err(Error::validation(format!("penalty lambda must be > 0, got {lambda}")));
    }
    let m = hull_summary(measure).diameter;
    let scale = if m > 0.0 { m } else { 1.0 };
    let popts = ProjectionOptions::with_scale(scale);
    let length = net.total_length();
    let topology = net.topology_report()?;
    let scaling_tol = 1e-6;
    if length == 0.0 {
        return Ok(SoftReport {
            applicable: false,
            lambda,
            length,
            b_l2sq: 0.0,
            nontrivial_field: false,
            scaling_quotient: 0.0,
            scaling_tol,
            scaling_pass: true,
            topology,
        });
    }
    let snap = field_snapshot(measure, net, p, h, &popts)?;
    let f0 = functional::j_p(measure, &snap.table, p)? + lambda * length;
    let mut center = vec![0.0; net.dim()];
    for (i, e) in snap.table.entries.iter().enumerate() {
        axpy(&mut center, measure.weight(i), &e.foot);
    }
    let eps = 1e-7;
    let shrunk = perturb::shrink(net, eps, &center)?;
    let f1 = functional::evaluate(measure, &shrunk, p, &popts)? + lambda * shrunk.total_length();
    let scaling_quotient = (f1 - f0) / eps;
    Ok(SoftReport {
        applicable: true,
        lambda,
        length,
        b_l2sq: snap.field.l2sq,
        nontrivial_field: snap.field.l2sq > grad_tol,
        scaling_quotient,
        scaling_tol,
        scaling_pass: scaling_quotient >= -scaling_tol,
        topology,
    })
}
