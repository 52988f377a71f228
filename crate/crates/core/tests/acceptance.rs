use std::collections::HashSet;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use adpnet::functional::{fd_check, sampled_with_feet, LipschitzField};
use adpnet::measure::{hull_summary, sample_density, DensitySpec, DiscreteMeasure};
use adpnet::network::Network;
use adpnet::perturb::{bound_check, cross_dist_sq, BoundReport, CompetitorSpec};
use adpnet::projection::{project, project_brute_force, ProjectionOptions};
use adpnet::solver::{solve, sweep, InitStrategy, SolverConfig};
use adpnet::verify::{check_minimizer, check_soft, power_bounds};

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let line = format!(
        "acceptance {id:>2} {:<4} {name}: {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
}

fn diameter(m: &DiscreteMeasure) -> f64 {
    hull_summary(m).diameter
}

fn random_network(rng: &mut ChaCha8Rng, dim: usize, max_edges: usize) -> Network {
    let nv = rng.random_range(2..=max_edges.min(30) + 1);
    let mut verts: Vec<Vec<f64>> = Vec::with_capacity(nv);
    let mut edges = Vec::new();
    let mut seen = HashSet::new();
    verts.push((0..dim).map(|_| rng.random::<f64>()).collect());
    for v in 1..nv {
        verts.push((0..dim).map(|_| rng.random::<f64>()).collect());
        let u = rng.random_range(0..v);
        edges.push([u, v]);
        seen.insert((u, v));
    }
    while edges.len() < max_edges && rng.random_bool(0.7) {
        let a = rng.random_range(0..nv);
        let b = rng.random_range(0..nv);
        if a != b && seen.insert((a.min(b), a.max(b))) {
            edges.push([a, b]);
        }
    }
    Network::new(dim, &verts, edges).unwrap()
}

fn random_tree_in_square(rng: &mut ChaCha8Rng) -> Network {
    let nv = rng.random_range(3..=8);
    let mut verts = vec![vec![rng.random_range(0.2..0.8), rng.random_range(0.2..0.8)]];
    let mut edges = Vec::new();
    for v in 1..nv {
        let u = rng.random_range(0..v);
        let ang = rng.random_range(0.0..std::f64::consts::TAU);
        let len = rng.random_range(0.1..0.3);
        let base = verts[u].clone();
        verts.push(vec![base[0] + len * ang.cos(), base[1] + len * ang.sin()]);
        edges.push([u, v]);
    }
    Network::new(2, &verts, edges).unwrap()
}

#[test]
fn criterion_01_projection_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let foot_tol = 1e-9;
    let dist_tol = 1e-12;
    let mut mismatches = 0;
    let mut elapsed = Duration::ZERO;
    for k in 0..20 {
        let dim = if k % 4 == 3 { 3 } else { 2 };
        let net = random_network(&mut rng, dim, 50);
        assert!(net.num_edges() <= 50);
        let pts: Vec<Vec<f64>> = (0..500)
            .map(|_| (0..dim).map(|_| rng.random_range(-0.2..1.2)).collect())
            .collect();
        let m = DiscreteMeasure::new(dim, &pts, None).unwrap();
        let opts = ProjectionOptions::with_scale(1.0);
        let t = Instant::now();
        let fast = project(&m, &net, &opts).unwrap();
        elapsed += t.elapsed();
        let slow = project_brute_force(&m, &net, &opts).unwrap();
        for (a, b) in fast.entries.iter().zip(&slow.entries) {
            let foot_gap = a.foot.iter().zip(&b.foot).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            if foot_gap > foot_tol || (a.distance - b.distance).abs() > dist_tol {
                mismatches += 1;
            }
        }
    }
    let pass = mismatches == 0 && elapsed < Duration::from_secs(5);
    report(
        1,
        "projection matches brute force",
        pass,
        &format!("mismatches {mismatches}, foot tol {foot_tol:e}, distance tol {dist_tol:e}, time {elapsed:?} (limit 5s)"),
    );
    assert!(pass);
}

fn sampled_cross_dist_sq(x: &[f64], tau: f64) -> f64 {
    let n = 100_000usize;
    let step = tau / n as f64;
    let xx: f64 = x.iter().map(|c| c * c).sum();
    let mut best = f64::INFINITY;
    for &xk in x {
        for sign in [1.0, -1.0] {
            let b = sign * xk;
            for j in 0..=n {
                let t = j as f64 * step;
                let v = xx - 2.0 * t * b + t * t;
                if v < best {
                    best = v;
                }
            }
        }
    }
    best
}

#[test]
fn criterion_02_cross_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let tol = 1e-6;
    let mut worst = 0.0f64;
    let draws = 10_000;
    for k in 0..draws {
        let d = 2 + k % 3;
        let tau = rng.random_range(0.01..1.0);
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.5..1.5)).collect();
        let formula = cross_dist_sq(&x, tau);
        let brute = sampled_cross_dist_sq(&x, tau);
        worst = worst.max((formula - brute).abs());
    }
    let pass = worst <= tol;
    report(
        2,
        "cross distance formula",
        pass,
        &format!("{draws} draws, max deviation {worst:.3e}, tol {tol:e}, sampling 1e-5 tau"),
    );
    assert!(pass);
}

fn bound_instances() -> Vec<(f64, f64, BoundReport)> {
    let eps_list = [0.01, 0.05, 0.1];
    let p_list = [2.0, 2.7, 3.0, 4.0];
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    (0..50)
        .map(|k| {
            let eps = eps_list[k % 3];
            let p = p_list[(k / 3) % 4];
            let m = sample_density(&DensitySpec::unit_square(), 400, 1000 + k as u64).unwrap();
            let net = random_tree_in_square(&mut rng);
            let center = rng.random_range(0..net.num_vertices());
            let spec = CompetitorSpec::new(net.vertex(center).to_vec(), eps, net.total_length()).unwrap();
            let table = project(&m, &net, &ProjectionOptions::with_scale(diameter(&m))).unwrap();
            let r = bound_check(&m, &net, &table, &spec, p, 0.1).unwrap();
            (eps, p, r)
        })
        .collect()
}

#[test]
fn criterion_03_psi_pointwise() {
    let reports = bound_instances();
    let violations: usize = reports.iter().map(|(_, _, r)| r.violations).sum();
    let min_slack = reports.iter().map(|(_, _, r)| r.min_slack).fold(f64::INFINITY, f64::min);
    let tol = reports[0].2.tol;
    assert_eq!(tol, 1e-9 * reports[0].2.m * reports[0].2.m);
    let pass = violations == 0;
    report(
        3,
        "psi pointwise lower bound",
        pass,
        &format!("50 instances, violations {violations}, min slack {min_slack:.3e}, tol 1e-9 M^2"),
    );
    assert!(pass);
}

#[test]
fn criterion_04_aggregate_bound() {
    let reports = bound_instances();
    let mut failures = Vec::new();
    let mut star_failures = 0;
    for (k, (eps, p, r)) in reports.iter().enumerate() {
        star_failures += usize::from(!r.star_holds);
        assert_eq!(r.aggregate_tol, 1e-9 * r.m.powf(*p));
        if r.aggregate_lhs < r.aggregate_rhs - r.aggregate_tol {
            failures.push(format!(
                "#{k} p={p} eps={eps}: {:.3e} < {:.3e}",
                r.aggregate_lhs, r.aggregate_rhs
            ));
        }
    }
    let pass = failures.is_empty();
    report(
        4,
        "aggregate lower bound",
        pass,
        &format!(
            "50 instances, failures {}, tol 1e-9 M^p {}; bound with dist(x, Sigma*)^(p-2) fails {star_failures}",
            failures.len(),
            failures.join("; ")
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_05_first_variation() {
    let start = Instant::now();
    let m = sample_density(&DensitySpec::unit_square(), 1000, 5).unwrap();
    let opts = ProjectionOptions::with_scale(diameter(&m));
    let net = Network::segment(&[0.1, 0.2], &[0.9, 0.7]).unwrap();
    let sampled = sampled_with_feet(&m, &net, 0.02, &opts).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let a: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let xi = LipschitzField::from_fn(&sampled, |y| {
        vec![
            a[0] * (3.0 * y[0] + a[1]).sin() + a[2] * y[1],
            a[3] * (2.0 * y[1] + a[4]).cos() + a[5] * y[0],
        ]
    })
    .unwrap();
    let r = fd_check(&m, &sampled, &xi, 2.0, &[1e-2, 1e-3, 1e-4], &opts).unwrap();
    let elapsed = start.elapsed();
    let (lo, hi) = (5.0, 20.0);
    let pass = r.ratios.iter().all(|&q| (lo..=hi).contains(&q)) && elapsed < Duration::from_secs(10);
    report(
        5,
        "first variation finite differences",
        pass,
        &format!("gap ratios {:?}, window [{lo}, {hi}], time {elapsed:?} (limit 10s)", r.ratios),
    );
    assert!(pass);
}

#[test]
fn criterion_06_power_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let rel = 1e-9;
    let draws = 1_000_000;
    let mut failures = 0;
    for _ in 0..draws {
        let a: f64 = rng.random_range(0.0..=10.0);
        let b: f64 = rng.random_range(0.0..=10.0);
        let p: f64 = rng.random_range(f64::MIN_POSITIVE..=6.0);
        let q: f64 = rng.random_range(f64::MIN_POSITIVE..=p);
        let (lower, upper) = power_bounds(a, b, p, q).unwrap();
        let v = a.powf(p) - b.powf(p);
        let scale = a.powf(p).max(b.powf(p)).max(lower.abs()).max(upper.abs()).max(1.0);
        if lower > v + rel * scale || v > upper + rel * scale {
            failures += 1;
        }
    }
    let pass = failures == 0;
    report(
        6,
        "basic power inequality",
        pass,
        &format!("{draws} draws, failures {failures}, relative tol {rel:e}"),
    );
    assert!(pass);
}

#[test]
fn criterion_07_zero_budget() {
    let spec = DensitySpec::GaussianMixture {
        components: vec![
            adpnet::measure::GaussianComponent {
                weight: 0.6,
                mean: vec![0.0, 0.0],
                std: 0.3,
            },
            adpnet::measure::GaussianComponent {
                weight: 0.4,
                mean: vec![1.5, 0.5],
                std: 0.2,
            },
        ],
    };
    let m = sample_density(&spec, 600, 7).unwrap();
    let r = solve(&m, &SolverConfig::hard(2.0, 0.0), None).unwrap();
    let mean = m.mean();
    let gap = r
        .network
        .vertex(0)
        .iter()
        .zip(&mean)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let tol = 1e-6 * diameter(&m);
    let pass = r.network.num_vertices() == 1 && gap <= tol;
    report(
        7,
        "zero budget gives the mean",
        pass,
        &format!("vertices {}, distance to mean {gap:.3e}, tol 1e-6 M = {tol:.3e}", r.network.num_vertices()),
    );
    assert!(pass);
}

#[test]
fn criterion_08_segment_coverage() {
    let start = Instant::now();
    let spec = DensitySpec::Segment {
        a: vec![0.0, 0.0],
        b: vec![1.0, 0.0],
    };
    let m = sample_density(&spec, 500, 8).unwrap();
    let r = solve(&m, &SolverConfig::hard(2.0, 1.2), None).unwrap();
    let elapsed = start.elapsed();
    let md = diameter(&m);
    let tol = 1e-4 * md * md;
    let pass = r.j_value <= tol && elapsed < Duration::from_secs(30);
    report(
        8,
        "segment coverage",
        pass,
        &format!("J {:.3e}, tol 1e-4 M^2 = {tol:.3e}, time {elapsed:?} (limit 30s)", r.j_value),
    );
    assert!(pass);
}

#[test]
fn criterion_09_structure_of_minimizers() {
    let m = sample_density(&DensitySpec::unit_square(), 2000, 1).unwrap();
    let limit = Duration::from_secs(180);
    let mut all_pass = true;
    let mut lines = Vec::new();
    for l in [0.5, 1.0] {
        let mut accepted = None;
        for seed in 0..3u64 {
            let cfg = SolverConfig {
                seed,
                init: if seed == 0 {
                    InitStrategy::PrincipalSegment
                } else {
                    InitStrategy::MstOfCenters
                },
                ..SolverConfig::hard(2.0, l)
            };
            let start = Instant::now();
            let r = solve(&m, &cfg, None).unwrap();
            let elapsed = start.elapsed();
            let d = check_minimizer(&m, &r, &cfg).unwrap();
            let structural = d.topology.cycle_rank == 0
                && d.topology.max_degree <= 3
                && d.hull_violations == 0
                && d.net_field_norm <= 1e-3 * 2.0 * d.diameter
                && d.ambiguous_mass <= 0.02;
            let atoms: Vec<String> = d
                .atom_checks
                .iter()
                .map(|a| format!("v{} {:.3e}>={:.3e}", a.vertex, a.lhs, a.rhs))
                .collect();
            let ok = structural && d.atoms_pass() && elapsed < limit;
            lines.push(format!(
                "l={l} seed={seed}: cycle rank {}, max degree {}, hull {}, net {:.2e}, ambiguous {:.2e}, endpoints [{}], {elapsed:.1?}",
                d.topology.cycle_rank,
                d.topology.max_degree,
                d.hull_violations,
                d.net_field_norm,
                d.ambiguous_mass,
                atoms.join(", ")
            ));
            if ok {
                accepted = Some(seed);
                break;
            }
        }
        all_pass &= accepted.is_some();
    }
    report(
        9,
        "structure of converged runs",
        all_pass,
        &format!(
            "net tol 1e-3 p M^(p-1), ambiguous mass tol 0.02, max degree 3, 3 restarts, 180s per restart; {}",
            lines.join(" | ")
        ),
    );
    assert!(all_pass);
}

#[test]
fn criterion_10_sweep_monotone() {
    let m = sample_density(&DensitySpec::unit_square(), 2000, 1).unwrap();
    let md = diameter(&m);
    let lengths = [0.2, 0.4, 0.8, 1.6];
    let r = sweep(&m, &lengths, &SolverConfig::hard(2.0, lengths[0])).unwrap();
    let q_tol = 1e-6;
    let plateau = 1e-4 * md * md;
    let strictly = r
        .j_values
        .windows(2)
        .all(|w| w[0] <= plateau || w[1] < w[0]);
    let quotients_ok = r.quotients.iter().all(|&q| q <= q_tol);
    let pass = strictly && quotients_ok;
    report(
        10,
        "sweep monotonicity",
        pass,
        &format!(
            "J {:?}, quotients {:?}, quotient tol {q_tol:e}, plateau 1e-4 M^2",
            r.j_values, r.quotients
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_11_soft_penalty() {
    let spec = DensitySpec::UniformDisk {
        center: vec![0.0, 0.0],
        radius: 1.0,
    };
    let m = sample_density(&spec, 1500, 3).unwrap();
    let cfg = SolverConfig::soft(2.0, 0.05);
    let r = solve(&m, &cfg, None).unwrap();
    let s = check_soft(&m, &r.network, cfg.lambda, cfg.p, cfg.grad_tol, r.h).unwrap();
    let tol = 1e-6;
    assert_eq!(s.scaling_tol, tol);
    let pass = s.applicable
        && s.nontrivial_field
        && s.scaling_quotient >= -tol
        && s.topology.cycle_rank == 0
        && s.topology.max_degree <= 3;
    report(
        11,
        "soft penalty",
        pass,
        &format!(
            "converged {}, length {:.4}, |B|^2 {:.3e}, scaling quotient {:.3e} (tol -{tol:e}), cycle rank {}, max degree {}",
            r.converged, s.length, s.b_l2sq, s.scaling_quotient, s.topology.cycle_rank, s.topology.max_degree
        ),
    );
    assert!(pass);
}

fn run_cli(out: &Path) {
    let status = Command::new(env!("CARGO_BIN_EXE_adpnet"))
        .args(["solve", "--n", "400", "--sample-seed", "12", "--p", "2", "--length", "0.8"])
        .args(["--max-iters", "300", "--seed", "4", "--init", "mst-of-centers", "--out"])
        .arg(out)
        .status()
        .unwrap();
    assert!(status.success());
}

#[test]
fn criterion_12_determinism() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_cli(a.path());
    run_cli(b.path());
    let same = |name: &str| std::fs::read(a.path().join(name)).unwrap() == std::fs::read(b.path().join(name)).unwrap();
    let pass = same("solution.json") && same("trace.csv");
    report(12, "determinism", pass, "solution.json and trace.csv byte-identical across two runs");
    assert!(pass);
}
