use proptest::prelude::*;

use adpnet::geom::dist;
use adpnet::measure::DiscreteMeasure;
use adpnet::network::Network;
use adpnet::perturb::{cross_dist_sq, psi};
use adpnet::projection::{distance_to, project, ProjectionOptions};
use adpnet::solver::{enforce_length, snap_to_vertex};
use adpnet::verify::power_bounds;

fn polyline_strategy() -> impl Strategy<Value = Network> {
    prop::collection::vec((0.0..1.0f64, 0.0..1.0f64), 2..8).prop_filter_map("short edge", |pts| {
        let v: Vec<Vec<f64>> = pts.into_iter().map(|(x, y)| vec![x, y]).collect();
        Network::polyline(&v).ok()
    })
}

fn cloud_strategy() -> impl Strategy<Value = DiscreteMeasure> {
    prop::collection::vec((-0.5..1.5f64, -0.5..1.5f64), 1..40)
        .prop_map(|pts| {
            let v: Vec<Vec<f64>> = pts.into_iter().map(|(x, y)| vec![x, y]).collect();
            DiscreteMeasure::new(2, &v, None).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn enforce_length_feasible_and_idempotent(net in polyline_strategy(), frac in 0.05..1.5f64) {
        let l = frac * net.total_length();
        let c = net.vertex(0).to_vec();
        let once = enforce_length(&net, l, &c).unwrap();
        prop_assert!(once.total_length() <= l + 1e-9);
        let twice = enforce_length(&once, l, &c).unwrap();
        prop_assert_eq!(once.coords(), twice.coords());
    }

    #[test]
    fn projection_is_closest(net in polyline_strategy(), m in cloud_strategy()) {
        let t = project(&m, &net, &ProjectionOptions::with_scale(1.0)).unwrap();
        for (i, e) in t.entries.iter().enumerate() {
            let x = m.point(i);
            prop_assert!((dist(x, &e.foot) - e.distance).abs() < 1e-12);
            prop_assert!(distance_to(&net, &e.foot) < 1e-12);
            for v in net.vertices() {
                prop_assert!(e.distance <= dist(x, v) + 1e-12);
            }
        }
    }

    #[test]
    fn snap_preserves_length(net in polyline_strategy(), s in 0.0..1.0f64) {
        let e = ((s * net.num_edges() as f64) as usize).min(net.num_edges() - 1);
        let point = net.edge_point(e, s);
        let (snapped, v) = snap_to_vertex(&net, &point, 1.0).unwrap();
        prop_assert!((snapped.total_length() - net.total_length()).abs() < 1e-12);
        prop_assert!(dist(snapped.vertex(v), &point) < 1e-9);
    }

    #[test]
    fn power_bounds_ordered(a in 0.0..10.0f64, b in 0.0..10.0f64, p in 0.01..6.0f64, r in 0.01..1.0f64) {
        let q = r * p;
        let (lo, hi) = power_bounds(a, b, p, q).unwrap();
        let v = a.powf(p) - b.powf(p);
        let tol = 1e-9 * a.powf(p).max(b.powf(p)).max(1.0);
        prop_assert!(lo <= v + tol && v <= hi + tol);
    }

    #[test]
    fn cross_distance_range(x in prop::collection::vec(-2.0..2.0f64, 2..5), tau in 0.001..1.0f64) {
        let d2 = cross_dist_sq(&x, tau);
        let r2: f64 = x.iter().map(|c| c * c).sum();
        prop_assert!(d2 >= -1e-15);
        prop_assert!(d2 <= r2 + 1e-15);
    }

    #[test]
    fn psi_nonpositive(x in prop::collection::vec(-1.0..1.0f64, 2), pi in prop::collection::vec(-1.0..1.0f64, 2), eps in 0.001..0.5f64, tau in 0.0..0.2f64) {
        prop_assert!(psi(&x, &pi, eps, tau) <= 0.0);
    }

    #[test]
    fn network_json_round_trip(net in polyline_strategy()) {
        let back = Network::from_json(&net.to_json()).unwrap();
        prop_assert_eq!(back.coords(), net.coords());
        prop_assert_eq!(back.edges(), net.edges());
    }
}
