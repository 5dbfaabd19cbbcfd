mod common;

use fedtraffic::fixtures;
use fedtraffic::scenario::{voronoi_partition, zone_adjacency, RoadNetwork};
use proptest::prelude::*;

fn check(net: &RoadNetwork) {
    let part = voronoi_partition(net).unwrap();
    assert_eq!(part.edge_zone, common::voronoi_oracle(net));
    let mut seen = vec![0usize; net.edges().len()];
    for (z, zone) in part.zones.iter().enumerate() {
        for &e in zone {
            seen[e] += 1;
            assert_eq!(part.edge_zone[e], z);
        }
    }
    assert!(seen.iter().all(|&c| c == 1), "zones must cover every edge exactly once");
    let adj = zone_adjacency(&part, net);
    assert_eq!(adj.pairs, common::adjacency_oracle(net, &part.edge_zone, part.zones.len()));
}

#[test]
fn grid_fixture_matches_nearest_seed_scan() {
    let net = fixtures::grid5x5();
    check(&net);
    let part = voronoi_partition(&net).unwrap();
    assert_eq!(part.zones.len(), 4);
    assert!(part.zones.iter().all(|z| !z.is_empty()));
}

#[test]
fn heterogeneous_fixture_matches_nearest_seed_scan() {
    check(&fixtures::heterogeneous());
}

#[test]
fn single_detector_grids() {
    for d in ["d1", "d2", "d3", "d4"] {
        check(&fixtures::grid5x5().with_detectors(&[d]).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_networks_match_the_oracle(seed in any::<u64>()) {
        let sc = common::random_scenario(seed);
        check(&sc.net);
    }

    #[test]
    // whole-metre shifts keep every coordinate exact, so grid ties stay ties
    fn translation_does_not_change_zones(dx in -10_000i32..10_000, dy in -10_000i32..10_000) {
        let net = fixtures::grid5x5();
        let a = voronoi_partition(&net).unwrap();
        let b = voronoi_partition(&net.translated(dx as f64, dy as f64)).unwrap();
        prop_assert_eq!(a.zones, b.zones);
    }
}
