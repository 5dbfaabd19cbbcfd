use fedtraffic::baseline::{sample_routes, CandidatePool};
use fedtraffic::fixtures;
use fedtraffic::mesosim::{replay_day, SimConfig};
use fedtraffic::scenario::{voronoi_partition, NetworkSpec, RoadNetwork};
use fedtraffic::seeds;
use proptest::prelude::*;
use std::sync::OnceLock;

fn grid() -> &'static (RoadNetwork, CandidatePool) {
    static POOL: OnceLock<(RoadNetwork, CandidatePool)> = OnceLock::new();
    POOL.get_or_init(|| {
        let net = fixtures::grid5x5().with_detectors(&["d1"]).unwrap();
        let part = voronoi_partition(&net).unwrap();
        let pool = CandidatePool::generate(&net, &part.zones[0], 3000, 11).unwrap();
        (net, pool)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn selection_meets_static_targets(targets in prop::array::uniform24(0f64..60.0), seed in any::<u64>()) {
        let (net, pool) = grid();
        let eligible = pool.crossing(0).len();
        let sel = sample_routes(pool, 0, &targets, &mut seeds::rng(seed)).unwrap();
        let edge = net.detectors()[0].edge;
        for h in 0..24 {
            let need = targets[h].ceil() as usize;
            prop_assert_eq!(sel.counts[h] as usize, need.min(eligible));
            prop_assert_eq!(sel.shortfall[h] as usize, need.saturating_sub(eligible));
            let in_hour = sel.routes.iter().filter(|r| r.depart / 3600 == h as u32).count();
            prop_assert_eq!(in_hour, sel.counts[h] as usize);
        }
        prop_assert!(sel.routes.iter().all(|r| r.edges.contains(&edge)));
        prop_assert!(sel.routes.windows(2).all(|w| w[0].depart <= w[1].depart));
        prop_assert_eq!(sel.routes.len() as u32, sel.counts.iter().sum::<u32>());
    }
}

/// One lane fed beyond its flow capacity: the static selection puts every
/// vehicle in hour 8, the congested replay pushes noticeably more into hour 9.
#[test]
fn congestion_pulls_replayed_counts_off_the_static_targets() {
    let mut spec = NetworkSpec::default();
    spec.node("a", 0.0, 0.0).node("b", 100.0, 0.0).node("c", 200.0, 0.0);
    spec.edge("ab", "a", "b", 100.0, 15.0, 1)
        .edge("ba", "b", "a", 100.0, 15.0, 1)
        .edge("bc", "b", "c", 100.0, 15.0, 1)
        .edge("cb", "c", "b", 100.0, 15.0, 1)
        .detector("d", "bc", 90.0);
    let net = spec.build().unwrap();
    let zone = [net.edge_id("ab").unwrap(), net.edge_id("bc").unwrap()];
    let pool = CandidatePool::generate(&net, &zone, 4000, 2).unwrap();
    assert_eq!(pool.crossing(0).len(), 4000);
    let mut targets = [0.0; 24];
    targets[8] = 3000.0;
    let sel = sample_routes(&pool, 0, &targets, &mut seeds::rng(3)).unwrap();
    assert_eq!((sel.counts[8], sel.shortfall[8]), (3000, 0));
    let free = replay_day(&net, &sel.routes, SimConfig { density: false, ..SimConfig::default() });
    let jam = replay_day(&net, &sel.routes, SimConfig::default());
    let total = |c: &[u32; 24]| c.iter().sum::<u32>();
    // every selected route crosses the detector once, congested or not
    assert_eq!(total(&free[0]), 3000);
    assert_eq!(total(&jam[0]), 3000);
    assert!(free[0][8] >= 2990, "{:?}", free[0]);
    assert!(jam[0][9] >= free[0][9] + 50, "{:?} vs {:?}", jam[0], free[0]);
}
