//! Bundled synthetic scenarios.
//!
//! * `grid5x5`: 5x5 node grid, 100 m blocks, four detectors (smoke scale).
//! * `heterogeneous`: 11x5 node grid with ten detectors, one per 200 m block,
//!   carrying low/medium/high intensity profiles (maxima near 330, 600 and
//!   1100 veh/h). Edges in high-intensity zones have two lanes, all others
//!   one. Synthetic stand-ins, not measured data.
//!
//! The same content ships as text files under `fixtures/`; a test keeps the
//! files and these builders in sync.

use crate::scenario::{voronoi_partition, DetectorProfile, IntensityClass, NetworkSpec, RoadNetwork, HOURS};

/// 50 km/h.
pub const GRID_SPEED: f64 = 13.89;
pub const BLOCK: f64 = 100.0;

const LOW_SHAPE: [f64; HOURS] = [
    0.08, 0.06, 0.05, 0.05, 0.07, 0.15, 0.45, 0.85, 1.0, 0.7, 0.45, 0.38, 0.36, 0.35, 0.37, 0.42,
    0.6, 0.85, 0.95, 0.7, 0.45, 0.3, 0.2, 0.12,
];
const MEDIUM_SHAPE: [f64; HOURS] = [
    0.1, 0.07, 0.06, 0.06, 0.09, 0.25, 0.6, 0.85, 0.95, 0.97, 0.98, 1.0, 0.99, 0.98, 0.97, 0.98,
    0.99, 1.0, 0.97, 0.9, 0.7, 0.45, 0.28, 0.16,
];
const HIGH_SHAPE: [f64; HOURS] = [
    0.32, 0.24, 0.2, 0.2, 0.26, 0.45, 0.78, 0.95, 1.0, 0.92, 0.86, 0.85, 0.86, 0.87, 0.86, 0.88,
    0.94, 0.99, 0.98, 0.92, 0.8, 0.66, 0.52, 0.4,
];

pub fn node_id(col: usize, row: usize) -> String {
    format!("n{col}_{row}")
}

pub fn edge_id(a: (usize, usize), b: (usize, usize)) -> String {
    format!("e{}_{}-{}_{}", a.0, a.1, b.0, b.1)
}

/// Bidirectional grid of `cols` x `rows` nodes.
pub fn grid_spec(cols: usize, rows: usize, lanes: u32) -> NetworkSpec {
    let mut spec = NetworkSpec::default();
    for r in 0..rows {
        for c in 0..cols {
            spec.node(node_id(c, r), c as f64 * BLOCK, r as f64 * BLOCK);
        }
    }
    for r in 0..rows {
        for c in 0..cols {
            let mut link = |a: (usize, usize), b: (usize, usize)| {
                spec.edge(edge_id(a, b), node_id(a.0, a.1), node_id(b.0, b.1), BLOCK, GRID_SPEED, lanes);
            };
            if c + 1 < cols {
                link((c, r), (c + 1, r));
                link((c + 1, r), (c, r));
            }
            if r + 1 < rows {
                link((c, r), (c, r + 1));
                link((c, r + 1), (c, r));
            }
        }
    }
    spec
}

pub fn grid5x5() -> RoadNetwork {
    let mut spec = grid_spec(5, 5, 1);
    for (i, (c, r)) in [(1, 1), (3, 1), (1, 3), (3, 3)].into_iter().enumerate() {
        spec.detector(format!("d{}", i + 1), edge_id((c, r), (c + 1, r)), 10.0);
    }
    spec.build().expect("grid fixture is valid")
}

/// Class of each heterogeneous detector, `d01` .. `d10`.
pub const HETEROGENEOUS_CLASSES: [IntensityClass; 10] = {
    use IntensityClass::*;
    [Low, Low, High, Medium, High, Low, Medium, High, High, High]
};

pub fn heterogeneous() -> RoadNetwork {
    let mut spec = grid_spec(11, 5, 1);
    for i in 0..10 {
        let (bc, br) = (i % 5, i / 5);
        let (c, r) = (2 * bc + 1, 2 * br + 1);
        spec.detector(format!("d{:02}", i + 1), edge_id((c, r), (c + 1, r)), 50.0);
    }
    let single = spec.build().expect("heterogeneous fixture is valid");
    let part = voronoi_partition(&single).expect("heterogeneous fixture has detectors");
    let mut spec = single.to_spec();
    for (zone, class) in part.zones.iter().zip(HETEROGENEOUS_CLASSES) {
        if class == IntensityClass::High {
            for &e in zone {
                spec.edges[e].5 = 2;
            }
        }
    }
    spec.build().expect("heterogeneous fixture is valid")
}

pub fn class_peak(class: IntensityClass) -> f64 {
    match class {
        IntensityClass::Low => 330.0,
        IntensityClass::Medium => 600.0,
        IntensityClass::High => 1100.0,
    }
}

/// Daily profile of the given class with a small deterministic per-detector
/// wobble, scaled so its maximum equals `peak` (rounded to 0.1 veh/h).
pub fn synthetic_profile(detector: &str, class: IntensityClass, peak: f64, variant: usize) -> DetectorProfile {
    let shape = match class {
        IntensityClass::Low => &LOW_SHAPE,
        IntensityClass::Medium => &MEDIUM_SHAPE,
        IntensityClass::High => &HIGH_SHAPE,
    };
    let raw: Vec<f64> = shape
        .iter()
        .enumerate()
        .map(|(h, s)| s * (1.0 + 0.03 * ((h * (variant + 1)) as f64).sin()))
        .collect();
    let top = raw.iter().copied().fold(0.0, f64::max);
    let targets: Vec<f64> = raw.iter().map(|v| (v / top * peak * 10.0).round() / 10.0).collect();
    DetectorProfile::new(detector, &targets)
        .expect("synthetic profile is valid")
        .with_label(class)
}

pub fn grid5x5_profiles() -> Vec<DetectorProfile> {
    use IntensityClass::*;
    [(Low, 330.0), (Medium, 600.0), (Low, 300.0), (Medium, 560.0)]
        .into_iter()
        .enumerate()
        .map(|(i, (class, peak))| synthetic_profile(&format!("d{}", i + 1), class, peak, i))
        .collect()
}

pub fn heterogeneous_profiles() -> Vec<DetectorProfile> {
    const PEAK_JITTER: [f64; 10] = [0.0, -20.0, 0.0, 20.0, -5.0, -10.0, 5.0, 10.0, -10.0, 0.0];
    HETEROGENEOUS_CLASSES
        .iter()
        .enumerate()
        .map(|(i, &class)| {
            synthetic_profile(&format!("d{:02}", i + 1), class, class_peak(class) + PEAK_JITTER[i], i)
        })
        .collect()
}

/// Six profiles, three low, two medium and one high, used to check the
/// volume clustering cut.
pub fn six_profile_set() -> Vec<DetectorProfile> {
    use IntensityClass::*;
    [(Low, 330.0), (Low, 330.0), (Low, 330.0), (Medium, 600.0), (Medium, 600.0), (High, 1100.0)]
        .into_iter()
        .enumerate()
        .map(|(i, (class, peak))| synthetic_profile(&format!("p{i}"), class, peak, i))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_has_expected_size() {
        let net = grid5x5();
        assert_eq!(net.nodes().len(), 25);
        // 5 rows x 4 links horizontally, same vertically, both directions
        assert_eq!(net.edges().len(), 2 * (5 * 4 + 5 * 4));
        assert_eq!(net.detectors().len(), 4);
        let het = heterogeneous();
        assert_eq!(het.nodes().len(), 55);
        assert_eq!(het.edges().len(), 2 * (5 * 10 + 11 * 4));
        assert_eq!(het.detectors().len(), 10);
    }

    #[test]
    fn profiles_hit_their_peaks() {
        for p in heterogeneous_profiles() {
            let class = p.label.unwrap();
            assert!((p.max() - class_peak(class)).abs() <= 20.0 + 1e-9, "{}", p.detector);
        }
        assert_eq!(grid5x5_profiles().len(), 4);
    }
}
