//! Independent reference implementations shared by the integration tests.
//! Each one follows the textbook definition directly and is deliberately
//! slow.

#![allow(dead_code)]

use std::collections::BTreeSet;
use std::sync::Arc;

use fedtraffic::mesosim::{self, Route};
use fedtraffic::ppo::{sample_action, Architecture, PpoHyperparams, PpoModel, Transition};
use fedtraffic::scenario::{NetworkSpec, RoadNetwork};
use fedtraffic::seeds;
use num::{BigRational, ToPrimitive};
use rand::Rng;

/// Exact mean of `values` rounded once to `f64`.
pub fn exact_mean(values: &[f64]) -> f64 {
    let mut sum = BigRational::from_integer(0.into());
    for &v in values {
        sum += BigRational::from_float(v).expect("finite");
    }
    (sum / BigRational::from_integer(values.len().into())).to_f64().unwrap()
}

/// Coordinate-wise exact mean.
pub fn exact_fedavg(models: &[Vec<f64>]) -> Vec<f64> {
    (0..models[0].len())
        .map(|i| exact_mean(&models.iter().map(|m| m[i]).collect::<Vec<_>>()))
        .collect()
}

fn sse(vectors: &[Vec<f64>], members: &[usize]) -> f64 {
    let dim = vectors[0].len();
    let n = members.len() as f64;
    let centroid: Vec<f64> = (0..dim)
        .map(|k| members.iter().map(|&i| vectors[i][k]).sum::<f64>() / n)
        .collect();
    members
        .iter()
        .map(|&i| (0..dim).map(|k| (vectors[i][k] - centroid[k]).powi(2)).sum::<f64>())
        .sum()
}

/// Greedy agglomeration that recomputes every candidate merge cost from the
/// member lists: `sqrt(2 * (SSE(A u B) - SSE(A) - SSE(B)))`. Returns merged
/// member sets with their heights.
pub fn ward_oracle(vectors: &[Vec<f64>]) -> Vec<(Vec<usize>, f64)> {
    let mut clusters: Vec<Vec<usize>> = (0..vectors.len()).map(|i| vec![i]).collect();
    let mut out = Vec::new();
    while clusters.len() > 1 {
        let mut best = (f64::INFINITY, 0, 0);
        for i in 0..clusters.len() {
            for j in i + 1..clusters.len() {
                let mut union = clusters[i].clone();
                union.extend(&clusters[j]);
                let delta = sse(vectors, &union) - sse(vectors, &clusters[i]) - sse(vectors, &clusters[j]);
                if delta < best.0 {
                    best = (delta, i, j);
                }
            }
        }
        let (delta, i, j) = best;
        let b = clusters.remove(j);
        clusters[i].extend(b);
        clusters[i].sort_unstable();
        out.push((clusters[i].clone(), (2.0 * delta).max(0.0).sqrt()));
    }
    out
}

/// Flat clusters left after applying every oracle merge not above `cut`.
pub fn ward_flat_oracle(vectors: &[Vec<f64>], cut: f64) -> Vec<Vec<usize>> {
    let mut clusters: BTreeSet<Vec<usize>> = (0..vectors.len()).map(|i| vec![i]).collect();
    for (merged, h) in ward_oracle(vectors) {
        if h > cut {
            break;
        }
        clusters.retain(|c| !c.iter().all(|m| merged.contains(m)));
        clusters.insert(merged);
    }
    let mut v: Vec<Vec<usize>> = clusters.into_iter().collect();
    v.sort_by_key(|c| c[0]);
    v
}

/// Nearest detector to each edge midpoint by exhaustive scan; ties go to the
/// lower detector index, and a detector's own edge is always its own.
pub fn voronoi_oracle(net: &RoadNetwork) -> Vec<usize> {
    let nodes = net.nodes();
    let points: Vec<(f64, f64)> = net
        .detectors()
        .iter()
        .map(|d| {
            let e = &net.edges()[d.edge];
            let (a, b) = (&nodes[e.from], &nodes[e.to]);
            let t = d.pos / e.length;
            (a.x + t * (b.x - a.x), a.y + t * (b.y - a.y))
        })
        .collect();
    net.edges()
        .iter()
        .enumerate()
        .map(|(ei, e)| {
            if let Some(d) = net.detectors().iter().position(|d| d.edge == ei) {
                return d;
            }
            let mx = 0.5 * (nodes[e.from].x + nodes[e.to].x);
            let my = 0.5 * (nodes[e.from].y + nodes[e.to].y);
            let dist: Vec<f64> = points.iter().map(|p| (p.0 - mx).hypot(p.1 - my)).collect();
            let min = dist.iter().copied().fold(f64::INFINITY, f64::min);
            dist.iter().position(|&d| d == min).unwrap()
        })
        .collect()
}

/// Zone pairs whose node sets intersect.
pub fn adjacency_oracle(net: &RoadNetwork, edge_zone: &[usize], zones: usize) -> BTreeSet<(usize, usize)> {
    let node_sets: Vec<BTreeSet<usize>> = (0..zones)
        .map(|z| {
            net.edges()
                .iter()
                .enumerate()
                .filter(|(e, _)| edge_zone[*e] == z)
                .flat_map(|(_, e)| [e.from, e.to])
                .collect()
        })
        .collect();
    let mut pairs = BTreeSet::new();
    for a in 0..zones {
        for b in a + 1..zones {
            if !node_sets[a].is_disjoint(&node_sets[b]) {
                pairs.insert((a, b));
            }
        }
    }
    pairs
}

/// Cheapest path cost from `origin` to `destination` over every edge
/// sequence that uses no edge twice, by depth-first enumeration. Branches
/// already costlier than the best complete path are cut. `cost` prices one
/// edge.
pub fn brute_force_path_cost(net: &RoadNetwork, origin: usize, destination: usize, cost: &dyn Fn(usize) -> f64) -> Option<f64> {
    fn go(
        net: &RoadNetwork,
        e: usize,
        destination: usize,
        acc: f64,
        used: &mut Vec<bool>,
        cost: &dyn Fn(usize) -> f64,
        best: &mut Option<f64>,
    ) {
        if best.is_some_and(|b| acc >= b) {
            return;
        }
        if e == destination {
            *best = Some(acc);
            return;
        }
        let head = net.edges()[e].to;
        for (ni, next) in net.edges().iter().enumerate() {
            if next.from != head || used[ni] {
                continue;
            }
            used[ni] = true;
            go(net, ni, destination, acc + cost(ni), used, cost, best);
            used[ni] = false;
        }
    }
    let mut used = vec![false; net.edges().len()];
    used[origin] = true;
    let mut best = None;
    go(net, origin, destination, cost(origin), &mut used, cost, &mut best);
    best
}

/// A small random network with its routes.
pub struct RandomScenario {
    pub net: RoadNetwork,
    pub routes: Vec<Route>,
    pub hour: u32,
}

/// Random bidirectional grid of 2..=4 by 2..=4 nodes with random block
/// lengths and speeds, 1..=3 detectors and up to 40 routed vehicles departing
/// during one random hour.
pub fn random_scenario(seed: u64) -> RandomScenario {
    let mut rng = seeds::rng(seed);
    let cols = rng.random_range(2..=4);
    let rows = rng.random_range(2..=4);
    let mut spec = NetworkSpec::default();
    for r in 0..rows {
        for c in 0..cols {
            spec.node(format!("n{c}_{r}"), c as f64 * 100.0, r as f64 * 100.0);
        }
    }
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let mut pairs = Vec::new();
            if c + 1 < cols {
                pairs.push(((c, r), (c + 1, r)));
            }
            if r + 1 < rows {
                pairs.push(((c, r), (c, r + 1)));
            }
            for (a, b) in pairs {
                for (x, y) in [(a, b), (b, a)] {
                    let id = format!("e{}_{}-{}_{}", x.0, x.1, y.0, y.1);
                    let length = rng.random_range(40.0..400.0);
                    let speed = rng.random_range(3.0..20.0);
                    let lanes = rng.random_range(1..=2);
                    spec.edge(&id, format!("n{}_{}", x.0, x.1), format!("n{}_{}", y.0, y.1), length, speed, lanes);
                    edges.push((id, length));
                }
            }
        }
    }
    let n_det = rng.random_range(1..=3usize);
    let mut used = BTreeSet::new();
    while used.len() < n_det {
        used.insert(rng.random_range(0..edges.len()));
    }
    for (k, &e) in used.iter().enumerate() {
        let (id, length) = &edges[e];
        spec.detector(format!("d{k}"), id, rng.random_range(0.0..*length));
    }
    let net = spec.build().expect("random grid is valid");
    let hour = rng.random_range(0..4u32);
    let n = rng.random_range(0..=40);
    let all: Vec<usize> = (0..net.edges().len()).collect();
    let mut router = mesosim::Router::default();
    let mut routes: Vec<Route> = (0..n)
        .filter_map(|i| mesosim::draw_routed(&net, &mut router, &all, hour, format!("v{i}"), &mut rng))
        .collect();
    routes.sort_by_key(|r| r.depart);
    RandomScenario { net, routes, hour }
}

/// Hour in which each detector is crossed by a single free-flowing vehicle,
/// integrating the trajectory edge by edge.
pub fn free_flow_crossings(net: &RoadNetwork, route: &Route) -> Vec<(usize, u32)> {
    let mut t = route.depart as f64;
    let mut out: Vec<(usize, u32)> = Vec::new();
    for &e in route.edges.iter() {
        let edge = &net.edges()[e];
        for (d, det) in net.detectors().iter().enumerate() {
            if det.edge == e && !out.iter().any(|(x, _)| *x == d) {
                let when = t + det.pos / edge.speed;
                out.push((d, (when / 3600.0).floor() as u32));
            }
        }
        t += edge.length / edge.speed;
    }
    out
}

pub fn arc(edges: &[usize]) -> Arc<[usize]> {
    Arc::from(edges)
}

fn batch(model: &PpoModel, n: usize, seed: u64) -> Vec<Transition> {
    let mut rng = seeds::rng(seed);
    let dim = model.architecture().obs_dim;
    (0..n)
        .map(|_| {
            let obs: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let out = model.policy_forward(&obs).unwrap();
            let s = sample_action(out.mean, out.std, &mut rng);
            Transition {
                obs,
                action: s.action,
                raw_action: s.raw,
                // offset so ratios differ from 1 and both surrogate branches appear
                log_prob: s.log_prob + rng.random::<f64>() * 0.6 - 0.3,
                reward: 0.0,
                value: out.value,
                done: false,
            }
        })
        .collect()
}

/// Largest relative gap between the analytic PPO loss gradient and central
/// finite differences, over every parameter of a perturbed model.
pub fn max_gradient_error(arch: Architecture, seed: u64) -> f64 {
    let hyper = PpoHyperparams::default();
    let mut model = PpoModel::new(arch, hyper, seed).unwrap();
    // larger output weights than the default init so every path carries signal
    let mut p = model.flatten();
    let mut rng = seeds::rng(seed + 100);
    for v in p.iter_mut() {
        *v += rng.random::<f64>() * 0.4 - 0.2;
    }
    model.unflatten(&p).unwrap();

    let data = batch(&model, 12, seed);
    let refs: Vec<&Transition> = data.iter().collect();
    let adv: Vec<f64> = (0..data.len()).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let ret: Vec<f64> = (0..data.len()).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let (_, grad, ratios) = model.loss_and_grad(&refs, &adv, &ret);
    assert!(ratios.iter().any(|r| (r - 1.0).abs() > 0.2), "clipped branch not exercised");

    let h = 1e-5;
    let base = model.flatten();
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += h;
        probe.unflatten(&plus).unwrap();
        let lp = probe.loss_and_grad(&refs, &adv, &ret).0.total;
        let mut minus = base.clone();
        minus[i] -= h;
        probe.unflatten(&minus).unwrap();
        let lm = probe.loss_and_grad(&refs, &adv, &ret).0.total;
        let fd = (lp - lm) / (2.0 * h);
        let denom = fd.abs().max(grad[i].abs()).max(1e-6);
        let rel = (fd - grad[i]).abs() / denom;
        worst = worst.max(rel);
    }
    worst
}


/// Advantage as the explicit sum over future TD residuals within the episode.
pub fn brute_force_gae(rewards: &[f64], values: &[f64], dones: &[bool], last: f64, g: f64, l: f64) -> Vec<f64> {
    let n = rewards.len();
    let v_next = |k: usize| if k + 1 < n { values[k + 1] } else { last };
    (0..n)
        .map(|t| {
            let mut total = 0.0;
            let mut weight = 1.0;
            for k in t..n {
                let delta = rewards[k] + if dones[k] { 0.0 } else { g * v_next(k) } - values[k];
                total += weight * delta;
                if dones[k] {
                    break;
                }
                weight *= g * l;
            }
            total
        })
        .collect()
}
