//! Static route sampler used as the comparison baseline.
//!
//! A pool of candidate routes is drawn once from uniform OD demand. For every
//! hour the sampler picks, without replacement, candidates that pass the
//! detector until their number reaches the hourly target. Selection only
//! looks at which edges a route uses; it never consults the simulator.

use std::sync::Arc;

use rand::seq::index;
use rand::Rng;
use thiserror::Error;

use crate::mesosim::{self, Route, Router, HOUR_SECS};
use crate::scenario::{RoadNetwork, HOURS};
use crate::seeds;

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("candidate pool is empty")]
    EmptyPool,
    #[error("invalid target {0}")]
    InvalidTarget(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub edges: Arc<[usize]>,
    /// Indices of the detectors the route passes, ascending.
    pub crosses: Vec<usize>,
}

impl Candidate {
    pub fn new(net: &RoadNetwork, edges: Arc<[usize]>) -> Self {
        let mut crosses: Vec<usize> = edges
            .iter()
            .flat_map(|&e| net.detectors_on(e).iter().map(|&(d, _)| d))
            .collect();
        crosses.sort_unstable();
        crosses.dedup();
        Self { edges, crosses }
    }

    pub fn crosses(&self, det: usize) -> bool {
        self.crosses.binary_search(&det).is_ok()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CandidatePool {
    pub candidates: Vec<Candidate>,
}

impl CandidatePool {
    /// `size` routes of uniform OD trips inside `zone`. Unreachable pairs are
    /// redrawn like in the simulator; candidates that still fail are skipped.
    pub fn generate(net: &RoadNetwork, zone: &[usize], size: usize, seed: u64) -> Result<Self, mesosim::SimError> {
        if zone.len() < 2 {
            return Err(mesosim::SimError::ZoneTooSmall(zone.len()));
        }
        let mut rng = seeds::rng(seed);
        let mut router = Router::default();
        let mut candidates = Vec::with_capacity(size);
        for i in 0..size {
            match mesosim::draw_routed(net, &mut router, zone, 0, format!("c{i}"), &mut rng) {
                Some(r) => candidates.push(Candidate::new(net, r.edges)),
                None => log::warn!("candidate {i}: no reachable OD pair, skipped"),
            }
        }
        Ok(Self { candidates })
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn crossing(&self, det: usize) -> Vec<usize> {
        (0..self.candidates.len()).filter(|&i| self.candidates[i].crosses(det)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Sorted by departure.
    pub routes: Vec<Route>,
    /// Selected crossings per hour.
    pub counts: [u32; HOURS],
    /// Vehicles missing per hour because the pool ran out.
    pub shortfall: [u32; HOURS],
}

/// Picks crossing candidates for each hour until the static count reaches
/// `ceil(target)`, so it never exceeds the target by a vehicle or more.
/// Departures are uniform within the hour.
pub fn sample_routes<R: Rng + ?Sized>(
    pool: &CandidatePool,
    detector: usize,
    targets: &[f64; HOURS],
    rng: &mut R,
) -> Result<Selection, BaselineError> {
    if pool.is_empty() {
        return Err(BaselineError::EmptyPool);
    }
    if let Some(&t) = targets.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
        return Err(BaselineError::InvalidTarget(t));
    }
    let eligible = pool.crossing(detector);
    let mut routes = Vec::new();
    let mut counts = [0; HOURS];
    let mut shortfall = [0; HOURS];
    for h in 0..HOURS {
        let need = targets[h].ceil() as usize;
        let take = need.min(eligible.len());
        if take < need {
            shortfall[h] = (need - take) as u32;
            log::warn!("hour {h}: pool holds {} crossing routes, {need} needed", eligible.len());
        }
        let picks = index::sample(rng, eligible.len(), take);
        for (k, p) in picks.into_iter().enumerate() {
            let c = &pool.candidates[eligible[p]];
            routes.push(Route {
                id: format!("b{h}_{k}"),
                depart: h as u32 * HOUR_SECS + rng.random_range(0..HOUR_SECS),
                edges: c.edges.clone(),
            });
        }
        counts[h] = take as u32;
    }
    routes.sort_by_key(|r| r.depart);
    Ok(Selection {
        routes,
        counts,
        shortfall,
    })
}
