//! Mesoscopic single-zone traffic simulation.
//!
//! Vehicles enter at the start of their origin edge, follow a fixed route and
//! leave at the end of the destination edge. Time advances in 1 s steps. The
//! speed on an edge is its free-flow speed attenuated by the edge occupancy
//! observed at the start of the step:
//!
//! `v = v_free * max(0.1, 1 - occupancy / (lanes * length / 7.5))`
//!
//! Each detector counts a vehicle at most once, at the instant the vehicle
//! passes the detector position, bucketed by wall-clock hour.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use smallvec::SmallVec;
use thiserror::Error;

use crate::scenario::RoadNetwork;

pub const HOUR_SECS: u32 = 3600;
pub const RESIDUAL_HOURS: usize = 23;
pub const MAX_HORIZON_HOURS: u32 = 24;
/// Jam spacing per vehicle, meters.
pub const JAM_SPACING: f64 = 7.5;
pub const MIN_SPEED_FACTOR: f64 = 0.1;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("zone needs at least two edges, got {0}")]
    ZoneTooSmall(usize),
    #[error("no route from edge {origin} to edge {destination}")]
    Unreachable { origin: String, destination: String },
    #[error("routes are not sorted by departure time (vehicle {0})")]
    UnsortedDeparts(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("route file line {line}: {msg}")]
    RouteParse { line: usize, msg: String },
    #[error("malformed carryover checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trip {
    pub id: String,
    pub origin: usize,
    pub destination: usize,
    /// Absolute departure second.
    pub depart: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Route {
    pub id: String,
    pub depart: u32,
    pub edges: Arc<[usize]>,
}

/// Draws one trip with origin and destination uniform over `zone`
/// (destination distinct from origin) and a departure second uniform in `hour`.
pub fn draw_trip<R: Rng + ?Sized>(zone: &[usize], hour: u32, id: String, rng: &mut R) -> Trip {
    let n = zone.len();
    let o = rng.random_range(0..n);
    let mut d = rng.random_range(0..n - 1);
    if d >= o {
        d += 1;
    }
    let depart = hour * HOUR_SECS + rng.random_range(0..HOUR_SECS);
    Trip {
        id,
        origin: zone[o],
        destination: zone[d],
        depart,
    }
}

/// `n` uniform OD trips inside `zone` departing during `hour`.
pub fn sample_od<R: Rng + ?Sized>(
    zone: &[usize],
    hour: u32,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Trip>, SimError> {
    if zone.len() < 2 {
        return Err(SimError::ZoneTooSmall(zone.len()));
    }
    Ok((0..n)
        .map(|i| draw_trip(zone, hour, format!("h{hour}_{i}"), rng))
        .collect())
}

fn edge_cost_ms(net: &RoadNetwork, e: usize) -> u64 {
    ((net.edges()[e].free_flow_time() * 1000.0).round() as u64).max(1)
}

/// Minimum free-flow travel-time edge sequence from `origin` to
/// `destination`, both included. Edge costs are integer milliseconds so equal
/// cost paths compare exactly; among them the predecessor with the smallest
/// edge id wins at every edge.
pub fn shortest_path(net: &RoadNetwork, origin: usize, destination: usize) -> Option<Vec<usize>> {
    let n = net.edges().len();
    let mut dist = vec![u64::MAX; n];
    let mut pred = vec![usize::MAX; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    dist[origin] = edge_cost_ms(net, origin);
    heap.push(Reverse((dist[origin], origin)));
    while let Some(Reverse((d, e))) = heap.pop() {
        if done[e] {
            continue;
        }
        done[e] = true;
        if e == destination {
            break;
        }
        for &next in net.successors(e) {
            if done[next] {
                continue;
            }
            let cand = d + edge_cost_ms(net, next);
            if cand < dist[next] || (cand == dist[next] && e < pred[next]) {
                dist[next] = cand;
                pred[next] = e;
                heap.push(Reverse((cand, next)));
            }
        }
    }
    if !done[destination] {
        return None;
    }
    let mut path = vec![destination];
    let mut cur = destination;
    while cur != origin {
        cur = pred[cur];
        path.push(cur);
    }
    path.reverse();
    Some(path)
}

/// Free-flow travel time of a path in seconds.
pub fn path_cost(net: &RoadNetwork, path: &[usize]) -> f64 {
    path.iter().map(|&e| edge_cost_ms(net, e)).sum::<u64>() as f64 / 1000.0
}

/// Draws per unreachable OD pair before a vehicle is given up.
pub const MAX_OD_ATTEMPTS: usize = 10;

/// Draws a trip and routes it, redrawing unreachable OD pairs up to
/// `MAX_OD_ATTEMPTS` times in total. `None` means the vehicle is dropped.
pub fn draw_routed<R: Rng + ?Sized>(
    net: &RoadNetwork,
    router: &mut Router,
    zone: &[usize],
    hour: u32,
    id: String,
    rng: &mut R,
) -> Option<Route> {
    for _ in 0..MAX_OD_ATTEMPTS {
        let trip = draw_trip(zone, hour, id.clone(), rng);
        if let Ok(route) = router.route(net, &trip) {
            return Some(route);
        }
    }
    None
}

pub fn route_trip(net: &RoadNetwork, trip: &Trip) -> Result<Route, SimError> {
    Router::default().route(net, trip)
}

/// Shortest-path router with a per-OD-pair cache.
#[derive(Debug, Default, Clone)]
pub struct Router {
    cache: HashMap<(usize, usize), Option<Arc<[usize]>>>,
}

impl Router {
    pub fn path(&mut self, net: &RoadNetwork, origin: usize, destination: usize) -> Option<Arc<[usize]>> {
        self.cache
            .entry((origin, destination))
            .or_insert_with(|| shortest_path(net, origin, destination).map(Arc::from))
            .clone()
    }

    pub fn route(&mut self, net: &RoadNetwork, trip: &Trip) -> Result<Route, SimError> {
        match self.path(net, trip.origin, trip.destination) {
            Some(edges) => Ok(Route {
                id: trip.id.clone(),
                depart: trip.depart,
                edges,
            }),
            None => Err(SimError::Unreachable {
                origin: net.edges()[trip.origin].id.clone(),
                destination: net.edges()[trip.destination].id.clone(),
            }),
        }
    }
}

/// A vehicle still travelling when an hour ends.
#[derive(Debug, Clone, PartialEq)]
pub struct InFlight {
    pub edges: Arc<[usize]>,
    pub index: u32,
    pub pos: f64,
    /// Detectors this vehicle has already passed.
    pub counted: SmallVec<[u32; 2]>,
}

/// Vehicles in flight at an hour boundary.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimState {
    /// Absolute second the state refers to; a multiple of one hour.
    pub time: u32,
    pub vehicles: Vec<InFlight>,
}

const STATE_MAGIC: &[u8; 4] = b"FTCS";
const STATE_VERSION: u32 = 1;

impl SimState {
    pub fn empty(hour: u32) -> Self {
        Self {
            time: hour * HOUR_SECS,
            vehicles: Vec::new(),
        }
    }

    pub fn hour(&self) -> u32 {
        self.time / HOUR_SECS
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(STATE_MAGIC);
        out.extend_from_slice(&STATE_VERSION.to_le_bytes());
        out.extend_from_slice(&self.time.to_le_bytes());
        out.extend_from_slice(&(self.vehicles.len() as u32).to_le_bytes());
        for v in &self.vehicles {
            out.extend_from_slice(&(v.edges.len() as u32).to_le_bytes());
            for &e in v.edges.iter() {
                out.extend_from_slice(&(e as u32).to_le_bytes());
            }
            out.extend_from_slice(&v.index.to_le_bytes());
            out.extend_from_slice(&v.pos.to_le_bytes());
            out.extend_from_slice(&(v.counted.len() as u32).to_le_bytes());
            for &d in &v.counted {
                out.extend_from_slice(&d.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SimError> {
        let mut r = ByteReader { buf: bytes, at: 0 };
        if r.take(4)? != STATE_MAGIC {
            return Err(SimError::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != STATE_VERSION {
            return Err(SimError::Checkpoint(format!("unsupported version {version}")));
        }
        let time = r.u32()?;
        let n = r.u32()? as usize;
        let mut vehicles = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let len = r.u32()? as usize;
            let edges = (0..len)
                .map(|_| r.u32().map(|e| e as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let index = r.u32()?;
            let pos = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
            let k = r.u32()? as usize;
            let counted = (0..k).map(|_| r.u32()).collect::<Result<_, _>>()?;
            if index as usize >= edges.len() {
                return Err(SimError::Checkpoint("route index out of range".into()));
            }
            vehicles.push(InFlight {
                edges: edges.into(),
                index,
                pos,
                counted,
            });
        }
        if r.at != bytes.len() {
            return Err(SimError::Checkpoint("trailing bytes".into()));
        }
        Ok(Self { time, vehicles })
    }
}

struct ByteReader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], SimError> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| SimError::Checkpoint("truncated".into()))?;
        let s = &self.buf[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, SimError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Result of simulating one hour of injected routes.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutcome {
    pub hour: u32,
    /// Per detector: injected vehicles counted during `hour`.
    pub counts: Vec<u32>,
    /// Per detector: injected vehicles counted in hours `hour+1 ..= hour+23`.
    pub residual: Vec<[u32; RESIDUAL_HOURS]>,
    /// Every vehicle (carried over or injected) still travelling at the end of `hour`.
    pub carryover: SimState,
    /// Injected vehicles still travelling when the horizon ended.
    pub truncated: u32,
}

impl SimOutcome {
    pub fn total(&self, det: usize) -> u32 {
        self.counts[det] + self.residual[det].iter().sum::<u32>()
    }
}

struct Vehicle {
    edges: Arc<[usize]>,
    index: u32,
    pos: f64,
    counted: SmallVec<[u32; 2]>,
    tracked: bool,
}

/// Active vehicles stored column-wise; the per-step hot loop touches only
/// `edge` and `pos`.
#[derive(Default)]
struct Fleet {
    edge: Vec<u32>,
    pos: Vec<f64>,
    index: Vec<u32>,
    routes: Vec<Arc<[usize]>>,
    counted: Vec<SmallVec<[u32; 2]>>,
    tracked: Vec<bool>,
}

impl Fleet {
    fn len(&self) -> usize {
        self.edge.len()
    }

    fn push(&mut self, v: Vehicle) {
        self.edge.push(v.edges[v.index as usize] as u32);
        self.pos.push(v.pos);
        self.index.push(v.index);
        self.routes.push(v.edges);
        self.counted.push(v.counted);
        self.tracked.push(v.tracked);
    }

    fn swap_remove(&mut self, i: usize) {
        self.edge.swap_remove(i);
        self.pos.swap_remove(i);
        self.index.swap_remove(i);
        self.routes.swap_remove(i);
        self.counted.swap_remove(i);
        self.tracked.swap_remove(i);
    }
}

#[inline(always)]
fn edge_speed(density: bool, free: f64, occupancy: u32, capacity: f64) -> f64 {
    if density {
        free * (1.0 - occupancy as f64 / capacity).max(MIN_SPEED_FACTOR)
    } else {
        free
    }
}

struct Engine<'n> {
    net: &'n RoadNetwork,
    length: Vec<f64>,
    free_speed: Vec<f64>,
    capacity: Vec<f64>,
    has_detector: Vec<bool>,
    occupancy: Vec<u32>,
    snapshot: Vec<u32>,
    /// Speed of each edge during the step `speed_step[e]`.
    speed: Vec<f64>,
    speed_step: Vec<u32>,
    active: Fleet,
    /// `hourly[det][k]`: tracked crossings in hour `start_hour + k`.
    hourly: Vec<[u32; MAX_HORIZON_HOURS as usize]>,
    start_hour: u32,
    density: bool,
}

impl<'n> Engine<'n> {
    fn new(net: &'n RoadNetwork, start_hour: u32, density: bool) -> Self {
        let edges = net.edges();
        Self {
            net,
            length: edges.iter().map(|e| e.length).collect(),
            free_speed: edges.iter().map(|e| e.speed).collect(),
            capacity: edges.iter().map(|e| e.lanes as f64 * e.length / JAM_SPACING).collect(),
            has_detector: (0..edges.len()).map(|e| !net.detectors_on(e).is_empty()).collect(),
            occupancy: vec![0; edges.len()],
            snapshot: vec![0; edges.len()],
            speed: vec![0.0; edges.len()],
            speed_step: vec![u32::MAX; edges.len()],
            active: Fleet::default(),
            hourly: vec![[0; MAX_HORIZON_HOURS as usize]; net.detectors().len()],
            start_hour,
            density,
        }
    }

    fn insert(&mut self, v: Vehicle) {
        self.occupancy[v.edges[v.index as usize]] += 1;
        self.active.push(v);
    }

    #[inline]
    fn speed(&mut self, e: usize, now: u32) -> f64 {
        if self.speed_step[e] != now {
            self.speed_step[e] = now;
            self.speed[e] = edge_speed(self.density, self.free_speed[e], self.snapshot[e], self.capacity[e]);
        }
        self.speed[e]
    }

    fn record(&mut self, vi: usize, det: usize, when: f64) {
        let d = det as u32;
        let counted = &mut self.active.counted[vi];
        if counted.contains(&d) {
            return;
        }
        counted.push(d);
        if self.active.tracked[vi] {
            let bucket = (when / HOUR_SECS as f64).floor() as i64 - self.start_hour as i64;
            if (0..MAX_HORIZON_HOURS as i64).contains(&bucket) {
                self.hourly[det][bucket as usize] += 1;
            }
        }
    }

    /// Advances every active vehicle over `[now, now + 1)`. Speeds come from
    /// the occupancy snapshot, so the processing order does not matter and
    /// arrived vehicles are swap-removed.
    fn step(&mut self, now: u32) {
        self.snapshot.copy_from_slice(&self.occupancy);
        let mut n = self.active.len();
        let mut vi = 0;
        while vi < n {
            // vehicles that stay on a detector-free edge
            {
                let edge = &self.active.edge[..n];
                let pos = &mut self.active.pos[..n];
                while vi < n {
                    let e = edge[vi] as usize;
                    let speed = if self.speed_step[e] == now {
                        self.speed[e]
                    } else {
                        self.speed_step[e] = now;
                        let v = edge_speed(self.density, self.free_speed[e], self.snapshot[e], self.capacity[e]);
                        self.speed[e] = v;
                        v
                    };
                    let p = pos[vi];
                    if speed < self.length[e] - p && !self.has_detector[e] {
                        pos[vi] = p + speed;
                        vi += 1;
                    } else {
                        break;
                    }
                }
            }
            if vi == n {
                break;
            }
            if self.advance(vi, now) {
                n -= 1;
                self.active.swap_remove(vi);
            } else {
                vi += 1;
            }
        }
    }

    /// General one-step update of vehicle `vi`; returns true when it arrived.
    fn advance(&mut self, vi: usize, now: u32) -> bool {
        let mut budget = 1.0;
        let mut elapsed = 0.0;
        loop {
            let e = self.active.edge[vi] as usize;
            let pos = self.active.pos[vi];
            let speed = self.speed(e, now);
            let length = self.length[e];
            let travel = speed * budget;
            let remaining = length - pos;
            if travel < remaining {
                for k in 0..self.net.detectors_on(e).len() {
                    let (det, dpos) = self.net.detectors_on(e)[k];
                    if dpos >= pos && dpos < pos + travel {
                        self.record(vi, det, now as f64 + elapsed + (dpos - pos) / speed);
                    }
                }
                self.active.pos[vi] = pos + travel;
                return false;
            }
            for k in 0..self.net.detectors_on(e).len() {
                let (det, dpos) = self.net.detectors_on(e)[k];
                if dpos >= pos {
                    self.record(vi, det, now as f64 + elapsed + (dpos - pos) / speed);
                }
            }
            let dt = remaining / speed;
            elapsed += dt;
            budget -= dt;
            self.occupancy[e] -= 1;
            let next = self.active.index[vi] as usize + 1;
            let route = &self.active.routes[vi];
            if next == route.len() {
                return true;
            }
            let ne = route[next];
            self.active.index[vi] = next as u32;
            self.active.edge[vi] = ne as u32;
            self.active.pos[vi] = 0.0;
            self.occupancy[ne] += 1;
            if budget <= 0.0 {
                return false;
            }
        }
    }

    fn state(&self, time: u32) -> SimState {
        let a = &self.active;
        SimState {
            time,
            vehicles: (0..a.len())
                .map(|i| InFlight {
                    edges: a.routes[i].clone(),
                    index: a.index[i],
                    pos: a.pos[i],
                    counted: a.counted[i].clone(),
                })
                .collect(),
        }
    }

    /// Runs from `start` until nothing is left or `end` is reached. Returns the
    /// state at `capture` if that instant was reached, and the number of
    /// tracked vehicles left unfinished.
    fn run(&mut self, routes: &[Route], start: u32, end: u32, capture: Option<u32>) -> (Option<SimState>, u32) {
        let mut keys: Vec<u64> = routes
            .iter()
            .enumerate()
            .map(|(i, r)| (r.depart as u64) << 32 | i as u64)
            .collect();
        keys.sort_unstable();
        let order: Vec<usize> = keys.into_iter().map(|k| (k & 0xffff_ffff) as usize).collect();
        let mut next = 0;
        let mut now = start;
        let mut captured = None;
        loop {
            if let Some(at) = capture {
                if captured.is_none() && now >= at {
                    captured = Some(self.state(at));
                }
            }
            if now >= end || (self.active.len() == 0 && next == order.len()) {
                break;
            }
            if self.active.len() == 0 {
                let skip_to = routes[order[next]].depart.max(now);
                if skip_to > now {
                    now = skip_to.min(end);
                    continue;
                }
            }
            while next < order.len() && routes[order[next]].depart.max(start) <= now {
                let r = &routes[order[next]];
                next += 1;
                if r.edges.is_empty() {
                    continue;
                }
                self.insert(Vehicle {
                    edges: r.edges.clone(),
                    index: 0,
                    pos: 0.0,
                    counted: SmallVec::new(),
                    tracked: true,
                });
            }
            self.step(now);
            now += 1;
        }
        if let Some(at) = capture {
            if captured.is_none() {
                captured = Some(SimState::empty(at / HOUR_SECS));
            }
        }
        let unfinished = self.active.tracked.iter().filter(|t| **t).count() as u32
            + order[next..].iter().filter(|&&i| !routes[i].edges.is_empty()).count() as u32;
        (captured, unfinished)
    }
}

/// Simulation switches used by tests and experiments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub horizon_hours: u32,
    /// Disable to run every edge at free-flow speed.
    pub density: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            horizon_hours: MAX_HORIZON_HOURS,
            density: true,
        }
    }
}

/// Simulates `routes` (departing during the carryover's hour) on top of the
/// carried-over vehicles. Carried-over vehicles load the network but are not
/// counted. Routes departing before the hour are inserted at its start.
pub fn run_hour(net: &RoadNetwork, routes: &[Route], carryover: &SimState, cfg: SimConfig) -> SimOutcome {
    let hour = carryover.hour();
    let start = hour * HOUR_SECS;
    let horizon = cfg.horizon_hours.clamp(1, MAX_HORIZON_HOURS);
    let mut engine = Engine::new(net, hour, cfg.density);
    for v in &carryover.vehicles {
        engine.insert(Vehicle {
            edges: v.edges.clone(),
            index: v.index,
            pos: v.pos,
            counted: v.counted.clone(),
            tracked: false,
        });
    }
    let (state, truncated) = engine.run(routes, start, start + horizon * HOUR_SECS, Some(start + HOUR_SECS));
    let counts = engine.hourly.iter().map(|h| h[0]).collect();
    let residual = engine
        .hourly
        .iter()
        .map(|h| {
            let mut r = [0; RESIDUAL_HOURS];
            r.copy_from_slice(&h[1..]);
            r
        })
        .collect();
    SimOutcome {
        hour,
        counts,
        residual,
        carryover: state.unwrap_or_else(|| SimState::empty(hour + 1)),
        truncated,
    }
}

/// Simulates a whole day of routes from midnight and returns hourly counts
/// per detector.
pub fn replay_day(net: &RoadNetwork, routes: &[Route], cfg: SimConfig) -> Vec<[u32; 24]> {
    let mut engine = Engine::new(net, 0, cfg.density);
    engine.run(routes, 0, MAX_HORIZON_HOURS * HOUR_SECS, None);
    engine.hourly
}

/// Writes routes as a SUMO route file. Output bytes depend only on the input.
pub fn emit_route_file(net: &RoadNetwork, routes: &[Route], path: impl AsRef<Path>) -> Result<(), SimError> {
    let path = path.as_ref();
    let text = route_file_string(net, routes)?;
    std::fs::write(path, text).map_err(|source| SimError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn route_file_string(net: &RoadNetwork, routes: &[Route]) -> Result<String, SimError> {
    if let Some(w) = routes.windows(2).find(|w| w[1].depart < w[0].depart) {
        return Err(SimError::UnsortedDeparts(w[1].id.clone()));
    }
    let mut s = String::from("<routes>\n");
    for r in routes {
        let edges: Vec<&str> = r.edges.iter().map(|&e| net.edges()[e].id.as_str()).collect();
        let _ = writeln!(s, "    <vehicle id=\"{}\" depart=\"{}.00\">", xml_escape(&r.id), r.depart);
        let _ = writeln!(s, "        <route edges=\"{}\"/>", xml_escape(&edges.join(" ")));
        s.push_str("    </vehicle>\n");
    }
    s.push_str("</routes>\n");
    Ok(s)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn xml_unescape(s: &str) -> String {
    s.replace("&quot;", "\"")
        .replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&amp;", "&")
}

fn attr<'a>(tag: &'a str, name: &str) -> Option<&'a str> {
    let key = format!(" {name}=\"");
    let start = tag.find(&key)? + key.len();
    let end = tag[start..].find('"')? + start;
    Some(&tag[start..end])
}

/// Reads back the subset written by [`emit_route_file`].
pub fn read_route_file(net: &RoadNetwork, path: impl AsRef<Path>) -> Result<Vec<Route>, SimError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| SimError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_route_file(net, &text)
}

pub fn parse_route_file(net: &RoadNetwork, text: &str) -> Result<Vec<Route>, SimError> {
    let mut routes = Vec::new();
    let mut open: Option<(String, u32)> = None;
    let mut seen_root = false;
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let t = raw.trim();
        let bad = |msg: String| SimError::RouteParse { line, msg };
        if t.is_empty() || t.starts_with("<?xml") || t.starts_with("<!--") {
            continue;
        }
        if t.starts_with("<routes") {
            seen_root = true;
        } else if t == "</routes>" {
            break;
        } else if t.starts_with("<vehicle") {
            let id = attr(t, "id").ok_or_else(|| bad("vehicle without id".into()))?;
            let depart = attr(t, "depart").ok_or_else(|| bad("vehicle without depart".into()))?;
            let depart: f64 = depart.parse().map_err(|_| bad(format!("bad depart {depart:?}")))?;
            if !(depart >= 0.0) || depart.fract() != 0.0 || depart > u32::MAX as f64 {
                return Err(bad(format!("depart {depart} is not a whole second")));
            }
            open = Some((xml_unescape(id), depart as u32));
        } else if t.starts_with("<route ") || t.starts_with("<route\t") {
            let (id, depart) = open.take().ok_or_else(|| bad("route outside vehicle".into()))?;
            let list = attr(t, "edges").ok_or_else(|| bad("route without edges".into()))?;
            let edges = xml_unescape(list)
                .split_whitespace()
                .map(|e| net.edge_id(e).ok_or_else(|| bad(format!("unknown edge {e:?}"))))
                .collect::<Result<Vec<_>, _>>()?;
            routes.push(Route {
                id,
                depart,
                edges: edges.into(),
            });
        } else if t == "</vehicle>" {
            if open.is_some() {
                return Err(bad("vehicle without route".into()));
            }
        } else {
            return Err(bad(format!("unexpected content {t:?}")));
        }
    }
    if !seen_root {
        return Err(SimError::RouteParse {
            line: 1,
            msg: "missing <routes> root".into(),
        });
    }
    Ok(routes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn line_net(len: f64, speed: f64, det_pos: f64) -> RoadNetwork {
        format!(
            "node a 0 0\nnode b {len} 0\nnode c {} 0\nedge e1 a b {len} {speed} 1\nedge e2 b c {len} {speed} 1\ndetector d e1 {det_pos}\n",
            2.0 * len
        )
        .parse()
        .unwrap()
    }

    fn route(id: &str, depart: u32, edges: &[usize]) -> Route {
        Route {
            id: id.into(),
            depart,
            edges: edges.to_vec().into(),
        }
    }

    #[test]
    fn sample_od_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_od(&[1, 2], 0, 0, &mut rng).unwrap().is_empty());
        assert!(matches!(sample_od(&[1], 0, 3, &mut rng), Err(SimError::ZoneTooSmall(1))));
        let a = sample_od(&[1, 2, 3], 5, 50, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_od(&[1, 2, 3], 5, 50, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        for t in &a {
            assert_ne!(t.origin, t.destination);
            assert!((5 * 3600..6 * 3600).contains(&t.depart));
        }
    }

    #[test]
    fn empty_routes_count_nothing() {
        let net = line_net(100.0, 10.0, 50.0);
        let out = run_hour(&net, &[], &SimState::empty(0), SimConfig::default());
        assert_eq!(out.counts, vec![0]);
        assert_eq!(out.residual, vec![[0; 23]]);
        assert!(out.carryover.vehicles.is_empty());
    }

    #[test]
    fn single_vehicle_crossing_at_five_seconds() {
        let net = line_net(100.0, 10.0, 50.0);
        let out = run_hour(&net, &[route("v", 0, &[0])], &SimState::empty(0), SimConfig::default());
        assert_eq!(out.counts, vec![1]);
        assert_eq!(out.residual, vec![[0; 23]]);
    }

    #[test]
    fn late_departure_spills_into_next_hour() {
        // departs at 3599 s, detector 10 m in at 10 m/s: crossing at 3600 s
        let net = line_net(100.0, 10.0, 10.0);
        let out = run_hour(&net, &[route("v", 3599, &[0, 1])], &SimState::empty(0), SimConfig::default());
        assert_eq!(out.counts, vec![0]);
        assert_eq!(out.residual[0][0], 1);
        assert_eq!(out.total(0), 1);
        assert_eq!(out.carryover.vehicles.len(), 1);
        assert_eq!(out.carryover.time, 3600);
    }

    #[test]
    fn carryover_vehicles_load_but_do_not_count() {
        let net = line_net(100.0, 10.0, 10.0);
        let first = run_hour(&net, &[route("v", 3599, &[0, 1])], &SimState::empty(0), SimConfig::default());
        let second = run_hour(&net, &[], &first.carryover, SimConfig::default());
        assert_eq!(second.hour, 1);
        assert_eq!(second.counts, vec![0]);
        assert!(second.carryover.vehicles.is_empty());
    }

    #[test]
    fn detector_at_edge_end_counts_once() {
        let net = line_net(100.0, 10.0, 100.0);
        let out = run_hour(
            &net,
            &[route("a", 0, &[0, 1]), route("b", 3, &[0])],
            &SimState::empty(0),
            SimConfig::default(),
        );
        assert_eq!(out.counts, vec![2]);
    }

    #[test]
    fn congestion_slows_traffic() {
        let net = line_net(100.0, 10.0, 50.0);
        let lone = replay_day(&net, &[route("a", 0, &[0, 1])], SimConfig::default());
        assert_eq!(lone[0][0], 1);
        let crowd: Vec<Route> = (0..40).map(|i| route(&format!("v{i}"), 3590, &[0, 1])).collect();
        let jammed = run_hour(&net, &crowd, &SimState::empty(0), SimConfig::default());
        let free = run_hour(&net, &crowd, &SimState::empty(0), SimConfig { density: false, ..Default::default() });
        assert_eq!(free.counts[0], 40);
        assert!(jammed.counts[0] < 40);
        assert_eq!(jammed.total(0), 40);
    }

    #[test]
    fn routing_errors_and_trivial_paths() {
        let net = line_net(100.0, 10.0, 10.0);
        let trip = Trip { id: "t".into(), origin: 0, destination: 1, depart: 0 };
        assert_eq!(&*route_trip(&net, &trip).unwrap().edges, &[0, 1]);
        let back = Trip { id: "t".into(), origin: 1, destination: 0, depart: 0 };
        assert!(matches!(route_trip(&net, &back), Err(SimError::Unreachable { .. })));
    }

    #[test]
    fn route_file_format() {
        let net = line_net(100.0, 10.0, 10.0);
        assert_eq!(route_file_string(&net, &[]).unwrap(), "<routes>\n</routes>\n");
        let rs = vec![route("a", 1, &[0]), route("b", 7, &[0, 1])];
        let text = route_file_string(&net, &rs).unwrap();
        assert_eq!(text.matches("<vehicle ").count(), 2);
        assert!(text.find("id=\"a\"").unwrap() < text.find("id=\"b\"").unwrap());
        assert!(text.contains("<route edges=\"e1 e2\"/>"));
        assert_eq!(parse_route_file(&net, &text).unwrap(), rs);
        let unsorted = vec![route("b", 7, &[0]), route("a", 1, &[0])];
        assert!(matches!(route_file_string(&net, &unsorted), Err(SimError::UnsortedDeparts(_))));
    }

    #[test]
    fn carryover_checkpoint_round_trip() {
        let net = line_net(100.0, 10.0, 10.0);
        let out = run_hour(&net, &[route("v", 3595, &[0, 1])], &SimState::empty(0), SimConfig::default());
        let bytes = out.carryover.to_bytes();
        assert_eq!(SimState::from_bytes(&bytes).unwrap(), out.carryover);
        assert!(SimState::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(SimState::from_bytes(b"nope").is_err());
    }
}

