//! Road network, hourly target profiles and the detector-owned zone partition.
//!
//! Networks are read from a line-oriented text format:
//!
//! ```text
//! # comment
//! node <id> <x> <y>
//! edge <id> <from-node> <to-node> <length m> <speed m/s> <lanes>
//! detector <id> <edge> <position m>
//! ```
//!
//! Profiles are CSV with a `detector_id,h0,...,h23` header and an optional
//! trailing `label` column (`low`, `medium` or `high`).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

pub const HOURS: usize = 24;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid network: {0}")]
    Validation(String),
    #[error("invalid profile for {detector}: {msg}")]
    Profile { detector: String, msg: String },
    #[error("partition requires at least one detector")]
    NoDetectors,
    #[error("detectors {0} and {1} share the same coordinates")]
    DuplicateSeed(String, String),
    #[error("detectors {0} and {1} sit on the same edge")]
    SharedDetectorEdge(String, String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub id: String,
    pub from: usize,
    pub to: usize,
    pub length: f64,
    pub speed: f64,
    pub lanes: u32,
}

impl Edge {
    pub fn free_flow_time(&self) -> f64 {
        self.length / self.speed
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detector {
    pub id: String,
    pub edge: usize,
    pub pos: f64,
}

/// Raw records before validation; ids are still strings.
#[derive(Debug, Clone, Default)]
pub struct NetworkSpec {
    pub nodes: Vec<(String, f64, f64)>,
    pub edges: Vec<(String, String, String, f64, f64, u32)>,
    pub detectors: Vec<(String, String, f64)>,
}

impl NetworkSpec {
    pub fn node(&mut self, id: impl Into<String>, x: f64, y: f64) -> &mut Self {
        self.nodes.push((id.into(), x, y));
        self
    }

    pub fn edge(
        &mut self,
        id: impl Into<String>,
        from: impl Into<String>,
        to: impl Into<String>,
        length: f64,
        speed: f64,
        lanes: u32,
    ) -> &mut Self {
        self.edges
            .push((id.into(), from.into(), to.into(), length, speed, lanes));
        self
    }

    pub fn detector(&mut self, id: impl Into<String>, edge: impl Into<String>, pos: f64) -> &mut Self {
        self.detectors.push((id.into(), edge.into(), pos));
        self
    }

    pub fn build(&self) -> Result<RoadNetwork, ScenarioError> {
        RoadNetwork::from_spec(self)
    }
}

/// Validated directed road graph. Nodes, edges and detectors are stored in
/// ascending id order, so index order and id order agree.
#[derive(Debug, Clone)]
pub struct RoadNetwork {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    detectors: Vec<Detector>,
    edge_index: BTreeMap<String, usize>,
    out_edges: Vec<Vec<usize>>,
    edge_detectors: Vec<Vec<(usize, f64)>>,
}

impl RoadNetwork {
    pub fn from_spec(spec: &NetworkSpec) -> Result<Self, ScenarioError> {
        let mut node_map = BTreeMap::new();
        for (id, x, y) in &spec.nodes {
            if !x.is_finite() || !y.is_finite() {
                return Err(ScenarioError::Validation(format!("node {id} has non-finite coordinates")));
            }
            if node_map.insert(id.clone(), (*x, *y)).is_some() {
                return Err(ScenarioError::Validation(format!("duplicate node {id}")));
            }
        }
        let nodes: Vec<Node> = node_map
            .iter()
            .map(|(id, &(x, y))| Node { id: id.clone(), x, y })
            .collect();
        let node_index: BTreeMap<&str, usize> =
            nodes.iter().enumerate().map(|(i, n)| (n.id.as_str(), i)).collect();

        let mut edge_map = BTreeMap::new();
        for (id, from, to, length, speed, lanes) in &spec.edges {
            let lookup = |n: &str| {
                node_index.get(n).copied().ok_or_else(|| {
                    ScenarioError::Validation(format!("edge {id} references missing node {n}"))
                })
            };
            let (f, t) = (lookup(from)?, lookup(to)?);
            if !(*length > 0.0) || !length.is_finite() {
                return Err(ScenarioError::Validation(format!("edge {id} has non-positive length")));
            }
            if !(*speed > 0.0) || !speed.is_finite() {
                return Err(ScenarioError::Validation(format!("edge {id} has non-positive speed")));
            }
            if *lanes == 0 {
                return Err(ScenarioError::Validation(format!("edge {id} has zero lanes")));
            }
            let edge = Edge {
                id: id.clone(),
                from: f,
                to: t,
                length: *length,
                speed: *speed,
                lanes: *lanes,
            };
            if edge_map.insert(id.clone(), edge).is_some() {
                return Err(ScenarioError::Validation(format!("duplicate edge {id}")));
            }
        }
        let edges: Vec<Edge> = edge_map.into_values().collect();
        let edge_index: BTreeMap<String, usize> =
            edges.iter().enumerate().map(|(i, e)| (e.id.clone(), i)).collect();

        let mut det_map = BTreeMap::new();
        for (id, edge, pos) in &spec.detectors {
            let e = *edge_index.get(edge).ok_or_else(|| {
                ScenarioError::Validation(format!("detector {id} references missing edge {edge}"))
            })?;
            if !(0.0..=edges[e].length).contains(pos) {
                return Err(ScenarioError::Validation(format!(
                    "detector {id} position {pos} outside edge {edge} (length {})",
                    edges[e].length
                )));
            }
            let det = Detector { id: id.clone(), edge: e, pos: *pos };
            if det_map.insert(id.clone(), det).is_some() {
                return Err(ScenarioError::Validation(format!("duplicate detector {id}")));
            }
        }
        let detectors: Vec<Detector> = det_map.into_values().collect();

        if nodes.is_empty() {
            return Err(ScenarioError::Validation("network has no nodes".into()));
        }
        if !weakly_connected(nodes.len(), &edges) {
            return Err(ScenarioError::Validation("network is not weakly connected".into()));
        }

        let mut out_edges = vec![Vec::new(); nodes.len()];
        for (i, e) in edges.iter().enumerate() {
            out_edges[e.from].push(i);
        }
        let mut edge_detectors = vec![Vec::new(); edges.len()];
        for (i, d) in detectors.iter().enumerate() {
            edge_detectors[d.edge].push((i, d.pos));
        }
        Ok(Self {
            nodes,
            edges,
            detectors,
            edge_index,
            out_edges,
            edge_detectors,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        text.parse()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn detectors(&self) -> &[Detector] {
        &self.detectors
    }

    pub fn edge_id(&self, id: &str) -> Option<usize> {
        self.edge_index.get(id).copied()
    }

    pub fn detector_index(&self, id: &str) -> Option<usize> {
        self.detectors.iter().position(|d| d.id == id)
    }

    /// Edges leaving the head node of `edge`.
    pub fn successors(&self, edge: usize) -> &[usize] {
        &self.out_edges[self.edges[edge].to]
    }

    /// Detectors located on `edge` as `(detector index, position)`.
    pub fn detectors_on(&self, edge: usize) -> &[(usize, f64)] {
        &self.edge_detectors[edge]
    }

    pub fn edge_midpoint(&self, edge: usize) -> (f64, f64) {
        let e = &self.edges[edge];
        let (a, b) = (&self.nodes[e.from], &self.nodes[e.to]);
        ((a.x + b.x) / 2.0, (a.y + b.y) / 2.0)
    }

    /// Planar coordinates of a detector, interpolated along its edge.
    pub fn detector_point(&self, det: usize) -> (f64, f64) {
        let d = &self.detectors[det];
        let e = &self.edges[d.edge];
        let (a, b) = (&self.nodes[e.from], &self.nodes[e.to]);
        let f = d.pos / e.length;
        (a.x + (b.x - a.x) * f, a.y + (b.y - a.y) * f)
    }

    /// Copy of the network keeping only the named detectors.
    pub fn with_detectors(&self, keep: &[&str]) -> Result<Self, ScenarioError> {
        let mut spec = self.to_spec();
        for k in keep {
            if !spec.detectors.iter().any(|d| d.0 == *k) {
                return Err(ScenarioError::Validation(format!("unknown detector {k}")));
            }
        }
        spec.detectors.retain(|d| keep.contains(&d.0.as_str()));
        spec.build()
    }

    /// Same network with every coordinate shifted by `(dx, dy)`.
    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        let mut net = self.clone();
        for n in &mut net.nodes {
            n.x += dx;
            n.y += dy;
        }
        net
    }

    pub fn to_spec(&self) -> NetworkSpec {
        NetworkSpec {
            nodes: self.nodes.iter().map(|n| (n.id.clone(), n.x, n.y)).collect(),
            edges: self
                .edges
                .iter()
                .map(|e| {
                    (
                        e.id.clone(),
                        self.nodes[e.from].id.clone(),
                        self.nodes[e.to].id.clone(),
                        e.length,
                        e.speed,
                        e.lanes,
                    )
                })
                .collect(),
            detectors: self
                .detectors
                .iter()
                .map(|d| (d.id.clone(), self.edges[d.edge].id.clone(), d.pos))
                .collect(),
        }
    }
}

impl FromStr for RoadNetwork {
    type Err = ScenarioError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut spec = NetworkSpec::default();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let fields: Vec<&str> = content.split_whitespace().collect();
            let bad = |msg: &str| ScenarioError::Parse { line, msg: msg.to_string() };
            let num = |s: &str| -> Result<f64, ScenarioError> {
                s.parse::<f64>().map_err(|_| bad(&format!("expected a number, got {s:?}")))
            };
            match fields[0] {
                "node" => {
                    if fields.len() != 4 {
                        return Err(bad("expected `node id x y`"));
                    }
                    spec.node(fields[1], num(fields[2])?, num(fields[3])?);
                }
                "edge" => {
                    if fields.len() != 7 {
                        return Err(bad("expected `edge id from to length speed lanes`"));
                    }
                    let lanes = fields[6]
                        .parse::<u32>()
                        .map_err(|_| bad(&format!("expected a lane count, got {:?}", fields[6])))?;
                    spec.edge(fields[1], fields[2], fields[3], num(fields[4])?, num(fields[5])?, lanes);
                }
                "detector" => {
                    if fields.len() != 4 {
                        return Err(bad("expected `detector id edge pos`"));
                    }
                    spec.detector(fields[1], fields[2], num(fields[3])?);
                }
                other => return Err(bad(&format!("unknown record type {other:?}"))),
            }
        }
        spec.build()
    }
}

impl fmt::Display for RoadNetwork {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for n in &self.nodes {
            writeln!(f, "node {} {} {}", n.id, n.x, n.y)?;
        }
        for e in &self.edges {
            writeln!(
                f,
                "edge {} {} {} {} {} {}",
                e.id, self.nodes[e.from].id, self.nodes[e.to].id, e.length, e.speed, e.lanes
            )?;
        }
        for d in &self.detectors {
            writeln!(f, "detector {} {} {}", d.id, self.edges[d.edge].id, d.pos)?;
        }
        Ok(())
    }
}

fn weakly_connected(n: usize, edges: &[Edge]) -> bool {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for e in edges {
        let (a, b) = (find(&mut parent, e.from), find(&mut parent, e.to));
        if a != b {
            parent[a] = b;
        }
    }
    let root = find(&mut parent, 0);
    (0..n).all(|i| find(&mut parent, i) == root)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum IntensityClass {
    Low,
    Medium,
    High,
}

impl IntensityClass {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Low => "low",
            Self::Medium => "medium",
            Self::High => "high",
        }
    }
}

impl FromStr for IntensityClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "low" => Ok(Self::Low),
            "medium" => Ok(Self::Medium),
            "high" => Ok(Self::High),
            other => Err(format!("unknown intensity class {other:?}")),
        }
    }
}

/// Hourly target intensities (vehicles/hour) for one detector.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorProfile {
    pub detector: String,
    pub targets: [f64; HOURS],
    pub label: Option<IntensityClass>,
}

impl DetectorProfile {
    pub fn new(detector: impl Into<String>, targets: &[f64]) -> Result<Self, ScenarioError> {
        let detector = detector.into();
        let targets: [f64; HOURS] = targets.try_into().map_err(|_| ScenarioError::Profile {
            detector: detector.clone(),
            msg: format!("expected {HOURS} hourly values, got {}", targets.len()),
        })?;
        if let Some(v) = targets.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(ScenarioError::Profile {
                detector,
                msg: format!("target {v} is not a non-negative number"),
            });
        }
        Ok(Self { detector, targets, label: None })
    }

    pub fn with_label(mut self, label: IntensityClass) -> Self {
        self.label = Some(label);
        self
    }

    pub fn min(&self) -> f64 {
        self.targets.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.targets.iter().copied().fold(0.0, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.targets.iter().sum::<f64>() / HOURS as f64
    }
}

pub fn load_profiles(path: impl AsRef<Path>) -> Result<Vec<DetectorProfile>, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_profiles(&text)
}

pub fn parse_profiles(text: &str) -> Result<Vec<DetectorProfile>, ScenarioError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| ScenarioError::Parse { line: 1, msg: e.to_string() })?
        .clone();
    let expected: Vec<String> = std::iter::once("detector_id".to_string())
        .chain((0..HOURS).map(|h| format!("h{h}")))
        .collect();
    let has_label = match header.len() {
        n if n == HOURS + 1 => false,
        n if n == HOURS + 2 && &header[HOURS + 1] == "label" => true,
        _ => {
            return Err(ScenarioError::Parse {
                line: 1,
                msg: "expected header detector_id,h0,...,h23[,label]".into(),
            })
        }
    };
    if header.iter().zip(&expected).any(|(a, b)| a != b) {
        return Err(ScenarioError::Parse {
            line: 1,
            msg: "expected header detector_id,h0,...,h23[,label]".into(),
        });
    }
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| ScenarioError::Parse { line, msg: e.to_string() })?;
        if rec.len() != header.len() {
            return Err(ScenarioError::Parse {
                line,
                msg: format!("expected {} fields, got {}", header.len(), rec.len()),
            });
        }
        let id = rec[0].to_string();
        let values = (1..=HOURS)
            .map(|k| {
                rec[k].parse::<f64>().map_err(|_| ScenarioError::Parse {
                    line,
                    msg: format!("bad value {:?} for h{}", &rec[k], k - 1),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut profile = DetectorProfile::new(id.clone(), &values)?;
        if has_label && !rec[HOURS + 1].is_empty() {
            let label = rec[HOURS + 1]
                .parse()
                .map_err(|msg| ScenarioError::Parse { line, msg })?;
            profile = profile.with_label(label);
        }
        if !seen.insert(id.clone()) {
            return Err(ScenarioError::Parse { line, msg: format!("duplicate detector {id}") });
        }
        out.push(profile);
    }
    Ok(out)
}

pub fn profiles_to_csv(profiles: &[DetectorProfile]) -> String {
    let with_label = profiles.iter().any(|p| p.label.is_some());
    let mut s = String::from("detector_id");
    for h in 0..HOURS {
        s.push_str(&format!(",h{h}"));
    }
    if with_label {
        s.push_str(",label");
    }
    s.push('\n');
    for p in profiles {
        s.push_str(&p.detector);
        for v in &p.targets {
            s.push_str(&format!(",{v}"));
        }
        if with_label {
            s.push(',');
            s.push_str(p.label.map(IntensityClass::as_str).unwrap_or(""));
        }
        s.push('\n');
    }
    s
}

/// Edge sets owned by each detector. Zones are indexed like
/// [`RoadNetwork::detectors`].
#[derive(Debug, Clone, PartialEq)]
pub struct ZonePartition {
    pub detector_ids: Vec<String>,
    pub seeds: Vec<(f64, f64)>,
    pub zones: Vec<Vec<usize>>,
    pub edge_zone: Vec<usize>,
}

impl ZonePartition {
    pub fn zone_of(&self, detector: &str) -> Option<&[usize]> {
        self.detector_ids
            .iter()
            .position(|d| d == detector)
            .map(|i| self.zones[i].as_slice())
    }
}

/// Assigns every edge to the detector closest to the edge midpoint. Equal
/// distances go to the detector with the smallest id. A detector's own edge
/// always belongs to its zone.
pub fn voronoi_partition(net: &RoadNetwork) -> Result<ZonePartition, ScenarioError> {
    let dets = net.detectors();
    if dets.is_empty() {
        return Err(ScenarioError::NoDetectors);
    }
    let seeds: Vec<(f64, f64)> = (0..dets.len()).map(|d| net.detector_point(d)).collect();
    for i in 0..dets.len() {
        for j in i + 1..dets.len() {
            if seeds[i] == seeds[j] {
                return Err(ScenarioError::DuplicateSeed(dets[i].id.clone(), dets[j].id.clone()));
            }
            if dets[i].edge == dets[j].edge {
                return Err(ScenarioError::SharedDetectorEdge(dets[i].id.clone(), dets[j].id.clone()));
            }
        }
    }
    let mut edge_zone = Vec::with_capacity(net.edges().len());
    for e in 0..net.edges().len() {
        let (mx, my) = net.edge_midpoint(e);
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (d, &(sx, sy)) in seeds.iter().enumerate() {
            let dist = (mx - sx).powi(2) + (my - sy).powi(2);
            // strict comparison keeps the smallest id on ties
            if dist < best_d {
                best_d = dist;
                best = d;
            }
        }
        edge_zone.push(best);
    }
    for (d, det) in dets.iter().enumerate() {
        edge_zone[det.edge] = d;
    }
    let mut zones = vec![Vec::new(); dets.len()];
    for (e, &z) in edge_zone.iter().enumerate() {
        zones[z].push(e);
    }
    Ok(ZonePartition {
        detector_ids: dets.iter().map(|d| d.id.clone()).collect(),
        seeds,
        zones,
        edge_zone,
    })
}

/// Undirected zone adjacency; pairs are stored as `(smaller, larger)` zone index.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AdjacencyGraph {
    pub pairs: BTreeSet<(usize, usize)>,
}

impl AdjacencyGraph {
    pub fn contains(&self, a: usize, b: usize) -> bool {
        self.pairs.contains(&(a.min(b), a.max(b)))
    }

    pub fn neighbors(&self, z: usize) -> Vec<usize> {
        self.pairs
            .iter()
            .filter_map(|&(a, b)| match (a == z, b == z) {
                (true, _) => Some(b),
                (_, true) => Some(a),
                _ => None,
            })
            .collect()
    }
}

/// Two zones are adjacent when an edge of one and an edge of the other
/// touch the same node.
pub fn zone_adjacency(part: &ZonePartition, net: &RoadNetwork) -> AdjacencyGraph {
    let mut zones_at_node: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); net.nodes().len()];
    for (e, edge) in net.edges().iter().enumerate() {
        let z = part.edge_zone[e];
        zones_at_node[edge.from].insert(z);
        zones_at_node[edge.to].insert(z);
    }
    let mut pairs = BTreeSet::new();
    for zs in &zones_at_node {
        let zs: Vec<usize> = zs.iter().copied().collect();
        for i in 0..zs.len() {
            for j in i + 1..zs.len() {
                pairs.insert((zs[i], zs[j]));
            }
        }
    }
    AdjacencyGraph { pairs }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_node() -> &'static str {
        "node a 0 0\nnode b 100 0\nedge e1 a b 100 10 1\n"
    }

    #[test]
    fn minimal_network_loads() {
        let net: RoadNetwork = two_node().parse().unwrap();
        assert_eq!(net.edges().len(), 1);
        assert_eq!(net.detectors().len(), 0);
        assert_eq!(net.edges()[0].free_flow_time(), 10.0);
    }

    #[test]
    fn missing_node_names_edge() {
        let err = "node a 0 0\nedge e1 a n9 100 10 1\n".parse::<RoadNetwork>().unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("e1") && msg.contains("n9"), "{msg}");
    }

    #[test]
    fn rejects_bad_records() {
        assert!(matches!(
            "node a 0\n".parse::<RoadNetwork>(),
            Err(ScenarioError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            "node a 0 0\nnode b 1 0\nedge e a b 0 10 1\n".parse::<RoadNetwork>(),
            Err(ScenarioError::Validation(_))
        ));
        assert!(matches!(
            "node a 0 0\nnode b 1 0\nedge e a b 1 10 1\ndetector d e 5\n".parse::<RoadNetwork>(),
            Err(ScenarioError::Validation(_))
        ));
        let disconnected = "node a 0 0\nnode b 1 0\nnode c 5 5\nnode d 6 5\nedge e1 a b 1 1 1\nedge e2 c d 1 1 1\n";
        let err = disconnected.parse::<RoadNetwork>().unwrap_err();
        assert!(err.to_string().contains("connected"));
    }

    #[test]
    fn display_round_trips() {
        let net: RoadNetwork = "node a 0 0\nnode b 100 0\nedge e1 a b 100 10 2\ndetector d1 e1 50\n"
            .parse()
            .unwrap();
        let again: RoadNetwork = net.to_string().parse().unwrap();
        assert_eq!(again.edges(), net.edges());
        assert_eq!(again.detectors(), net.detectors());
    }

    #[test]
    fn single_detector_owns_everything() {
        let net: RoadNetwork = "node a 0 0\nnode b 100 0\nnode c 200 0\nedge e1 a b 100 10 1\nedge e2 b c 100 10 1\ndetector d e1 10\n"
            .parse()
            .unwrap();
        let part = voronoi_partition(&net).unwrap();
        assert_eq!(part.zones, vec![vec![0, 1]]);
        assert!(zone_adjacency(&part, &net).pairs.is_empty());
    }

    #[test]
    fn nearest_seed_by_inspection() {
        // detectors at (0,0) and (100,0); edge e3 has midpoint (10,0)
        let net: RoadNetwork = "node a -10 0\nnode b 10 0\nnode c 90 0\nnode d 110 0\nnode m 0 0\nnode n 20 0\n\
             edge e1 a b 20 10 1\nedge e2 c d 20 10 1\nedge e3 m n 20 10 1\nedge e4 b c 80 10 1\nedge e5 m a 10 10 1\n\
             detector d1 e1 10\ndetector d2 e2 10\n"
            .parse()
            .unwrap();
        let part = voronoi_partition(&net).unwrap();
        let e3 = net.edge_id("e3").unwrap();
        assert_eq!(part.edge_zone[e3], 0);
        // e4 midpoint (50,0) is equidistant: tie goes to d1
        assert_eq!(part.edge_zone[net.edge_id("e4").unwrap()], 0);
    }

    #[test]
    fn partition_errors() {
        let net: RoadNetwork = two_node().parse().unwrap();
        assert!(matches!(voronoi_partition(&net), Err(ScenarioError::NoDetectors)));
        let net: RoadNetwork = "node a 0 0\nnode b 100 0\nedge e1 a b 100 10 1\nedge e2 b a 100 10 1\n\
             detector d1 e1 50\ndetector d2 e2 50\n"
            .parse()
            .unwrap();
        assert!(matches!(voronoi_partition(&net), Err(ScenarioError::DuplicateSeed(..))));
        let net: RoadNetwork = "node a 0 0\nnode b 100 0\nedge e1 a b 100 10 1\n\
             detector d1 e1 20\ndetector d2 e1 60\n"
            .parse()
            .unwrap();
        assert!(matches!(voronoi_partition(&net), Err(ScenarioError::SharedDetectorEdge(..))));
    }

    #[test]
    fn two_zones_one_pair() {
        let net: RoadNetwork = "node a 0 0\nnode b 100 0\nnode c 200 0\nnode d 300 0\n\
             edge e1 a b 100 10 1\nedge e2 b c 100 10 1\nedge e3 c d 100 10 1\n\
             detector d1 e1 50\ndetector d2 e3 50\n"
            .parse()
            .unwrap();
        let part = voronoi_partition(&net).unwrap();
        let adj = zone_adjacency(&part, &net);
        assert_eq!(adj.pairs.len(), 1);
        assert!(adj.contains(1, 0));
        assert_eq!(adj.neighbors(0), vec![1]);
    }

    #[test]
    fn profiles_parse_and_validate() {
        let mut header = String::from("detector_id");
        for h in 0..24 {
            header.push_str(&format!(",h{h}"));
        }
        let row: Vec<String> = (0..24).map(|h| (h * 10).to_string()).collect();
        let text = format!("{header}\nd1,{}\n", row.join(","));
        let p = parse_profiles(&text).unwrap();
        assert_eq!(p[0].targets[23], 230.0);
        assert_eq!(p[0].max(), 230.0);
        assert_eq!(p[0].min(), 0.0);

        let short = format!("{header}\nd1,1,2,3\n");
        assert!(parse_profiles(&short).is_err());
        let neg = format!("{header}\nd1,-1{}\n", ",0".repeat(23));
        assert!(parse_profiles(&neg).is_err());
        assert!(DetectorProfile::new("x", &[1.0; 23]).is_err());
    }

    #[test]
    fn profiles_csv_round_trip() {
        let p = DetectorProfile::new("d9", &[12.5; 24]).unwrap().with_label(IntensityClass::High);
        let back = parse_profiles(&profiles_to_csv(&[p.clone()])).unwrap();
        assert_eq!(back, vec![p]);
    }
}
