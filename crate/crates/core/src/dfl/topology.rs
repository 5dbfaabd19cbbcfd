//! Who exchanges models with whom.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use super::ward::ward_cluster;
use super::DflError;
use crate::scenario::{zone_adjacency, DetectorProfile, RoadNetwork, ZonePartition};

/// Default dendrogram cut for raw profiles, in veh/h.
pub const VOLUME_CUT: f64 = 2000.0;
/// Default cut for standardized profiles.
pub const PATTERN_CUT: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    Geographic,
    Volume,
    Pattern,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Geographic, Strategy::Volume, Strategy::Pattern];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Geographic => "geographic",
            Strategy::Volume => "volume",
            Strategy::Pattern => "pattern",
        }
    }

    /// Cut used when the configuration gives none.
    pub fn default_cut(self) -> f64 {
        match self {
            Strategy::Pattern => PATTERN_CUT,
            _ => VOLUME_CUT,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = DflError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "geographic" => Ok(Strategy::Geographic),
            "volume" => Ok(Strategy::Volume),
            "pattern" => Ok(Strategy::Pattern),
            other => Err(DflError::UnknownStrategy(other.to_string())),
        }
    }
}

/// Undirected neighbor sets keyed by node (detector) id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Topology {
    neighbors: BTreeMap<String, BTreeSet<String>>,
}

impl Topology {
    pub fn isolated<S: AsRef<str>>(nodes: &[S]) -> Self {
        Self {
            neighbors: nodes.iter().map(|n| (n.as_ref().to_string(), BTreeSet::new())).collect(),
        }
    }

    /// Builds from undirected pairs; every pair is inserted both ways.
    pub fn from_pairs<S: AsRef<str>>(nodes: &[S], pairs: &[(S, S)]) -> Result<Self, DflError> {
        let mut t = Self::isolated(nodes);
        for (a, b) in pairs {
            t.link(a.as_ref(), b.as_ref())?;
        }
        Ok(t)
    }

    fn link(&mut self, a: &str, b: &str) -> Result<(), DflError> {
        if a == b {
            return Err(DflError::Config(format!("self loop on {a}")));
        }
        for (x, y) in [(a, b), (b, a)] {
            self.neighbors
                .get_mut(x)
                .ok_or_else(|| DflError::Config(format!("unknown node {x}")))?
                .insert(y.to_string());
        }
        Ok(())
    }

    pub fn nodes(&self) -> impl Iterator<Item = &str> {
        self.neighbors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn neighbors(&self, node: &str) -> Option<&BTreeSet<String>> {
        self.neighbors.get(node)
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.values().map(BTreeSet::len).sum::<usize>() / 2
    }

    pub fn is_symmetric(&self) -> bool {
        self.neighbors.iter().all(|(a, ns)| {
            !ns.contains(a) && ns.iter().all(|b| self.neighbors.get(b).is_some_and(|back| back.contains(a)))
        })
    }

    /// Induced subgraph on `keep`.
    pub fn restrict<S: AsRef<str>>(&self, keep: &[S]) -> Result<Self, DflError> {
        let keep: BTreeSet<&str> = keep.iter().map(AsRef::as_ref).collect();
        let mut out = BTreeMap::new();
        for &k in &keep {
            let ns = self
                .neighbors
                .get(k)
                .ok_or_else(|| DflError::Config(format!("unknown node {k}")))?;
            out.insert(
                k.to_string(),
                ns.iter().filter(|n| keep.contains(n.as_str())).cloned().collect(),
            );
        }
        Ok(Self { neighbors: out })
    }

    /// `node,neighbor` rows, both directions listed.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("node,neighbor\n");
        for (a, ns) in &self.neighbors {
            for b in ns {
                out.push_str(&format!("{a},{b}\n"));
            }
        }
        out
    }
}

/// Rescales to zero mean and unit population variance; flat vectors become
/// all zeros.
pub fn standardize(v: &[f64]) -> Vec<f64> {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd <= f64::EPSILON * mean.abs().max(1.0) {
        return vec![0.0; v.len()];
    }
    v.iter().map(|x| (x - mean) / sd).collect()
}

/// Clusters of profile indices for an affinity strategy.
pub fn affinity_clusters(strategy: Strategy, profiles: &[DetectorProfile], cut: f64) -> Result<Vec<Vec<usize>>, DflError> {
    let vectors: Vec<Vec<f64>> = match strategy {
        Strategy::Volume => profiles.iter().map(|p| p.targets.to_vec()).collect(),
        Strategy::Pattern => profiles.iter().map(|p| standardize(&p.targets)).collect(),
        Strategy::Geographic => return Err(DflError::Config("geographic topology has no clusters".into())),
    };
    ward_cluster(&vectors, cut)
}

/// Topology over every detector of `partition`. Profiles are matched by
/// detector id and must cover every zone for the affinity strategies.
pub fn build_topology(
    strategy: Strategy,
    net: &RoadNetwork,
    partition: &ZonePartition,
    profiles: &[DetectorProfile],
    cut: f64,
) -> Result<Topology, DflError> {
    let ids = &partition.detector_ids;
    let mut topo = Topology::isolated(ids);
    match strategy {
        Strategy::Geographic => {
            for (a, b) in zone_adjacency(partition, net).pairs {
                topo.link(&ids[a], &ids[b])?;
            }
        }
        Strategy::Volume | Strategy::Pattern => {
            let ordered: Vec<DetectorProfile> = ids
                .iter()
                .map(|id| {
                    profiles
                        .iter()
                        .find(|p| &p.detector == id)
                        .cloned()
                        .ok_or_else(|| DflError::Config(format!("no profile for detector {id}")))
                })
                .collect::<Result<_, _>>()?;
            for cluster in affinity_clusters(strategy, &ordered, cut)? {
                if cluster.len() == 1 {
                    log::info!("{strategy} topology: {} forms a singleton cluster", ids[cluster[0]]);
                }
                for (x, &i) in cluster.iter().enumerate() {
                    for &j in &cluster[x + 1..] {
                        topo.link(&ids[i], &ids[j])?;
                    }
                }
            }
        }
    }
    debug_assert!(topo.is_symmetric());
    Ok(topo)
}
