//! Serverless federation: every node trains its own agent, exchanges
//! parameters with its neighbors at a per-round barrier and replaces its
//! weights by the plain average of its own and its neighbors' snapshots.
//! Optimizer moments stay local.

pub mod topology;
pub mod ward;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::calibrate::{self, CalibError, CalibrationEnv, MeanPolicy, Policy, TgaConfig, Trainer, ZoneEnv, OBS_DIM};
use crate::metrics;
use crate::ppo::{Architecture, PpoError, PpoHyperparams, PpoModel};
use crate::scenario::{voronoi_partition, DetectorProfile, RoadNetwork, ScenarioError, ZonePartition};
use crate::seeds;

pub use topology::{build_topology, standardize, Strategy, Topology, PATTERN_CUT, VOLUME_CUT};
pub use ward::{ward_cluster, ward_linkage, Merge};

pub const EVAL_TARGETS: usize = 100;

#[derive(Debug, Error)]
pub enum DflError {
    #[error("{0}")]
    EmptyInput(&'static str),
    #[error("expected length {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("unknown topology strategy {0:?}")]
    UnknownStrategy(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("snapshot of {node} is from round {got}, barrier is at round {expected}")]
    TornSnapshot { node: String, expected: usize, got: usize },
    #[error("node {node}: {source}")]
    Node {
        node: String,
        #[source]
        source: CalibError,
    },
    #[error(transparent)]
    Calib(#[from] CalibError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Ppo(#[from] PpoError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DflError + '_ {
    move |source| DflError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederationConfig {
    pub rounds: usize,
    pub episodes: usize,
    pub strategy: Strategy,
    /// Dendrogram cut; `None` uses the strategy default.
    pub cut: Option<f64>,
    /// Master seed; node seeds derive from it and the node id.
    pub seed: u64,
    pub eval_targets: usize,
    pub max_iterations: usize,
    pub hidden: Vec<usize>,
    pub hyper: PpoHyperparams,
    /// Worker threads; 0 lets the pool decide.
    pub workers: usize,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            rounds: 5,
            episodes: 100,
            strategy: Strategy::Geographic,
            cut: None,
            seed: 0,
            eval_targets: EVAL_TARGETS,
            max_iterations: calibrate::DEFAULT_MAX_ITERATIONS,
            hidden: vec![64, 64],
            hyper: PpoHyperparams::default(),
            workers: 0,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<(), DflError> {
        if self.rounds == 0 || self.episodes == 0 {
            return Err(DflError::Config("rounds and episodes must be at least 1".into()));
        }
        if self.eval_targets == 0 || self.max_iterations == 0 {
            return Err(DflError::Config("eval_targets and max_iterations must be at least 1".into()));
        }
        if let Some(c) = self.cut {
            if !(c > 0.0 && c.is_finite()) {
                return Err(DflError::Config(format!("cut must be positive, got {c}")));
            }
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(DflError::Config("hidden layer sizes must be positive".into()));
        }
        self.hyper.validate()?;
        Ok(())
    }

    pub fn cut(&self) -> f64 {
        self.cut.unwrap_or_else(|| self.strategy.default_cut())
    }

    pub fn node_seed(&self, node: &str) -> u64 {
        seeds::derive_str(self.seed, node)
    }
}

/// Coordinate-wise mean of equally long parameter vectors. Each result is
/// clamped to the range of its inputs, which only ever undoes rounding, so
/// identical inputs come back bit for bit.
pub fn fedavg<V: AsRef<[f64]>>(models: &[V]) -> Result<Vec<f64>, DflError> {
    let first = models.first().ok_or(DflError::EmptyInput("fedavg needs at least one model"))?.as_ref();
    let mut sum = first.to_vec();
    let mut lo = first.to_vec();
    let mut hi = first.to_vec();
    for m in &models[1..] {
        let m = m.as_ref();
        if m.len() != sum.len() {
            return Err(DflError::LengthMismatch {
                expected: sum.len(),
                got: m.len(),
            });
        }
        for i in 0..m.len() {
            sum[i] += m[i];
            lo[i] = lo[i].min(m[i]);
            hi[i] = hi[i].max(m[i]);
        }
    }
    let n = models.len() as f64;
    for i in 0..sum.len() {
        sum[i] = (sum[i] / n).clamp(lo[i], hi[i]);
    }
    Ok(sum)
}

/// `n` evenly spaced values from `lo` to `hi`, both included.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| if i == n - 1 { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 })
            .collect(),
    }
}

/// ARE of one-hour generation over `n` targets spread evenly across the
/// profile range. Each target starts from an empty network with demand seeded
/// by `grid_seed` and its index.
pub fn evaluate_node(
    policy: &mut dyn Policy,
    env: &mut dyn CalibrationEnv,
    profile: &DetectorProfile,
    cfg: &TgaConfig,
    n: usize,
    grid_seed: u64,
) -> Result<f64, DflError> {
    let mut pairs = Vec::with_capacity(n);
    for (i, t) in linspace(profile.min(), profile.max(), n).into_iter().enumerate() {
        env.reset_day();
        env.begin_hour(0, seeds::derive(grid_seed, i as u64))?;
        let r = calibrate::search_1h(policy, env, 0, t, cfg)?;
        pairs.push((t, r.observed as f64));
    }
    metrics::are(&pairs).map_err(|_| DflError::EmptyInput("evaluation grid is empty"))
}

/// Hex SHA-256 of the little-endian parameter bytes.
pub fn params_hash(params: &[f64]) -> String {
    let mut h = Sha256::new();
    for p in params {
        h.update(p.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// One participant: a detector zone with its environment and learner.
#[derive(Clone)]
pub struct FedNode {
    pub id: String,
    pub profile: DetectorProfile,
    pub trainer: Trainer,
    pub env: ZoneEnv,
    pub tga: TgaConfig,
    eval_seed: u64,
    /// Fault injection: local training fails in this round.
    pub fail_in_round: Option<usize>,
}

impl FedNode {
    pub fn new(
        net: Arc<RoadNetwork>,
        partition: &ZonePartition,
        profile: DetectorProfile,
        cfg: &FederationConfig,
    ) -> Result<Self, DflError> {
        let id = profile.detector.clone();
        let zone = partition
            .zone_of(&id)
            .ok_or_else(|| DflError::Config(format!("no zone for detector {id}")))?
            .to_vec();
        let det = net
            .detector_index(&id)
            .ok_or_else(|| DflError::Config(format!("unknown detector {id}")))?;
        let seed = cfg.node_seed(&id);
        let arch = Architecture::new(OBS_DIM, &cfg.hidden);
        // one initialization for the whole federation, so averaging starts
        // from aligned networks
        let model = PpoModel::new(arch, cfg.hyper, seeds::derive_str(cfg.seed, "init"))?;
        let mut tga = TgaConfig::new(calibrate::s_max_for(profile.max()));
        tga.max_iterations = cfg.max_iterations;
        Ok(Self {
            env: ZoneEnv::new(net, zone, det).map_err(|source| DflError::Node {
                node: id.clone(),
                source,
            })?,
            trainer: Trainer::new(model, seeds::derive_str(seed, "train")),
            tga,
            eval_seed: seeds::derive_str(seed, "eval"),
            fail_in_round: None,
            profile,
            id,
        })
    }

    pub fn params(&self) -> &[f64] {
        self.trainer.model.params()
    }

    pub fn train(&mut self, episodes: usize) -> Result<Vec<calibrate::EpisodeLog>, CalibError> {
        let range = (self.profile.min(), self.profile.max());
        self.trainer.train_local(&mut self.env, range, episodes, &self.tga)
    }

    /// ARE of the deterministic policy on the node's evaluation grid.
    pub fn evaluate(&mut self, n: usize) -> Result<f64, DflError> {
        let mut policy = MeanPolicy(&self.trainer.model);
        evaluate_node(&mut policy, &mut self.env, &self.profile, &self.tga, n, self.eval_seed)
    }
}

/// Parameters a node publishes at the barrier.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub node: String,
    pub round: usize,
    pub params: Arc<[f64]>,
}

/// Everything published for one round, plus the nodes that failed to arrive.
#[derive(Debug, Clone, PartialEq)]
pub struct Barrier {
    pub round: usize,
    pub snapshots: BTreeMap<String, Snapshot>,
    pub crashed: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeRecord {
    pub node: String,
    pub hash: String,
    pub are: f64,
    pub crashed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederationRound {
    /// 1-based.
    pub round: usize,
    pub nodes: Vec<NodeRecord>,
}

impl FederationRound {
    pub fn mean_are(&self) -> f64 {
        self.nodes.iter().map(|n| n.are).sum::<f64>() / self.nodes.len() as f64
    }

    pub fn are_of(&self, node: &str) -> Option<f64> {
        self.nodes.iter().find(|n| n.node == node).map(|n| n.are)
    }
}

/// Local training of every node. A node whose training fails is rolled back
/// to its state before the round and listed as crashed.
pub fn train_phase(nodes: &mut [FedNode], round: usize, episodes: usize) -> Barrier {
    let results: Vec<Option<Snapshot>> = nodes
        .par_iter_mut()
        .map(|node| {
            let backup = node.trainer.clone();
            let outcome = if node.fail_in_round == Some(round) {
                Err(CalibError::Config("injected failure".into()))
            } else {
                node.train(episodes).map(|_| ())
            };
            match outcome {
                Ok(()) => Some(Snapshot {
                    node: node.id.clone(),
                    round,
                    params: Arc::from(node.params()),
                }),
                Err(e) => {
                    log::warn!("round {round}: node {} crashed during local training: {e}", node.id);
                    node.trainer = backup;
                    None
                }
            }
        })
        .collect();
    let mut barrier = Barrier {
        round,
        snapshots: BTreeMap::new(),
        crashed: Vec::new(),
    };
    for (node, snap) in nodes.iter().zip(results) {
        match snap {
            Some(s) => {
                barrier.snapshots.insert(node.id.clone(), s);
            }
            None => barrier.crashed.push(node.id.clone()),
        }
    }
    barrier
}

/// Replaces each surviving node's weights by the mean of its own and its
/// surviving neighbors' snapshots. Crashed nodes keep their weights.
pub fn aggregate_phase(nodes: &mut [FedNode], topology: &Topology, barrier: &Barrier) -> Result<(), DflError> {
    let mut updates = Vec::with_capacity(nodes.len());
    for node in nodes.iter() {
        let Some(own) = barrier.snapshots.get(&node.id) else {
            updates.push(None);
            continue;
        };
        let neighbors = topology
            .neighbors(&node.id)
            .ok_or_else(|| DflError::Config(format!("node {} missing from topology", node.id)))?;
        let mut inputs: Vec<&Snapshot> = vec![own];
        for n in neighbors {
            match barrier.snapshots.get(n) {
                Some(s) => inputs.push(s),
                None => log::info!("round {}: {} aggregates without crashed neighbor {n}", barrier.round, node.id),
            }
        }
        for s in &inputs {
            if s.round != barrier.round {
                return Err(DflError::TornSnapshot {
                    node: s.node.clone(),
                    expected: barrier.round,
                    got: s.round,
                });
            }
        }
        let params: Vec<&[f64]> = inputs.iter().map(|s| &s.params[..]).collect();
        updates.push(Some(fedavg(&params)?));
    }
    for (node, update) in nodes.iter_mut().zip(updates) {
        if let Some(p) = update {
            node.trainer.model.unflatten(&p)?;
        }
    }
    Ok(())
}

pub fn evaluate_phase(nodes: &mut [FedNode], barrier: &Barrier, eval_targets: usize) -> Result<FederationRound, DflError> {
    let records: Vec<NodeRecord> = nodes
        .par_iter_mut()
        .map(|node| {
            let are = node.evaluate(eval_targets)?;
            Ok(NodeRecord {
                node: node.id.clone(),
                hash: params_hash(node.params()),
                are,
                crashed: barrier.crashed.contains(&node.id),
            })
        })
        .collect::<Result<_, DflError>>()?;
    Ok(FederationRound {
        round: barrier.round,
        nodes: records,
    })
}

/// Local training, exchange at the barrier, aggregation and evaluation.
pub fn run_round(
    nodes: &mut [FedNode],
    topology: &Topology,
    round: usize,
    cfg: &FederationConfig,
) -> Result<FederationRound, DflError> {
    let barrier = train_phase(nodes, round, cfg.episodes);
    aggregate_phase(nodes, topology, &barrier)?;
    evaluate_phase(nodes, &barrier, cfg.eval_targets)
}

/// Network, profiles and the detectors taking part.
#[derive(Debug, Clone)]
pub struct FederationScenario {
    pub net: Arc<RoadNetwork>,
    pub profiles: Vec<DetectorProfile>,
    /// Participating detector ids; `None` means all profiled detectors.
    pub participants: Option<Vec<String>>,
}

impl FederationScenario {
    pub fn new(net: RoadNetwork, profiles: Vec<DetectorProfile>) -> Self {
        Self {
            net: Arc::new(net),
            profiles,
            participants: None,
        }
    }

    pub fn with_participants<S: AsRef<str>>(mut self, ids: &[S]) -> Self {
        self.participants = Some(ids.iter().map(|s| s.as_ref().to_string()).collect());
        self
    }

    pub fn participant_ids(&self) -> Vec<String> {
        match &self.participants {
            Some(p) => p.clone(),
            None => self.profiles.iter().map(|p| p.detector.clone()).collect(),
        }
    }
}

/// A federation in progress. Cloning forks it, e.g. to continue one trained
/// state under a different topology.
#[derive(Clone)]
pub struct Federation {
    pub config: FederationConfig,
    pub topology: Topology,
    pub nodes: Vec<FedNode>,
    pub history: Vec<FederationRound>,
    pool: Arc<rayon::ThreadPool>,
}

impl Federation {
    pub fn new(config: FederationConfig, scenario: &FederationScenario) -> Result<Self, DflError> {
        config.validate()?;
        let partition = voronoi_partition(&scenario.net)?;
        // topologies are built on the whole scenario, then restricted
        let full = if config.strategy == Strategy::Geographic {
            build_topology(config.strategy, &scenario.net, &partition, &[], config.cut())?
        } else {
            build_topology(config.strategy, &scenario.net, &partition, &scenario.profiles, config.cut())?
        };
        let ids = scenario.participant_ids();
        let topology = full.restrict(&ids)?;
        let mut nodes = Vec::with_capacity(ids.len());
        for id in &ids {
            let profile = scenario
                .profiles
                .iter()
                .find(|p| &p.detector == id)
                .cloned()
                .ok_or_else(|| DflError::Config(format!("no profile for detector {id}")))?;
            nodes.push(FedNode::new(scenario.net.clone(), &partition, profile, &config)?);
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| DflError::Config(format!("worker pool: {e}")))?;
        Ok(Self {
            config,
            topology,
            nodes,
            history: Vec::new(),
            pool: Arc::new(pool),
        })
    }

    pub fn next_round(&self) -> usize {
        self.history.len() + 1
    }

    /// Local training of the next round only.
    pub fn train(&mut self) -> Barrier {
        let round = self.next_round();
        let episodes = self.config.episodes;
        let nodes = &mut self.nodes;
        self.pool.install(|| train_phase(nodes, round, episodes))
    }

    /// Aggregation and evaluation after `train`.
    pub fn finish_round(&mut self, barrier: &Barrier) -> Result<&FederationRound, DflError> {
        if barrier.round != self.next_round() {
            return Err(DflError::Config(format!(
                "barrier of round {} offered at round {}",
                barrier.round,
                self.next_round()
            )));
        }
        let (nodes, topology, targets) = (&mut self.nodes, &self.topology, self.config.eval_targets);
        let record = self.pool.install(|| {
            aggregate_phase(nodes, topology, barrier)?;
            evaluate_phase(nodes, barrier, targets)
        })?;
        log::info!("round {}: mean ARE {:.3}", record.round, record.mean_are());
        self.history.push(record);
        Ok(self.history.last().expect("just pushed"))
    }

    pub fn run_round(&mut self) -> Result<&FederationRound, DflError> {
        let barrier = self.train();
        self.finish_round(&barrier)
    }

    /// Writes each node's model under `dir/round_<r>/<node>.ppo`.
    pub fn save_checkpoints(&self, dir: &Path) -> Result<Vec<PathBuf>, DflError> {
        let round_dir = dir.join(format!("round_{}", self.history.len()));
        std::fs::create_dir_all(&round_dir).map_err(io_err(&round_dir))?;
        let mut paths = Vec::new();
        for node in &self.nodes {
            let path = round_dir.join(format!("{}.ppo", node.id));
            node.trainer.model.save(&path)?;
            paths.push(path);
        }
        Ok(paths)
    }
}

/// `round,node,are`
pub fn history_csv(history: &[FederationRound]) -> String {
    let mut out = String::from("round,node,are\n");
    for r in history {
        for n in &r.nodes {
            let _ = writeln!(out, "{},{},{}", r.round, n.node, n.are);
        }
    }
    out
}

/// Runs every round. With `out` set, writes `topology.csv`, per-round
/// checkpoints under `checkpoints/` and `are_history.csv` there.
pub fn run_federation(
    config: &FederationConfig,
    scenario: &FederationScenario,
    out: Option<&Path>,
) -> Result<Vec<FederationRound>, DflError> {
    let mut fed = Federation::new(config.clone(), scenario)?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join("topology.csv");
        std::fs::write(&path, fed.topology.to_csv()).map_err(io_err(&path))?;
    }
    for _ in 0..config.rounds {
        fed.run_round()?;
        if let Some(dir) = out {
            fed.save_checkpoints(&dir.join("checkpoints"))?;
        }
    }
    if let Some(dir) = out {
        let path = dir.join("are_history.csv");
        std::fs::write(&path, history_csv(&fed.history)).map_err(io_err(&path))?;
    }
    Ok(fed.history)
}
