use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use fedtraffic::baseline::{sample_routes, CandidatePool};
use fedtraffic::calibrate::{self, tga_24h, MeanPolicy, TgaConfig, ZoneEnv, OBS_DIM};
use fedtraffic::dfl::{self, DflError, FederationRound, FederationScenario};
use fedtraffic::fixtures;
use fedtraffic::mesosim::{self, SimConfig};
use fedtraffic::metrics::{self, MetricsReport};
use fedtraffic::ppo::PpoModel;
use fedtraffic::scenario::{
    load_profiles, voronoi_partition, zone_adjacency, DetectorProfile, RoadNetwork, ScenarioError, HOURS,
};
use fedtraffic::seeds;

use crate::manifest::{scenario_hash, RunManifest};
use crate::{CliError, RunConfig};

pub const ROUTE_FILE: &str = "final_routes.rou.xml";
pub const LEDGER_FILE: &str = "ledger.csv";
pub const REPORT_FILE: &str = "compare.csv";
pub const HOURLY_FILE: &str = "compare_hourly.csv";
pub const CALIBRATED: &str = "mae_calibrated";
pub const BASELINE: &str = "mae_baseline";

fn scenario_err(e: ScenarioError) -> CliError {
    CliError::validation(e.to_string())
}

fn dfl_err(e: DflError) -> CliError {
    match e {
        DflError::Config(_)
        | DflError::UnknownStrategy(_)
        | DflError::EmptyInput(_)
        | DflError::LengthMismatch { .. }
        | DflError::Scenario(_) => CliError::validation(e.to_string()),
        e => CliError::runtime(e.to_string()),
    }
}

fn runtime<E: std::fmt::Display>(context: &str) -> impl FnOnce(E) -> CliError + '_ {
    move |e| CliError::runtime(format!("{context}: {e}"))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(runtime(&dir.display().to_string()))?;
    }
    std::fs::write(path, text).map_err(runtime(&path.display().to_string()))
}

/// Network and profiles named by a configuration, checked against each other.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub net: RoadNetwork,
    pub profiles: Vec<DetectorProfile>,
    pub participants: Vec<String>,
    pub hash: String,
}

impl LoadedScenario {
    pub fn load(cfg: &RunConfig) -> Result<Self, CliError> {
        cfg.validate()?;
        let (net, profiles) = match cfg.fixture.as_deref() {
            Some("grid") => (fixtures::grid5x5(), fixtures::grid5x5_profiles()),
            Some("heterogeneous") => (fixtures::heterogeneous(), fixtures::heterogeneous_profiles()),
            _ => {
                let (n, p) = (cfg.network.as_ref().unwrap(), cfg.profiles.as_ref().unwrap());
                let net = RoadNetwork::load(n).map_err(|e| CliError::validation(format!("{}: {e}", n.display())))?;
                let profiles = load_profiles(p).map_err(|e| CliError::validation(format!("{}: {e}", p.display())))?;
                (net, profiles)
            }
        };
        for p in &profiles {
            if net.detector_index(&p.detector).is_none() {
                return Err(CliError::validation(format!(
                    "profile for detector {} which the network does not define",
                    p.detector
                )));
            }
        }
        let participants = match &cfg.participants {
            Some(ids) => ids.clone(),
            None => profiles.iter().map(|p| p.detector.clone()).collect(),
        };
        for id in &participants {
            if !profiles.iter().any(|p| &p.detector == id) {
                return Err(CliError::validation(format!("participant {id} has no profile")));
            }
        }
        let hash = scenario_hash(&net, &profiles);
        Ok(Self {
            net,
            profiles,
            participants,
            hash,
        })
    }

    pub fn profile(&self, detector: &str) -> Result<&DetectorProfile, CliError> {
        self.profiles
            .iter()
            .find(|p| p.detector == detector)
            .ok_or_else(|| CliError::validation(format!("no profile for detector {detector}")))
    }

    pub fn manifest(&self, command: &str, config_path: Option<&Path>, cfg: &RunConfig) -> RunManifest {
        RunManifest::new(command, config_path, cfg, &self.participants, &self.hash)
    }
}

/// Loads the scenario and returns a partition summary. Writes the manifest
/// when `write_manifest` is set.
pub fn validate(cfg: &RunConfig, config_path: Option<&Path>, write_manifest: bool) -> Result<String, CliError> {
    let sc = LoadedScenario::load(cfg)?;
    let part = voronoi_partition(&sc.net).map_err(scenario_err)?;
    let adj = zone_adjacency(&part, &sc.net);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "network: {} nodes, {} edges, {} detectors; {} profiles",
        sc.net.nodes().len(),
        sc.net.edges().len(),
        sc.net.detectors().len(),
        sc.profiles.len()
    );
    let _ = writeln!(out, "scenario hash {}", sc.hash);
    let _ = writeln!(out, "{:<10} {:>6} {:>10} {:>10}  neighbors", "zone", "edges", "max", "mean");
    for (z, id) in part.detector_ids.iter().enumerate() {
        let (max, mean) = sc
            .profiles
            .iter()
            .find(|p| &p.detector == id)
            .map(|p| (format!("{:.1}", p.max()), format!("{:.1}", p.mean())))
            .unwrap_or(("-".into(), "-".into()));
        let ns: Vec<&str> = adj.neighbors(z).into_iter().map(|n| part.detector_ids[n].as_str()).collect();
        let _ = writeln!(out, "{id:<10} {:>6} {max:>10} {mean:>10}  {}", part.zones[z].len(), ns.join(" "));
    }
    let _ = writeln!(out, "{} adjacent zone pairs", adj.pairs.len());
    if write_manifest {
        sc.manifest("validate", config_path, cfg).write(&cfg.out)?;
    }
    Ok(out)
}

/// Runs the federation; writes topology, checkpoints, `are_history.csv` and
/// the manifest under `cfg.out`.
pub fn train(cfg: &RunConfig, config_path: Option<&Path>) -> Result<Vec<FederationRound>, CliError> {
    let sc = LoadedScenario::load(cfg)?;
    let fed_cfg = cfg.federation()?;
    sc.manifest("train", config_path, cfg).write(&cfg.out)?;
    let scenario = FederationScenario::new(sc.net, sc.profiles).with_participants(&sc.participants);
    dfl::run_federation(&fed_cfg, &scenario, Some(&cfg.out)).map_err(dfl_err)
}

/// Outcome of `generate`.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub route_file: PathBuf,
    pub ledger: PathBuf,
    pub vehicles: usize,
    /// MAE of the replayed route file against the profile.
    pub mae: f64,
}

fn load_policy(path: &Path) -> Result<PpoModel, CliError> {
    let model = PpoModel::load(path).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
    let dim = model.architecture().obs_dim;
    if dim != OBS_DIM {
        return Err(CliError::validation(format!(
            "{}: checkpoint expects observations of width {dim}, calibration produces {OBS_DIM}",
            path.display()
        )));
    }
    Ok(model)
}

fn zone_env(net: &Arc<RoadNetwork>, detector: &str) -> Result<(ZoneEnv, usize, Vec<usize>), CliError> {
    let part = voronoi_partition(net).map_err(scenario_err)?;
    let zone = part
        .zone_of(detector)
        .ok_or_else(|| CliError::validation(format!("unknown detector {detector}")))?
        .to_vec();
    let det = net.detector_index(detector).expect("partition and network agree");
    let env = ZoneEnv::new(net.clone(), zone.clone(), det).map_err(|e| CliError::validation(format!("{detector}: {e}")))?;
    Ok((env, det, zone))
}

fn tga_config(profile: &DetectorProfile, cfg: &RunConfig) -> TgaConfig {
    let mut tga = TgaConfig::new(calibrate::s_max_for(profile.max()));
    tga.max_iterations = cfg.max_iterations;
    tga
}

fn replayed_counts(net: &RoadNetwork, routes: &[mesosim::Route], det: usize) -> [u32; HOURS] {
    let hourly = mesosim::replay_day(net, routes, SimConfig::default());
    hourly[det]
}

fn mae_of(profile: &DetectorProfile, counts: &[u32; HOURS]) -> f64 {
    let d: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    metrics::mae(&profile.targets, &d).expect("24 hours")
}

/// Full-day generation for one detector with a trained policy. Writes the
/// route file, the hourly ledger (observed counts from a replay of the route
/// file) and the manifest under `cfg.out`.
pub fn generate(
    cfg: &RunConfig,
    config_path: Option<&Path>,
    checkpoint: &Path,
    detector: &str,
) -> Result<Generated, CliError> {
    let sc = LoadedScenario::load(cfg)?;
    let model = load_policy(checkpoint)?;
    let profile = sc.profile(detector)?.clone();
    let mut manifest = sc.manifest("generate", config_path, cfg);
    let stream = seeds::derive_str(cfg.seed, &format!("generate/{detector}"));
    manifest.seeds.insert(format!("generate/{detector}"), stream);
    manifest.write(&cfg.out)?;
    let net = Arc::new(sc.net);
    let (mut env, det, _) = zone_env(&net, detector)?;
    let day = tga_24h(&mut MeanPolicy(&model), &mut env, &profile.targets, &tga_config(&profile, cfg), stream)
        .map_err(runtime(detector))?;
    let route_file = cfg.out.join(ROUTE_FILE);
    let ledger = cfg.out.join(LEDGER_FILE);
    write_file(&route_file, &mesosim::route_file_string(&net, &day.routes).map_err(runtime(detector))?)?;
    let counts = replayed_counts(&net, &day.routes, det);
    write_file(&ledger, &calibrate::ledger_csv(&day, &counts))?;
    Ok(Generated {
        route_file,
        ledger,
        vehicles: day.routes.len(),
        mae: mae_of(&profile, &counts),
    })
}

struct DetectorRuns {
    detector: String,
    calibrated: Vec<(f64, Vec<f64>)>,
    baseline: Vec<(f64, Vec<f64>)>,
}

fn hourly_re(profile: &DetectorProfile, counts: &[u32; HOURS]) -> Vec<f64> {
    let d: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    metrics::hourly_errors(&profile.targets, &d).expect("24 hours")
}

fn compare_detector(net: &Arc<RoadNetwork>, sc: &LoadedScenario, cfg: &RunConfig, detector: &str) -> Result<DetectorRuns, CliError> {
    let profile = sc.profile(detector)?;
    let model = load_policy(&cfg.checkpoint_dir().join(format!("{detector}.ppo")))?;
    let (mut env, det, zone) = zone_env(net, detector)?;
    let tga = tga_config(profile, cfg);
    let base = seeds::derive_str(cfg.seed, &format!("compare/{detector}"));
    let mut runs = DetectorRuns {
        detector: detector.to_string(),
        calibrated: Vec::new(),
        baseline: Vec::new(),
    };
    for run in 0..cfg.executions {
        let seed = seeds::derive(base, run as u64);
        let day = tga_24h(&mut MeanPolicy(&model), &mut env, &profile.targets, &tga, seeds::derive_str(seed, "calibrated"))
            .map_err(runtime(detector))?;
        let counts = replayed_counts(net, &day.routes, det);
        runs.calibrated.push((mae_of(profile, &counts), hourly_re(profile, &counts)));

        let pool = CandidatePool::generate(net, &zone, cfg.pool_size, seeds::derive_str(seed, "pool"))
            .map_err(runtime(detector))?;
        let sel = sample_routes(&pool, det, &profile.targets, &mut seeds::rng(seeds::derive_str(seed, "sample")))
            .map_err(runtime(detector))?;
        let counts = replayed_counts(net, &sel.routes, det);
        runs.baseline.push((mae_of(profile, &counts), hourly_re(profile, &counts)));
        log::info!(
            "{detector} run {run}: calibrated {:.2}, baseline {:.2}",
            runs.calibrated[run].0,
            runs.baseline[run].0
        );
    }
    Ok(runs)
}

/// Paired executions of calibrated generation and the baseline sampler for
/// every participant. Writes `compare.csv` (`detector,metric,mu,sigma`),
/// `compare_hourly.csv` and the manifest under `cfg.out`.
pub fn compare(cfg: &RunConfig, config_path: Option<&Path>) -> Result<MetricsReport, CliError> {
    let sc = LoadedScenario::load(cfg)?;
    sc.manifest("compare", config_path, cfg).write(&cfg.out)?;
    let net = Arc::new(sc.net.clone());
    let workers = match cfg.workers {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        w => w,
    };
    let ids = &sc.participants;
    let mut results: Vec<Option<Result<DetectorRuns, CliError>>> = (0..ids.len()).map(|_| None).collect();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers.min(ids.len()).max(1))
            .map(|w| {
                let (net, sc) = (&net, &sc);
                s.spawn(move || {
                    (w..ids.len())
                        .step_by(workers)
                        .map(|i| (i, compare_detector(net, sc, cfg, &ids[i])))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("compare worker panicked") {
                results[i] = Some(r);
            }
        }
    });
    let mut report = MetricsReport::default();
    for r in results {
        let runs = r.expect("every detector assigned")?;
        for (metric, vals) in [(CALIBRATED, &runs.calibrated), (BASELINE, &runs.baseline)] {
            let maes: Vec<f64> = vals.iter().map(|v| v.0).collect();
            report.add(&runs.detector, metric, &maes).expect("executions > 0");
            for (k, (_, series)) in vals.iter().enumerate() {
                report.hourly.push((runs.detector.clone(), metric.to_string(), k, series.clone()));
            }
        }
    }
    write_file(&cfg.out.join(REPORT_FILE), &report.to_csv())?;
    write_file(&cfg.out.join(HOURLY_FILE), &report.hourly_csv())?;
    Ok(report)
}
