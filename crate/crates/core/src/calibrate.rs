//! Calibration environment, the one-hour and full-day generation loops, and
//! local PPO training.
//!
//! The agent observes the log-ratio `x = ln((T + 1) / (O + 1))` between the
//! target `T` and the observed count `O` at two scales, each mapped into
//! `[0, 1]`: `0.5 + clamp(x, -0.5, 0.5)` (fine) and
//! `0.5 + clamp(x / 6, -0.5, 0.5)` (coarse). Both are 0.5 on target and
//! independent of the count level, so the same policy serves every zone.
//! `s_max` (twice the node's largest hourly target) scales errors and rewards.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

use crate::mesosim::{self, Route, Router, SimConfig, SimError, SimState, RESIDUAL_HOURS};
use crate::ppo::{self, PpoError, PpoModel, Transition, ACTION_HIGH, ACTION_LOW};
use crate::scenario::{RoadNetwork, HOURS};
use crate::seeds;

pub const OBS_DIM: usize = 2;
pub const DEFAULT_MAX_ITERATIONS: usize = 50;
pub const EPISODE_STEPS: usize = 30;
pub const S_MAX_FACTOR: f64 = 2.0;
/// Hard ceiling on injected vehicles, as a multiple of `s_max`.
pub const INJECTION_CAP_FACTOR: f64 = 10.0;

#[derive(Debug, Error)]
pub enum CalibError {
    #[error("action {0} outside [{ACTION_LOW}, {ACTION_HIGH}]")]
    ActionOutOfRange(f64),
    #[error("invalid target {0}")]
    InvalidTarget(f64),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Ppo(#[from] PpoError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardConfig {
    pub step_penalty: f64,
    pub goal_reward: f64,
    /// Normalized `|T - O|` below which a calibration counts as converged.
    pub threshold: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            step_penalty: 0.01,
            goal_reward: 10.0,
            threshold: 0.001,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), CalibError> {
        if !(self.step_penalty >= 0.0 && self.goal_reward > 0.0 && self.threshold > 0.0) {
            return Err(CalibError::Config(format!("bad reward config {self:?}")));
        }
        Ok(())
    }
}

pub fn normalized_error(target: f64, observed: f64, s_max: f64) -> f64 {
    (target - observed).abs() / s_max
}

pub fn reward(target: f64, observed: f64, cfg: &RewardConfig, s_max: f64) -> f64 {
    let e = normalized_error(target, observed, s_max);
    if e < cfg.threshold {
        cfg.goal_reward
    } else {
        -e - cfg.step_penalty
    }
}

/// Multiplicative update of the injection estimate. A non-zero action that
/// rounds back to the same positive `s` moves it by one vehicle instead.
pub fn apply_action(s: u64, a: f64) -> Result<u64, CalibError> {
    if !(ACTION_LOW..=ACTION_HIGH).contains(&a) {
        return Err(CalibError::ActionOutOfRange(a));
    }
    let next = (s as f64 * (1.0 + a)).round().max(0.0) as u64;
    if s > 0 && next == s && a != 0.0 {
        return Ok(if a > 0.0 { s + 1 } else { s - 1 });
    }
    Ok(next)
}

pub fn s_max_for(profile_max: f64) -> f64 {
    (S_MAX_FACTOR * profile_max).max(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibState {
    pub s: u64,
    pub hour: u32,
    pub target: f64,
    pub observed: f64,
    pub s_max: f64,
}

impl CalibState {
    pub fn observation(&self) -> [f64; OBS_DIM] {
        let x = ((self.target + 1.0) / (self.observed + 1.0)).ln();
        [
            0.5 + x.clamp(-0.5, 0.5),
            0.5 + (x / 6.0).clamp(-0.5, 0.5),
        ]
    }

    pub fn error(&self) -> f64 {
        normalized_error(self.target, self.observed, self.s_max)
    }
}

/// Maps an observation to an action in the admissible range.
pub trait Policy {
    fn act(&mut self, obs: &[f64]) -> Result<f64, CalibError>;

    /// True when `act` is a pure function of its input.
    fn is_deterministic(&self) -> bool {
        false
    }
}

/// The PPO policy mean, without exploration noise.
pub struct MeanPolicy<'a>(pub &'a PpoModel);

impl Policy for MeanPolicy<'_> {
    fn act(&mut self, obs: &[f64]) -> Result<f64, CalibError> {
        Ok(self.0.policy_forward(obs)?.mean)
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Commit {
    pub routes: Vec<Route>,
    pub observed: u32,
    pub residual: [u32; RESIDUAL_HOURS],
}

/// A single-detector simulation the calibration loop can query.
pub trait CalibrationEnv {
    /// Drops all carried-over traffic; the next hour starts on an empty network.
    fn reset_day(&mut self);
    /// Prepares `hour` on top of everything committed so far. `stream` seeds
    /// the demand drawn for this hour.
    fn begin_hour(&mut self, hour: u32, stream: u64) -> Result<(), CalibError>;
    /// Detector count during the current hour when `s` vehicles are injected.
    fn evaluate(&mut self, s: u64) -> Result<u32, CalibError>;
    /// Fixes `s` for the current hour and carries its traffic forward.
    fn commit(&mut self, s: u64) -> Result<Commit, CalibError>;
}

/// Uniform OD demand inside one zone. Trips are drawn lazily from a stream
/// seeded per hour, so the first `s` trips do not depend on how many more are
/// requested later and `s -> O` is a deterministic function within an hour.
/// Vehicles whose OD pair stays unreachable after redraws are dropped and
/// counted.
#[derive(Clone)]
pub struct ZoneEnv {
    net: Arc<RoadNetwork>,
    zone: Vec<usize>,
    detector: usize,
    router: Router,
    sim: SimConfig,
    hour: u32,
    carryover: SimState,
    stream: rand_chacha::ChaCha8Rng,
    routes: Vec<Route>,
    /// `kept[i]`: routes produced by the first `i + 1` draws.
    kept: Vec<usize>,
    dropped: u64,
    memo: HashMap<u64, u32>,
    evaluations: u64,
}

impl ZoneEnv {
    pub fn new(net: Arc<RoadNetwork>, zone: Vec<usize>, detector: usize) -> Result<Self, CalibError> {
        if zone.len() < 2 {
            return Err(SimError::ZoneTooSmall(zone.len()).into());
        }
        if detector >= net.detectors().len() {
            return Err(CalibError::Config(format!("no detector with index {detector}")));
        }
        Ok(Self {
            net,
            zone,
            detector,
            router: Router::default(),
            sim: SimConfig::default(),
            hour: 0,
            carryover: SimState::empty(0),
            stream: seeds::rng(0),
            routes: Vec::new(),
            kept: Vec::new(),
            dropped: 0,
            memo: HashMap::new(),
            evaluations: 0,
        })
    }

    pub fn with_sim_config(mut self, sim: SimConfig) -> Self {
        self.sim = sim;
        self
    }

    pub fn network(&self) -> &RoadNetwork {
        &self.net
    }

    pub fn detector(&self) -> usize {
        self.detector
    }

    /// Number of simulator runs performed so far (memo hits excluded).
    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }

    /// Vehicles dropped so far because no route existed.
    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    /// Extends the demand to `s` draws; returns how many routes they produced.
    fn demand(&mut self, s: u64) -> usize {
        let s = s as usize;
        while self.kept.len() < s {
            let id = format!("h{}_{}", self.hour, self.kept.len());
            match mesosim::draw_routed(&self.net, &mut self.router, &self.zone, self.hour, id, &mut self.stream) {
                Some(route) => self.routes.push(route),
                None => {
                    self.dropped += 1;
                    log::warn!("hour {}: dropped a vehicle with no reachable OD pair", self.hour);
                }
            }
            self.kept.push(self.routes.len());
        }
        if s == 0 {
            0
        } else {
            self.kept[s - 1]
        }
    }
}

impl CalibrationEnv for ZoneEnv {
    fn reset_day(&mut self) {
        self.carryover = SimState::empty(0);
        self.hour = 0;
        self.routes.clear();
        self.kept.clear();
        self.memo.clear();
    }

    fn begin_hour(&mut self, hour: u32, stream: u64) -> Result<(), CalibError> {
        if hour as usize >= HOURS {
            return Err(CalibError::Config(format!("hour {hour} outside the day")));
        }
        if self.carryover.hour() != hour {
            if self.carryover.vehicles.is_empty() {
                self.carryover = SimState::empty(hour);
            } else {
                return Err(CalibError::Config(format!(
                    "carryover belongs to hour {}, not {hour}",
                    self.carryover.hour()
                )));
            }
        }
        self.hour = hour;
        self.stream = seeds::rng(stream);
        self.routes.clear();
        self.kept.clear();
        self.memo.clear();
        Ok(())
    }

    fn evaluate(&mut self, s: u64) -> Result<u32, CalibError> {
        if let Some(&o) = self.memo.get(&s) {
            return Ok(o);
        }
        let cfg = SimConfig {
            horizon_hours: 1,
            ..self.sim
        };
        let n = self.demand(s);
        let out = mesosim::run_hour(&self.net, &self.routes[..n], &self.carryover, cfg);
        self.evaluations += 1;
        let o = out.counts[self.detector];
        self.memo.insert(s, o);
        Ok(o)
    }

    fn commit(&mut self, s: u64) -> Result<Commit, CalibError> {
        let n = self.demand(s);
        let routes = self.routes[..n].to_vec();
        let out = mesosim::run_hour(&self.net, &routes, &self.carryover, self.sim);
        self.evaluations += 1;
        let residual = out.residual[self.detector];
        let observed = out.counts[self.detector];
        self.carryover = out.carryover;
        self.memo.clear();
        Ok(Commit {
            routes,
            observed,
            residual,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TgaConfig {
    pub max_iterations: usize,
    pub reward: RewardConfig,
    pub s_max: f64,
}

impl TgaConfig {
    pub fn new(s_max: f64) -> Self {
        Self {
            max_iterations: DEFAULT_MAX_ITERATIONS,
            reward: RewardConfig::default(),
            s_max,
        }
    }

    fn injection_cap(&self) -> u64 {
        (self.s_max * INJECTION_CAP_FACTOR).ceil() as u64
    }
}

/// Outcome of searching for the injection count of one hour.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchResult {
    pub s: u64,
    pub observed: u32,
    pub iterations: usize,
    pub converged: bool,
    /// Normalized `|T - O|` of the returned estimate.
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub hour: u32,
    pub target: f64,
    pub search: SearchResult,
    pub routes: Vec<Route>,
    pub residual: [u32; RESIDUAL_HOURS],
}

/// Queries the policy until the detector count is within the threshold or
/// the iteration cap is hit; returns the best estimate seen. Each simulator
/// evaluation is one iteration, the initial estimate `s = round(T)` included.
pub fn search_1h(
    policy: &mut dyn Policy,
    env: &mut dyn CalibrationEnv,
    hour: u32,
    target: f64,
    cfg: &TgaConfig,
) -> Result<SearchResult, CalibError> {
    if !(target.is_finite() && target >= 0.0) {
        return Err(CalibError::InvalidTarget(target));
    }
    if cfg.max_iterations == 0 {
        return Err(CalibError::Config("max_iterations must be positive".into()));
    }
    let cap = cfg.injection_cap();
    let mut state = CalibState {
        s: (target.round() as u64).min(cap),
        hour,
        target,
        observed: 0.0,
        s_max: cfg.s_max,
    };
    let mut visited = std::collections::HashSet::new();
    let mut best: Option<SearchResult> = None;
    let mut iterations = 0;
    loop {
        let o = env.evaluate(state.s)?;
        iterations += 1;
        state.observed = o as f64;
        let e = state.error();
        let converged = e < cfg.reward.threshold;
        if best.is_none_or(|b| e < b.error) {
            best = Some(SearchResult {
                s: state.s,
                observed: o,
                iterations,
                converged,
                error: e,
            });
        }
        if converged || iterations >= cfg.max_iterations {
            break;
        }
        if policy.is_deterministic() && !visited.insert(state.s) {
            // a deterministic policy on a memoized environment now cycles
            // through states already seen; the best estimate cannot improve
            iterations = cfg.max_iterations;
            break;
        }
        let a = policy.act(&state.observation())?;
        state.s = apply_action(state.s, a)?.min(cap);
    }
    let mut best = best.expect("at least one evaluation");
    best.iterations = iterations;
    Ok(best)
}

/// One-hour generation: search, then commit the best estimate.
pub fn tga_1h(
    policy: &mut dyn Policy,
    env: &mut dyn CalibrationEnv,
    hour: u32,
    target: f64,
    cfg: &TgaConfig,
) -> Result<CalibrationResult, CalibError> {
    let search = search_1h(policy, env, hour, target, cfg)?;
    let commit = env.commit(search.s)?;
    Ok(CalibrationResult {
        hour,
        target,
        search,
        routes: commit.routes,
        residual: commit.residual,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HourRecord {
    pub hour: u32,
    pub target: f64,
    /// Residual from earlier hours expected to cross during this hour.
    pub carried: f64,
    pub adjusted: f64,
    /// Detector count during calibration, injected vehicles only.
    pub calibrated: u32,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DayResult {
    pub hours: Vec<HourRecord>,
    /// All routes of the day sorted by departure.
    pub routes: Vec<Route>,
}

/// Residual-adjusted targets for the remaining hours: residuals from every
/// earlier hour accumulate and are subtracted, flooring at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualLedger {
    pending: [f64; HOURS + RESIDUAL_HOURS],
}

impl Default for ResidualLedger {
    fn default() -> Self {
        Self {
            pending: [0.0; HOURS + RESIDUAL_HOURS],
        }
    }
}

impl ResidualLedger {
    pub fn carried(&self, hour: usize) -> f64 {
        self.pending[hour]
    }

    pub fn adjusted(&self, hour: usize, target: f64) -> f64 {
        (target - self.pending[hour]).max(0.0)
    }

    pub fn add(&mut self, hour: usize, residual: &[u32; RESIDUAL_HOURS]) {
        for (j, r) in residual.iter().enumerate() {
            self.pending[hour + 1 + j] += *r as f64;
        }
    }
}

/// Full-day generation. `stream_seed` seeds the demand of every hour.
pub fn tga_24h(
    policy: &mut dyn Policy,
    env: &mut dyn CalibrationEnv,
    targets: &[f64; HOURS],
    cfg: &TgaConfig,
    stream_seed: u64,
) -> Result<DayResult, CalibError> {
    env.reset_day();
    let mut ledger = ResidualLedger::default();
    let mut hours = Vec::with_capacity(HOURS);
    let mut routes = Vec::new();
    for h in 0..HOURS {
        let adjusted = ledger.adjusted(h, targets[h]);
        env.begin_hour(h as u32, seeds::derive(stream_seed, h as u64))?;
        let result = tga_1h(policy, env, h as u32, adjusted, cfg)?;
        ledger.add(h, &result.residual);
        log::debug!(
            "hour {h}: target {:.1} adjusted {adjusted:.1} s {} observed {} in {} iterations",
            targets[h],
            result.search.s,
            result.search.observed,
            result.search.iterations
        );
        hours.push(HourRecord {
            hour: h as u32,
            target: targets[h],
            carried: ledger.carried(h),
            adjusted,
            calibrated: result.search.observed,
            iterations: result.search.iterations,
            converged: result.search.converged,
        });
        routes.extend(result.routes);
    }
    routes.sort_by_key(|r| r.depart);
    Ok(DayResult { hours, routes })
}

/// `hour,target,adjusted,observed,iterations,converged`; `observed` holds the
/// supplied per-hour counts (normally a replay of the final route file).
pub fn ledger_csv(day: &DayResult, observed: &[u32; HOURS]) -> String {
    let mut out = String::from("hour,target,adjusted,observed,iterations,converged\n");
    for r in &day.hours {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.hour, r.target, r.adjusted, observed[r.hour as usize], r.iterations, r.converged
        );
    }
    out
}

pub fn write_ledger(day: &DayResult, observed: &[u32; HOURS], path: impl AsRef<Path>) -> Result<(), CalibError> {
    let path = path.as_ref();
    std::fs::write(path, ledger_csv(day, observed)).map_err(|source| CalibError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub episode: u64,
    pub target: f64,
    pub steps: usize,
    pub total_reward: f64,
    pub converged: bool,
    pub final_error: f64,
}

/// PPO learner for one node. The rollout buffer and counters persist across
/// calls to `train_local`, so training in several chunks is identical to one
/// long run when the parameters are not modified in between.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    pub model: PpoModel,
    seed: u64,
    buffer: Vec<Transition>,
    episodes: u64,
    updates: u64,
}

impl Trainer {
    pub fn new(model: PpoModel, seed: u64) -> Self {
        Self {
            model,
            seed,
            buffer: Vec::new(),
            episodes: 0,
            updates: 0,
        }
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn pending_transitions(&self) -> usize {
        self.buffer.len()
    }

    fn push(&mut self, t: Transition, next_obs: &[f64]) -> Result<(), CalibError> {
        self.buffer.push(t);
        if self.buffer.len() == self.model.hyperparams().n_steps {
            let last_value = self.model.value(next_obs)?;
            let mut rng = seeds::rng(seeds::derive(seeds::derive_str(self.seed, "update"), self.updates));
            self.model.update(&self.buffer, last_value, &mut rng)?;
            self.updates += 1;
            self.buffer.clear();
        }
        Ok(())
    }

    /// Trains for `episodes` episodes. Each episode draws a target uniformly
    /// from `[lo, hi]` and runs the calibration loop from an empty network,
    /// one simulator evaluation per step, for at most `EPISODE_STEPS` steps.
    pub fn train_local(
        &mut self,
        env: &mut dyn CalibrationEnv,
        range: (f64, f64),
        episodes: usize,
        cfg: &TgaConfig,
    ) -> Result<Vec<EpisodeLog>, CalibError> {
        let (lo, hi) = range;
        if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
            return Err(CalibError::Config(format!("bad target range [{lo}, {hi}]")));
        }
        let cap = cfg.injection_cap();
        let mut logs = Vec::with_capacity(episodes);
        for _ in 0..episodes {
            let episode = self.episodes;
            let mut rng = seeds::rng(seeds::derive(self.seed, episode));
            let target = if hi > lo { rng.random_range(lo..=hi) } else { lo };
            env.reset_day();
            env.begin_hour(0, rng.random())?;
            let mut state = CalibState {
                s: (target.round() as u64).min(cap),
                hour: 0,
                target,
                observed: 0.0,
                s_max: cfg.s_max,
            };
            state.observed = env.evaluate(state.s)? as f64;
            let mut total = 0.0;
            let mut steps = 0;
            let mut converged = false;
            while steps < EPISODE_STEPS {
                let obs = state.observation();
                let out = self.model.policy_forward(&obs)?;
                let sample = ppo::sample_action(out.mean, out.std, &mut rng);
                state.s = apply_action(state.s, sample.action)?.min(cap);
                state.observed = env.evaluate(state.s)? as f64;
                steps += 1;
                let r = reward(target, state.observed, &cfg.reward, cfg.s_max);
                converged = state.error() < cfg.reward.threshold;
                total += r;
                let next_obs = state.observation();
                self.push(
                    Transition {
                        obs: obs.to_vec(),
                        action: sample.action,
                        raw_action: sample.raw,
                        log_prob: sample.log_prob,
                        reward: r,
                        value: out.value,
                        // the step cap ends the episode like convergence does
                        done: converged || steps == EPISODE_STEPS,
                    },
                    &next_obs,
                )?;
                if converged {
                    break;
                }
            }
            logs.push(EpisodeLog {
                episode,
                target,
                steps,
                total_reward: total,
                converged,
                final_error: state.error(),
            });
            self.episodes += 1;
        }
        Ok(logs)
    }
}

/// Mean of a trailing window, used to read trends from reward logs.
pub fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    (0..xs.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(w);
            xs[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}
