//! Experiment configuration: a TOML file, then environment variables, then
//! command-line flags, later sources overriding earlier ones.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use fedtraffic::dfl::{FederationConfig, Strategy, EVAL_TARGETS};
use fedtraffic::calibrate::DEFAULT_MAX_ITERATIONS;

use crate::CliError;

/// Bundled scenarios selectable with `fixture = "..."`.
pub const FIXTURES: [&str; 2] = ["grid", "heterogeneous"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Bundled scenario name; alternative to `network` + `profiles`.
    pub fixture: Option<String>,
    pub network: Option<PathBuf>,
    pub profiles: Option<PathBuf>,
    /// Detectors taking part; all profiled detectors when absent.
    pub participants: Option<Vec<String>>,
    pub strategy: String,
    pub cut: Option<f64>,
    pub rounds: usize,
    pub episodes: usize,
    pub seed: u64,
    pub max_iterations: usize,
    pub eval_targets: usize,
    pub workers: usize,
    /// Paired executions per detector in `compare`.
    pub executions: usize,
    /// Candidate routes drawn per zone for the baseline sampler.
    pub pool_size: usize,
    /// Checkpoint directory read by `compare`; defaults to the last round
    /// written by `train` under `out`.
    pub checkpoints: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            fixture: None,
            network: None,
            profiles: None,
            participants: None,
            strategy: Strategy::Geographic.to_string(),
            cut: None,
            rounds: 5,
            episodes: 100,
            seed: 0,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            eval_targets: EVAL_TARGETS,
            workers: 0,
            executions: 10,
            pool_size: 10_000,
            checkpoints: None,
            out: PathBuf::from("out"),
        }
    }
}

/// Values given on the command line or through `FEDTRAFFIC_*` variables.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub fixture: Option<String>,
    pub network: Option<PathBuf>,
    pub profiles: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub strategy: Option<String>,
    pub rounds: Option<usize>,
    pub episodes: Option<usize>,
    pub executions: Option<usize>,
}

impl RunConfig {
    /// Parses `text`; relative paths are taken relative to `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::validation(format!("config: {e}")))?;
        for p in [&mut cfg.network, &mut cfg.profiles, &mut cfg.checkpoints].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if cfg.out.is_relative() {
            cfg.out = base.join(&cfg.out);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::validation(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if o.fixture.is_some() || o.network.is_some() || o.profiles.is_some() {
            self.fixture = o.fixture.clone();
            self.network = o.network.clone();
            self.profiles = o.profiles.clone();
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = &o.out {
            self.out = v.clone();
        }
        if let Some(v) = o.workers {
            self.workers = v;
        }
        if let Some(v) = &o.strategy {
            self.strategy = v.clone();
        }
        if let Some(v) = o.rounds {
            self.rounds = v;
        }
        if let Some(v) = o.episodes {
            self.episodes = v;
        }
        if let Some(v) = o.executions {
            self.executions = v;
        }
    }

    pub fn strategy(&self) -> Result<Strategy, CliError> {
        self.strategy.parse().map_err(|e| CliError::validation(format!("{e}")))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.strategy()?;
        match (&self.fixture, &self.network, &self.profiles) {
            (Some(f), None, None) if FIXTURES.contains(&f.as_str()) => {}
            (Some(f), None, None) => {
                return Err(CliError::validation(format!(
                    "unknown fixture {f:?}, expected one of {FIXTURES:?}"
                )))
            }
            (None, Some(_), Some(_)) => {}
            _ => {
                return Err(CliError::validation(
                    "give either `fixture` or both `network` and `profiles`",
                ))
            }
        }
        if self.executions == 0 || self.pool_size == 0 {
            return Err(CliError::validation("executions and pool_size must be positive"));
        }
        self.federation().map(|_| ())
    }

    pub fn federation(&self) -> Result<FederationConfig, CliError> {
        let cfg = FederationConfig {
            rounds: self.rounds,
            episodes: self.episodes,
            strategy: self.strategy()?,
            cut: self.cut,
            seed: self.seed,
            eval_targets: self.eval_targets,
            max_iterations: self.max_iterations,
            workers: self.workers,
            ..FederationConfig::default()
        };
        cfg.validate().map_err(|e| CliError::validation(e.to_string()))?;
        Ok(cfg)
    }

    /// Directory `compare` reads checkpoints from.
    pub fn checkpoint_dir(&self) -> PathBuf {
        self.checkpoints
            .clone()
            .unwrap_or_else(|| self.out.join("checkpoints").join(format!("round_{}", self.rounds)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_protocol() {
        let c = RunConfig::default();
        assert_eq!((c.rounds, c.episodes, c.eval_targets), (5, 100, 100));
        assert_eq!(c.strategy().unwrap(), Strategy::Geographic);
    }

    #[test]
    fn relative_paths_resolve_against_the_config() {
        let c = RunConfig::from_toml("network = \"a.net\"\nprofiles = \"/abs/p.csv\"\n", Path::new("/cfg")).unwrap();
        assert_eq!(c.network.unwrap(), PathBuf::from("/cfg/a.net"));
        assert_eq!(c.profiles.unwrap(), PathBuf::from("/abs/p.csv"));
        assert_eq!(c.out, PathBuf::from("/cfg/out"));
    }

    #[test]
    fn overrides_win() {
        let mut c = RunConfig::from_toml("fixture = \"grid\"\nseed = 3\nrounds = 2\n", Path::new(".")).unwrap();
        c.apply(&Overrides {
            seed: Some(9),
            strategy: Some("volume".into()),
            ..Default::default()
        });
        assert_eq!((c.seed, c.rounds), (9, 2));
        assert_eq!(c.strategy().unwrap(), Strategy::Volume);
    }

    #[test]
    fn bad_configs_are_rejected() {
        assert!(RunConfig::from_toml("bogus = 1\n", Path::new(".")).is_err());
        let c = RunConfig {
            fixture: Some("grid".into()),
            strategy: "ring".into(),
            ..Default::default()
        };
        assert!(c.validate().is_err());
        assert!(RunConfig::default().validate().is_err());
        let c = RunConfig {
            fixture: Some("grid".into()),
            rounds: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
