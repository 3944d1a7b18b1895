//! Run settings: command-line flags layered over a flat `key = value` file
//! layered over built-in defaults.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use thiserror::Error;

use cin_core::gridworld::{MapKind, State};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config {path}: line {line}: {msg}")]
    Syntax { path: String, line: usize, msg: String },
    #[error("config {path}: unknown key `{key}`")]
    UnknownKey { path: String, key: String },
    #[error("invalid value {value:?} for `{key}`")]
    Value { key: String, value: String },
    #[error("missing required setting `{0}`")]
    Missing(&'static str),
    #[error("reading config {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Every setting a subcommand may read. Flag names use dashes, config keys
/// use underscores (`kernel-size` / `kernel_size`).
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// Flat `key = value` settings file; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice; falls back to CIN_SEED, then 0.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Map kind: 2d or 3d.
    #[arg(long, global = true)]
    pub kind: Option<String>,
    /// Map side length.
    #[arg(long, global = true)]
    pub m: Option<usize>,
    /// Patch and kernel window size F.
    #[arg(long = "kernel-size", global = true)]
    pub kernel_size: Option<usize>,
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    /// Value-iteration sweeps.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    /// Goal reward.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub rp: Option<f64>,
    /// Living cost.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub rn: Option<f64>,
    /// Traversable height step for terrain.
    #[arg(long, global = true)]
    pub dh: Option<f64>,
    #[arg(long, global = true)]
    pub roughness: Option<f64>,
    /// Dataset directory.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Model file.
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub batch: Option<usize>,
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    /// Training maps.
    #[arg(long, global = true)]
    pub train: Option<usize>,
    /// Validation maps.
    #[arg(long, global = true)]
    pub val: Option<usize>,
    /// Test maps.
    #[arg(long, global = true)]
    pub test: Option<usize>,
    /// Random-walk episodes per map for capability samples.
    #[arg(long, global = true)]
    pub episodes: Option<usize>,
    /// Steps per random-walk episode.
    #[arg(long = "episode-len", global = true)]
    pub episode_len: Option<usize>,
    /// Train the capability net easy to hard.
    #[arg(long, global = true)]
    pub curriculum: Option<bool>,
    /// Dataset split to evaluate: train, val or test.
    #[arg(long, global = true)]
    pub split: Option<String>,
    /// Map file.
    #[arg(long, global = true)]
    pub map: Option<PathBuf>,
    /// Start state as `row,col`.
    #[arg(long, global = true)]
    pub start: Option<String>,
    /// Goal state as `row,col`.
    #[arg(long, global = true)]
    pub goal: Option<String>,
}

const KEYS: &[&str] = &[
    "seed", "jobs", "kind", "m", "kernel_size", "gamma", "k", "rp", "rn", "dh", "roughness", "data",
    "model", "out", "epochs", "batch", "lr", "train", "val", "test", "episodes", "episode_len",
    "curriculum", "split", "map", "start", "goal",
];

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config(text: &str, path: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::Syntax {
                path: path.to_string(),
                line: i + 1,
                msg: "expected key = value".into(),
            });
        };
        let key = key.trim().replace('-', "_");
        if !KEYS.contains(&key.as_str()) {
            return Err(ConfigError::UnknownKey {
                path: path.to_string(),
                key,
            });
        }
        out.insert(key, value.trim().to_string());
    }
    Ok(out)
}

/// Resolved settings with their sources merged.
#[derive(Debug, Clone)]
pub struct RunConfig {
    flags: Flags,
    file: BTreeMap<String, String>,
    env_seed: Option<String>,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::Value {
        key: key.to_string(),
        value: value.to_string(),
    })
}

impl RunConfig {
    pub fn load(flags: Flags) -> Result<Self, ConfigError> {
        let file = match &flags.config {
            Some(path) => {
                let name = path.display().to_string();
                let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
                    path: name.clone(),
                    source,
                })?;
                parse_config(&text, &name)?
            }
            None => BTreeMap::new(),
        };
        Ok(RunConfig {
            flags,
            file,
            env_seed: std::env::var("CIN_SEED").ok(),
        })
    }

    #[cfg(test)]
    fn with_sources(flags: Flags, file: BTreeMap<String, String>, env_seed: Option<String>) -> Self {
        RunConfig { flags, file, env_seed }
    }

    fn pick<T: FromStr + Clone>(&self, flag: &Option<T>, key: &str) -> Result<Option<T>, ConfigError> {
        if let Some(v) = flag {
            return Ok(Some(v.clone()));
        }
        self.file.get(key).map(|v| parse(key, v)).transpose()
    }

    pub fn seed(&self) -> Result<u64, ConfigError> {
        if let Some(s) = self.pick(&self.flags.seed, "seed")? {
            return Ok(s);
        }
        match &self.env_seed {
            Some(v) => parse("CIN_SEED", v),
            None => Ok(0),
        }
    }

    pub fn jobs(&self) -> Result<usize, ConfigError> {
        let jobs = self.pick(&self.flags.jobs, "jobs")?.unwrap_or(1);
        if jobs == 0 {
            return Err(ConfigError::Value {
                key: "jobs".into(),
                value: "0".into(),
            });
        }
        Ok(jobs)
    }

    pub fn kind(&self) -> Result<MapKind, ConfigError> {
        let tag = self.pick(&self.flags.kind, "kind")?.unwrap_or_else(|| "2d".into());
        MapKind::from_tag(&tag).ok_or(ConfigError::Value {
            key: "kind".into(),
            value: tag,
        })
    }

    pub fn m(&self) -> Result<Option<usize>, ConfigError> {
        self.pick(&self.flags.m, "m")
    }

    pub fn kernel_size(&self) -> Result<Option<usize>, ConfigError> {
        self.pick(&self.flags.kernel_size, "kernel_size")
    }

    pub fn gamma(&self) -> Result<Option<f64>, ConfigError> {
        self.pick(&self.flags.gamma, "gamma")
    }

    pub fn k(&self) -> Result<Option<usize>, ConfigError> {
        self.pick(&self.flags.k, "k")
    }

    pub fn rp(&self) -> Result<Option<f64>, ConfigError> {
        self.pick(&self.flags.rp, "rp")
    }

    pub fn rn(&self) -> Result<Option<f64>, ConfigError> {
        self.pick(&self.flags.rn, "rn")
    }

    pub fn dh(&self) -> Result<Option<f64>, ConfigError> {
        self.pick(&self.flags.dh, "dh")
    }

    pub fn roughness(&self) -> Result<Option<f64>, ConfigError> {
        self.pick(&self.flags.roughness, "roughness")
    }

    fn path(&self, flag: &Option<PathBuf>, key: &str) -> Option<PathBuf> {
        flag.clone().or_else(|| self.file.get(key).map(PathBuf::from))
    }

    pub fn data(&self) -> Option<PathBuf> {
        self.path(&self.flags.data, "data")
    }

    pub fn model(&self) -> Option<PathBuf> {
        self.path(&self.flags.model, "model")
    }

    pub fn map(&self) -> Option<PathBuf> {
        self.path(&self.flags.map, "map")
    }

    pub fn out(&self, default: &str) -> PathBuf {
        self.path(&self.flags.out, "out").unwrap_or_else(|| PathBuf::from(default))
    }

    pub fn epochs(&self, default: usize) -> Result<usize, ConfigError> {
        Ok(self.pick(&self.flags.epochs, "epochs")?.unwrap_or(default))
    }

    pub fn batch(&self, default: usize) -> Result<usize, ConfigError> {
        Ok(self.pick(&self.flags.batch, "batch")?.unwrap_or(default))
    }

    pub fn lr(&self, default: f64) -> Result<f64, ConfigError> {
        Ok(self.pick(&self.flags.lr, "lr")?.unwrap_or(default))
    }

    pub fn counts(&self) -> Result<(usize, usize, usize), ConfigError> {
        Ok((
            self.pick(&self.flags.train, "train")?.unwrap_or(1000),
            self.pick(&self.flags.val, "val")?.unwrap_or(100),
            self.pick(&self.flags.test, "test")?.unwrap_or(100),
        ))
    }

    pub fn episodes(&self) -> Result<usize, ConfigError> {
        Ok(self.pick(&self.flags.episodes, "episodes")?.unwrap_or(40))
    }

    pub fn episode_len(&self) -> Result<usize, ConfigError> {
        Ok(self.pick(&self.flags.episode_len, "episode_len")?.unwrap_or(20))
    }

    pub fn curriculum(&self) -> Result<bool, ConfigError> {
        Ok(self.pick(&self.flags.curriculum, "curriculum")?.unwrap_or(false))
    }

    pub fn split(&self) -> Result<String, ConfigError> {
        Ok(self.pick(&self.flags.split, "split")?.unwrap_or_else(|| "test".into()))
    }

    fn state(&self, flag: &Option<String>, key: &'static str) -> Result<Option<State>, ConfigError> {
        let Some(text) = self.pick(flag, key)? else {
            return Ok(None);
        };
        let bad = || ConfigError::Value {
            key: key.to_string(),
            value: text.clone(),
        };
        let (r, c) = text.split_once(',').ok_or_else(bad)?;
        let row = r.trim().parse().map_err(|_| bad())?;
        let col = c.trim().parse().map_err(|_| bad())?;
        Ok(Some(State::new(row, col)))
    }

    pub fn start(&self) -> Result<State, ConfigError> {
        self.state(&self.flags.start, "start")?.ok_or(ConfigError::Missing("start"))
    }

    pub fn goal(&self) -> Result<State, ConfigError> {
        self.state(&self.flags.goal, "goal")?.ok_or(ConfigError::Missing("goal"))
    }
}

pub fn require(path: Option<PathBuf>, key: &'static str) -> Result<PathBuf, ConfigError> {
    path.ok_or(ConfigError::Missing(key))
}

pub fn display(path: &Path) -> String {
    path.display().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_syntax() {
        let cfg = parse_config("# comment\nm = 15\nkernel-size=3 # trailing\n\nkind= 3d\n", "x").unwrap();
        assert_eq!(cfg["m"], "15");
        assert_eq!(cfg["kernel_size"], "3");
        assert_eq!(cfg["kind"], "3d");
        assert!(matches!(parse_config("m 15", "x"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(parse_config("colour = red", "x"), Err(ConfigError::UnknownKey { .. })));
    }

    #[test]
    fn flags_beat_file_beat_defaults() {
        let file = parse_config("m = 15\ngamma = 0.9\nseed = 4", "x").unwrap();
        let flags = Flags {
            m: Some(28),
            ..Flags::default()
        };
        let cfg = RunConfig::with_sources(flags, file, Some("11".into()));
        assert_eq!(cfg.m().unwrap(), Some(28));
        assert_eq!(cfg.gamma().unwrap(), Some(0.9));
        assert_eq!(cfg.k().unwrap(), None);
        assert_eq!(cfg.seed().unwrap(), 4);
        assert_eq!(cfg.epochs(7).unwrap(), 7);
    }

    #[test]
    fn env_seed_is_the_last_resort() {
        let cfg = RunConfig::with_sources(Flags::default(), BTreeMap::new(), Some("11".into()));
        assert_eq!(cfg.seed().unwrap(), 11);
        let cfg = RunConfig::with_sources(Flags::default(), BTreeMap::new(), None);
        assert_eq!(cfg.seed().unwrap(), 0);
        let cfg = RunConfig::with_sources(Flags::default(), BTreeMap::new(), Some("x".into()));
        assert!(cfg.seed().is_err());
    }

    #[test]
    fn malformed_values_are_errors() {
        let file = parse_config("m = eight\nstart = 1;1", "x").unwrap();
        let cfg = RunConfig::with_sources(Flags::default(), file, None);
        assert!(cfg.m().is_err());
        assert!(cfg.start().is_err());
        assert!(matches!(cfg.goal(), Err(ConfigError::Missing("goal"))));
    }

    #[test]
    fn states_parse_as_row_comma_col() {
        let flags = Flags {
            start: Some("1, 6".into()),
            ..Flags::default()
        };
        let cfg = RunConfig::with_sources(flags, BTreeMap::new(), None);
        assert_eq!(cfg.start().unwrap(), State::new(1, 6));
    }
}
