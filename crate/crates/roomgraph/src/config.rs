//! Configuration file (TOML or JSON) with environment overrides.
//!
//! Every section has defaults, so an empty file is valid. Unknown keys are
//! rejected. Variables named `ROOMGRAPH_<SECTION>__<KEY>` override single
//! values, for example `ROOMGRAPH_PGO__MAX_ITERS=20` or
//! `ROOMGRAPH_BATCH_SIZE=40`; values are parsed as JSON and fall back to
//! plain strings.

use std::path::{Path, PathBuf};

use roomgraph_core::eval::EvalConfig;
use roomgraph_core::loop_closure::LoopClosureConfig;
use roomgraph_core::objects::ObjectConfig;
use roomgraph_core::pgo::PgoConfig;
use roomgraph_core::pipeline::{BatchingMode, PipelineConfig, StageFlags};
use roomgraph_core::reconstruction::OracleNoiseModel;
use roomgraph_core::segmenter::HysteresisConfig;
use roomgraph_core::simulator::{SequenceSpec, WorldConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::io::{read_text, IoError};

pub const ENV_PREFIX: &str = "ROOMGRAPH_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{path}: {reason}")]
    Syntax { path: PathBuf, reason: String },
    #[error("environment override {key}: {reason}")]
    Env { key: String, reason: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub mode: BatchingMode,
    pub batch_size: usize,
    pub transition_pairs: usize,
    pub retry_failed_batches: bool,
    pub stages: StageFlags,
    pub segmenter: HysteresisConfig,
    pub loop_closure: LoopClosureConfig,
    pub pgo: PgoConfig,
    pub objects: ObjectConfig,
    /// Noise of the simulated reconstruction provider.
    pub oracle: OracleNoiseModel,
    pub eval: EvalConfig,
    /// World and traversal used by `simulate`.
    pub world: WorldConfig,
    pub sequence: SequenceSpec,
}

impl Default for AppConfig {
    fn default() -> Self {
        let p = PipelineConfig::default();
        Self {
            mode: p.mode,
            batch_size: p.batch_size,
            transition_pairs: p.transition_pairs,
            retry_failed_batches: p.retry_failed_batches,
            stages: p.stages,
            segmenter: p.segmenter,
            loop_closure: p.loop_closure,
            pgo: p.pgo,
            objects: p.objects,
            oracle: OracleNoiseModel::default(),
            eval: EvalConfig::default(),
            world: WorldConfig::default(),
            sequence: SequenceSpec::default(),
        }
    }
}

impl AppConfig {
    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            mode: self.mode,
            batch_size: self.batch_size,
            transition_pairs: self.transition_pairs,
            retry_failed_batches: self.retry_failed_batches,
            stages: self.stages,
            segmenter: self.segmenter,
            loop_closure: self.loop_closure,
            pgo: self.pgo,
            objects: self.objects,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.pipeline().validate().map_err(|e| invalid(&e))?;
        self.oracle.validate().map_err(|e| invalid(&e))?;
        self.world.validate().map_err(|e| invalid(&e))?;
        if !(self.eval.correspondence_radius > 0.0 && self.eval.max_time_diff >= 0.0) {
            return Err(ConfigError::Invalid("eval radii must be positive".into()));
        }
        Ok(())
    }

    /// Parses TOML, or JSON when the path ends in `.json`.
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let syntax = |reason: String| ConfigError::Syntax {
            path: path.to_path_buf(),
            reason,
        };
        if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(text).map_err(|e| syntax(e.to_string()))
        } else {
            toml::from_str(text).map_err(|e| syntax(e.to_string()))
        }
    }

    /// Applies `ROOMGRAPH_*` overrides from `vars`; other names are ignored.
    pub fn with_overrides<I>(self, vars: I) -> Result<Self, ConfigError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut overrides: Vec<(String, String)> =
            vars.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
        if overrides.is_empty() {
            return Ok(self);
        }
        overrides.sort();
        let mut tree = serde_json::to_value(&self).expect("config serializes");
        for (key, raw) in &overrides {
            let env = |reason: String| ConfigError::Env {
                key: key.clone(),
                reason,
            };
            let path: Vec<String> = key[ENV_PREFIX.len()..]
                .split("__")
                .map(|s| s.to_ascii_lowercase())
                .collect();
            if path.iter().any(String::is_empty) {
                return Err(env("empty key segment".into()));
            }
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.clone()));
            let mut node = &mut tree;
            for segment in &path[..path.len() - 1] {
                node = node
                    .get_mut(segment)
                    .filter(|n| n.is_object())
                    .ok_or_else(|| env(format!("unknown section `{segment}`")))?;
            }
            let leaf = path.last().expect("non-empty path");
            let map = node.as_object_mut().expect("checked object");
            if !map.contains_key(leaf) {
                return Err(env(format!("unknown key `{leaf}`")));
            }
            map.insert(leaf.clone(), value);
        }
        serde_json::from_value(tree).map_err(|e| ConfigError::Env {
            key: overrides.iter().map(|(k, _)| k.as_str()).collect::<Vec<_>>().join(", "),
            reason: e.to_string(),
        })
    }

    /// Defaults, then the file if given, then the environment; validated.
    pub fn load<I>(path: Option<&Path>, vars: I) -> Result<Self, ConfigError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let base = match path {
            Some(p) => Self::parse(&read_text(p)?, p)?,
            None => Self::default(),
        };
        let config = base.with_overrides(vars)?;
        config.validate()?;
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vars(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn empty_files_give_defaults() {
        assert_eq!(AppConfig::parse("", Path::new("c.toml")).unwrap(), AppConfig::default());
        assert_eq!(
            AppConfig::parse("{}", Path::new("c.json")).unwrap(),
            AppConfig::default()
        );
        assert_eq!(AppConfig::default().pipeline(), PipelineConfig::default());
    }

    #[test]
    fn sections_parse_and_unknown_keys_fail() {
        let text = "mode = \"sliding_window\"\nbatch_size = 40\n[pgo]\nmax_iters = 7\n[oracle]\nrng_seed = 3\n";
        let c = AppConfig::parse(text, Path::new("c.toml")).unwrap();
        assert_eq!(c.mode, BatchingMode::SlidingWindow);
        assert_eq!((c.batch_size, c.pgo.max_iters, c.oracle.rng_seed), (40, 7, 3));
        assert_eq!(c.pgo.lambda_init, PgoConfig::default().lambda_init);
        assert!(AppConfig::parse("[pgo]\nmax_iter = 7\n", Path::new("c.toml")).is_err());
        assert!(AppConfig::parse("bogus = 1\n", Path::new("c.toml")).is_err());
        assert!(AppConfig::parse("{\"pgo\": {\"nope\": 1}}", Path::new("c.json")).is_err());
    }

    #[test]
    fn environment_overrides() {
        let c = AppConfig::default()
            .with_overrides(vars(&[
                ("ROOMGRAPH_PGO__MAX_ITERS", "9"),
                ("ROOMGRAPH_BATCH_SIZE", "33"),
                ("ROOMGRAPH_MODE", "sliding_window"),
                ("ROOMGRAPH_ORACLE__BATCH_SCALE_RANGE", "[1.0, 1.0]"),
                ("PATH", "/usr/bin"),
            ]))
            .unwrap();
        assert_eq!((c.pgo.max_iters, c.batch_size), (9, 33));
        assert_eq!(c.mode, BatchingMode::SlidingWindow);
        assert_eq!(c.oracle.batch_scale_range, [1.0, 1.0]);
        for bad in [
            ("ROOMGRAPH_PGO__NOPE", "1"),
            ("ROOMGRAPH_NOPE__X", "1"),
            ("ROOMGRAPH_PGO__MAX_ITERS", "-1"),
        ] {
            assert!(matches!(
                AppConfig::default().with_overrides(vars(&[bad])),
                Err(ConfigError::Env { .. })
            ));
        }
    }

    #[test]
    fn validation_runs_after_overrides() {
        let err = AppConfig::load(None, vars(&[("ROOMGRAPH_BATCH_SIZE", "1")])).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(_)));
    }
}
