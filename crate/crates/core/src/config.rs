//! Flat `key=value` configuration shared by the CLI, the service and run
//! directories.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are
//! errors so that typos do not silently fall back to defaults.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::hitl::HitlConfig;
use crate::selftrain::RunConfig;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Config {
    pub run: RunConfig,
    pub hitl: HitlConfig,
}

/// Every recognised key, in the order `to_kv` writes them.
pub const KEYS: &[&str] = &[
    "seed",
    "iterations",
    "anomaly_fraction",
    "normal_fraction",
    "learning_rate",
    "batch_size",
    "epochs",
    "c1",
    "c2",
    "arch",
    "warm_start",
    "pca_components",
    "sp_subsample",
    "sp_bags",
    "n_trees",
    "tree_subsample",
    "hitl_presented",
    "hitl_k",
    "hitl_neighbor_radius",
    "hitl_epochs",
    "hitl_replay",
    "hitl_accumulate",
    "hitl_anchor",
    "hitl_hide_tagged",
    "hitl_target",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Config {
        key: key.to_string(),
        message: format!("cannot parse {value:?}"),
    })
}

impl Config {
    pub fn with_seed(seed: u64) -> Self {
        let mut c = Self::default();
        c.set_seed(seed);
        c
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.run.seed = seed;
        self.hitl.seed = seed;
    }

    /// Applies one setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let r = &mut self.run;
        let h = &mut self.hitl;
        match key {
            "seed" => self.set_seed(parse(key, value)?),
            "iterations" => r.iterations = parse(key, value)?,
            "anomaly_fraction" => r.anomaly_fraction = parse(key, value)?,
            "normal_fraction" => r.normal_fraction = parse(key, value)?,
            "learning_rate" => r.train.learning_rate = parse(key, value)?,
            "batch_size" => r.train.batch_size = parse(key, value)?,
            "epochs" => r.train.epochs = parse(key, value)?,
            "c1" => r.train.c1 = parse(key, value)?,
            "c2" => r.train.c2 = parse(key, value)?,
            "arch" => {
                r.arch = match value.trim() {
                    "" | "auto" => None,
                    v => Some(v.parse().map_err(|e: Error| Error::Config {
                        key: key.to_string(),
                        message: e.to_string(),
                    })?),
                }
            }
            "warm_start" => r.warm_start = parse(key, value)?,
            "pca_components" => r.detect.pca_components = parse(key, value)?,
            "sp_subsample" => r.detect.sp_subsample = parse(key, value)?,
            "sp_bags" => r.detect.sp_bags = parse(key, value)?,
            "n_trees" => r.detect.n_trees = parse(key, value)?,
            "tree_subsample" => r.detect.tree_subsample = parse(key, value)?,
            "hitl_presented" => {
                h.presented = match value.trim() {
                    "" | "auto" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "hitl_k" => h.k = parse(key, value)?,
            "hitl_neighbor_radius" => h.neighbor_radius = parse(key, value)?,
            "hitl_epochs" => h.epochs = parse(key, value)?,
            "hitl_replay" => h.replay = parse(key, value)?,
            "hitl_accumulate" => h.accumulate = parse(key, value)?,
            "hitl_anchor" => h.anchor = parse(key, value)?,
            "hitl_hide_tagged" => h.hide_tagged = parse(key, value)?,
            "hitl_target" => {
                h.target = value.trim().parse().map_err(|e: Error| Error::Config {
                    key: key.to_string(),
                    message: e.to_string(),
                })?
            }
            _ => {
                return Err(Error::Config {
                    key: key.to_string(),
                    message: "unknown key".into(),
                })
            }
        }
        // fine-tuning shares the learner's optimiser settings
        self.hitl.train = self.run.train.clone();
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let r = &self.run;
        let h = &self.hitl;
        Some(match key {
            "seed" => r.seed.to_string(),
            "iterations" => r.iterations.to_string(),
            "anomaly_fraction" => r.anomaly_fraction.to_string(),
            "normal_fraction" => r.normal_fraction.to_string(),
            "learning_rate" => r.train.learning_rate.to_string(),
            "batch_size" => r.train.batch_size.to_string(),
            "epochs" => r.train.epochs.to_string(),
            "c1" => r.train.c1.to_string(),
            "c2" => r.train.c2.to_string(),
            "arch" => r.arch.map_or_else(|| "auto".to_string(), |a| a.to_string()),
            "warm_start" => r.warm_start.to_string(),
            "pca_components" => r.detect.pca_components.to_string(),
            "sp_subsample" => r.detect.sp_subsample.to_string(),
            "sp_bags" => r.detect.sp_bags.to_string(),
            "n_trees" => r.detect.n_trees.to_string(),
            "tree_subsample" => r.detect.tree_subsample.to_string(),
            "hitl_presented" => h.presented.map_or_else(|| "auto".to_string(), |p| p.to_string()),
            "hitl_k" => h.k.to_string(),
            "hitl_neighbor_radius" => h.neighbor_radius.to_string(),
            "hitl_epochs" => h.epochs.to_string(),
            "hitl_replay" => h.replay.to_string(),
            "hitl_accumulate" => h.accumulate.to_string(),
            "hitl_anchor" => h.anchor.to_string(),
            "hitl_hide_tagged" => h.hide_tagged.to_string(),
            "hitl_target" => h.target.to_string(),
            _ => return None,
        })
    }

    /// Applies every line of a `key=value` document on top of `self`.
    pub fn merge_kv(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                key: line.to_string(),
                message: format!("line {} is not key=value", n + 1),
            })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.merge_kv(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key}={}", self.get(key).expect("known key"));
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_kv(&text).map_err(|e| match e {
            Error::Config { key, message } => Error::format(path, format!("{key}: {message}")),
            other => other,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_kv()).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.run.validate()?;
        if self.hitl.k == 0 || self.hitl.epochs == 0 {
            return Err(Error::Config {
                key: "hitl_k".into(),
                message: "feedback cap and fine-tune epochs must be positive".into(),
            });
        }
        Ok(())
    }
}
