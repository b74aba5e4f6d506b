//! `section.key=value` run configuration with defaults, file and overrides.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use camlab::cam::{CamConfig, HessianEstimator, ScoreKind};
use camlab::data::AugmentConfig;
use camlab::optim::{OptimizerKind, TrainConfig};
use camlab::{Error, Result};

/// Every recognised key with its default value.
const DEFAULTS: &[(&str, &str)] = &[
    ("augment.brightness_delta", "0.24"),
    ("augment.contrast_scale", "0.79"),
    ("augment.flip_probability", "0.5"),
    ("augment.noise_std", "0.0023"),
    ("augment.rotation_set", "-13,-9,9,13"),
    ("augment.seed", "0"),
    ("cam.class", "predicted"),
    ("cam.fd_step", "0.001"),
    ("cam.hessian", "fd"),
    ("cam.method", "both"),
    ("cam.score_kind", "logit"),
    ("cam.target_layer", "last-conv"),
    ("model.init_seed", "seed"),
    ("model.preset", "vgg-nano"),
    ("model.spec_file", ""),
    ("split.ratios", "0.8,0.1,0.1"),
    ("split.seed", "0"),
    ("synth.image_size", "128"),
    ("synth.n_per_class", "200"),
    ("synth.seed", "0"),
    ("train.adagrad_eps", "1e-8"),
    ("train.adam_beta1", "0.9"),
    ("train.adam_beta2", "0.999"),
    ("train.adam_eps", "1e-8"),
    ("train.augment", "true"),
    ("train.batch_size", "32"),
    ("train.epochs", "30"),
    ("train.learning_rate", "1e-4"),
    ("train.optimizer", "adam"),
    ("train.seed", "0"),
    ("train.shuffle", "true"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

fn parse_line(line: &str) -> Result<(String, String)> {
    let (k, v) = line
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("expected `section.key=value`, got `{line}`")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse `{v}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got `{v}`"))),
    }
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',').map(|x| parse_num(key, x.trim())).collect()
}

impl RunConfig {
    /// Sets `key`, rejecting keys that are not in the default table.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(Error::Config(format!(
                "unknown config key `{key}` (known keys: {})",
                DEFAULTS.iter().map(|(k, _)| *k).collect::<Vec<_>>().join(", ")
            ))),
        }
    }

    /// Applies one `key=value` assignment.
    pub fn assign(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = parse_line(assignment)?;
        self.set(&k, &v)
    }

    /// Applies every assignment of a config file. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            self.assign(line)?;
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).expect("key from the default table")
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        parse_num(key, self.get(key))
    }

    pub fn u64(&self, key: &str) -> Result<u64> {
        parse_num(key, self.get(key))
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        parse_num(key, self.get(key))
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        parse_bool(key, self.get(key))
    }

    pub fn augment(&self) -> Result<AugmentConfig> {
        let rotation_set = parse_list("augment.rotation_set", self.get("augment.rotation_set"))?;
        if rotation_set.is_empty() {
            return Err(Error::Config("augment.rotation_set must not be empty".into()));
        }
        let cfg = AugmentConfig {
            noise_std: self.f64("augment.noise_std")?,
            contrast_scale: self.f64("augment.contrast_scale")?,
            brightness_delta: self.f64("augment.brightness_delta")?,
            rotation_set,
            flip_probability: self.f64("augment.flip_probability")?,
            seed: self.u64("augment.seed")?,
        };
        if !(0.0..=1.0).contains(&cfg.flip_probability) || cfg.noise_std < 0.0 {
            return Err(Error::Config(
                "augment.flip_probability must be in [0, 1] and augment.noise_std non-negative".into(),
            ));
        }
        Ok(cfg)
    }

    pub fn train(&self) -> Result<TrainConfig> {
        let optimizer = match self.get("train.optimizer").parse::<OptimizerKind>()? {
            OptimizerKind::Adam { .. } => OptimizerKind::Adam {
                beta1: self.f64("train.adam_beta1")?,
                beta2: self.f64("train.adam_beta2")?,
                eps: self.f64("train.adam_eps")?,
            },
            OptimizerKind::Adagrad { .. } => OptimizerKind::Adagrad {
                eps: self.f64("train.adagrad_eps")?,
            },
            OptimizerKind::Sgd => OptimizerKind::Sgd,
        };
        let cfg = TrainConfig {
            epochs: self.usize("train.epochs")?,
            learning_rate: self.f64("train.learning_rate")?,
            batch_size: self.usize("train.batch_size")?,
            optimizer,
            seed: self.u64("train.seed")?,
            shuffle: self.bool("train.shuffle")?,
            augment: if self.bool("train.augment")? {
                Some(self.augment()?)
            } else {
                None
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Initialisation seed; `seed` means "same as train.seed".
    pub fn init_seed(&self) -> Result<u64> {
        match self.get("model.init_seed") {
            "seed" => self.u64("train.seed"),
            _ => self.u64("model.init_seed"),
        }
    }

    pub fn cam(&self) -> Result<CamConfig> {
        let target_layer = match self.get("cam.target_layer") {
            "last-conv" => None,
            _ => Some(self.usize("cam.target_layer")?),
        };
        Ok(CamConfig {
            target_layer,
            score_kind: self.get("cam.score_kind").parse::<ScoreKind>()?,
            fd_step: self.f64("cam.fd_step")?,
            hessian: self.get("cam.hessian").parse::<HessianEstimator>()?,
        })
    }

    pub fn ratios(&self) -> Result<(f64, f64, f64)> {
        match parse_list("split.ratios", self.get("split.ratios"))?[..] {
            [a, b, c] => Ok((a, b, c)),
            _ => Err(Error::Config("split.ratios needs three comma-separated values".into())),
        }
    }

    /// `key=value` lines in key order.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            writeln!(out, "{k}={v}").expect("write to String");
        }
        out
    }
}
