//! Run configuration from `key=value` overrides.
//!
//! Every tunable of the pipeline lives here with a sensible desk-scale
//! default. Overrides are `key=value` strings; unknown keys and
//! malformed values are configuration errors. The `PRN_SEED`
//! environment variable, when set, wins over both the default and an
//! explicit `seed=` override so a whole scripted pipeline can be
//! reseeded from outside.

use crate::error::{Error, Result};

pub const SEED_ENV_VAR: &str = "PRN_SEED";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub identities: usize,
    pub samples_per_identity: usize,
    pub image_size: usize,
    pub align_size: usize,
    pub margin: f64,
    pub lambda_triplet: f64,
    pub lambda_pairwise: f64,
    pub lambda_identity: f64,
    pub learning_rate: f64,
    pub batch: usize,
    pub steps_backbone: usize,
    pub steps_encoder: usize,
    pub steps_relation: usize,
    pub steps_combined: usize,
    pub train_frac: f64,
    pub folds: usize,
    pub far_target: f64,
    pub fpir_target: f64,
    /// Fine-tune the backbone jointly in the relation stages instead
    /// of keeping it frozen.
    pub joint: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            identities: 20,
            samples_per_identity: 50,
            image_size: 96,
            align_size: 64,
            margin: 1.0,
            lambda_triplet: 1.0,
            lambda_pairwise: 0.5,
            lambda_identity: 1.0,
            learning_rate: 0.08,
            batch: 24,
            steps_backbone: 700,
            steps_encoder: 120,
            steps_relation: 160,
            steps_combined: 120,
            train_frac: 0.8,
            folds: 10,
            far_target: 0.01,
            fpir_target: 0.1,
            joint: false,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}={value}: {e}")))
}

impl RunConfig {
    /// Apply `key=value` overrides on top of the defaults.
    pub fn from_overrides<I, S>(overrides: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut cfg = RunConfig::default();
        for item in overrides {
            let item = item.as_ref();
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got {item:?}")))?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_value(key, value)?,
            "identities" => self.identities = parse_value(key, value)?,
            "samples_per_identity" => self.samples_per_identity = parse_value(key, value)?,
            "image_size" => self.image_size = parse_value(key, value)?,
            "align_size" => self.align_size = parse_value(key, value)?,
            "margin" => self.margin = parse_value(key, value)?,
            "lambda_triplet" => self.lambda_triplet = parse_value(key, value)?,
            "lambda_pairwise" => self.lambda_pairwise = parse_value(key, value)?,
            "lambda_identity" => self.lambda_identity = parse_value(key, value)?,
            "learning_rate" => self.learning_rate = parse_value(key, value)?,
            "batch" => self.batch = parse_value(key, value)?,
            "steps_backbone" => self.steps_backbone = parse_value(key, value)?,
            "steps_encoder" => self.steps_encoder = parse_value(key, value)?,
            "steps_relation" => self.steps_relation = parse_value(key, value)?,
            "steps_combined" => self.steps_combined = parse_value(key, value)?,
            "train_frac" => self.train_frac = parse_value(key, value)?,
            "folds" => self.folds = parse_value(key, value)?,
            "far_target" => self.far_target = parse_value(key, value)?,
            "fpir_target" => self.fpir_target = parse_value(key, value)?,
            "joint" => self.joint = parse_value(key, value)?,
            other => {
                return Err(Error::Config(format!("unknown configuration key {other:?}")))
            }
        }
        Ok(())
    }

    /// Override the seed from an environment value, if present.
    /// Non-numeric values are configuration errors, not silently
    /// ignored.
    pub fn apply_seed_env(&mut self, value: Option<&str>) -> Result<()> {
        if let Some(v) = value {
            self.seed = v
                .parse()
                .map_err(|e| Error::Config(format!("{SEED_ENV_VAR}={v}: {e}")))?;
        }
        Ok(())
    }

    /// Read `PRN_SEED` from the process environment.
    pub fn apply_seed_env_from_process(&mut self) -> Result<()> {
        match std::env::var(SEED_ENV_VAR) {
            Ok(v) => self.apply_seed_env(Some(&v)),
            Err(_) => Ok(()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.margin <= 0.0 || !self.margin.is_finite() {
            return Err(Error::Config(format!("margin {} must be positive", self.margin)));
        }
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.batch < 2 {
            return Err(Error::Config("batch must be at least 2".into()));
        }
        if !(0.0 < self.train_frac && self.train_frac < 1.0) {
            return Err(Error::Config(format!(
                "train_frac {} outside (0, 1)",
                self.train_frac
            )));
        }
        if self.folds < 2 {
            return Err(Error::Config("folds must be at least 2".into()));
        }
        if !(0.0..=1.0).contains(&self.far_target) {
            return Err(Error::Config(format!(
                "far_target {} outside [0, 1]",
                self.far_target
            )));
        }
        if !(0.0..=1.0).contains(&self.fpir_target) {
            return Err(Error::Config(format!(
                "fpir_target {} outside [0, 1]",
                self.fpir_target
            )));
        }
        Ok(())
    }

    /// Deterministic `key=value` listing of the resolved
    /// configuration, one entry per line, for output headers and logs.
    pub fn echo(&self) -> String {
        format!(
            "seed={}\nidentities={}\nsamples_per_identity={}\nimage_size={}\nalign_size={}\n\
             margin={}\nlambda_triplet={}\nlambda_pairwise={}\nlambda_identity={}\n\
             learning_rate={}\nbatch={}\nsteps_backbone={}\nsteps_encoder={}\n\
             steps_relation={}\nsteps_combined={}\ntrain_frac={}\nfolds={}\nfar_target={}\n\
             fpir_target={}\njoint={}",
            self.seed,
            self.identities,
            self.samples_per_identity,
            self.image_size,
            self.align_size,
            self.margin,
            self.lambda_triplet,
            self.lambda_pairwise,
            self.lambda_identity,
            self.learning_rate,
            self.batch,
            self.steps_backbone,
            self.steps_encoder,
            self.steps_relation,
            self.steps_combined,
            self.train_frac,
            self.folds,
            self.far_target,
            self.fpir_target,
            self.joint,
        )
    }
}
