//! TOML pipeline configuration.
//!
//! A file names the pipeline with a top-level `kind`, optionally an
//! `output_dir` and a `seed`, and holds one table per pipeline stage. Every
//! stage key has a default, so `kind = "ibp"` alone is a complete file.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, Result};
use crate::pipelines::{compensate, demo_ringing, hydrophone, ibp, shock};

/// Environment variable overriding the default seed.
pub const SEED_ENV: &str = "DYNUNC_SEED";
pub const DEFAULT_SEED: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PipelineKind {
    Shock,
    Compensate,
    Hydrophone,
    Ibp,
    DemoRinging,
}

impl PipelineKind {
    pub const ALL: [PipelineKind; 5] = [
        PipelineKind::Shock,
        PipelineKind::Compensate,
        PipelineKind::Hydrophone,
        PipelineKind::Ibp,
        PipelineKind::DemoRinging,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PipelineKind::Shock => "shock",
            PipelineKind::Compensate => "compensate",
            PipelineKind::Hydrophone => "hydrophone",
            PipelineKind::Ibp => "ibp",
            PipelineKind::DemoRinging => "demo_ringing",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Self::ALL.iter().map(|k| k.name()).collect();
                CliError::Config(format!("unknown kind `{s}`, expected one of {}", names.join(", ")))
            })
    }

    /// Default stage tables of this kind as TOML.
    pub fn default_toml(self) -> String {
        fn render<T: Serialize>(t: &T) -> String {
            toml::to_string(t).expect("defaults serialize")
        }
        let body = match self {
            PipelineKind::Shock => render(&shock::Config::default()),
            PipelineKind::Compensate => render(&compensate::Config::default()),
            PipelineKind::Hydrophone => render(&hydrophone::Config::default()),
            PipelineKind::Ibp => render(&ibp::Config::default()),
            PipelineKind::DemoRinging => render(&demo_ringing::Config::default()),
        };
        format!("kind = \"{}\"\noutput_dir = \"results\"\nseed = {DEFAULT_SEED}\n\n{body}", self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stages {
    Shock(shock::Config),
    Compensate(compensate::Config),
    Hydrophone(hydrophone::Config),
    Ibp(ibp::Config),
    DemoRinging(demo_ringing::Config),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub output_dir: PathBuf,
    pub seed: u64,
    pub stages: Stages,
}

impl PipelineConfig {
    pub fn kind(&self) -> PipelineKind {
        match self.stages {
            Stages::Shock(_) => PipelineKind::Shock,
            Stages::Compensate(_) => PipelineKind::Compensate,
            Stages::Hydrophone(_) => PipelineKind::Hydrophone,
            Stages::Ibp(_) => PipelineKind::Ibp,
            Stages::DemoRinging(_) => PipelineKind::DemoRinging,
        }
    }

    /// Defaults of `kind` writing to `output_dir`.
    pub fn defaults(kind: PipelineKind, output_dir: impl Into<PathBuf>) -> Result<Self> {
        let stages = match kind {
            PipelineKind::Shock => Stages::Shock(Default::default()),
            PipelineKind::Compensate => Stages::Compensate(Default::default()),
            PipelineKind::Hydrophone => Stages::Hydrophone(Default::default()),
            PipelineKind::Ibp => Stages::Ibp(Default::default()),
            PipelineKind::DemoRinging => Stages::DemoRinging(Default::default()),
        };
        Ok(PipelineConfig {
            output_dir: output_dir.into(),
            seed: default_seed()?,
            stages,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Parses a config; relative paths are taken relative to `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        let kind = match table.remove("kind") {
            Some(toml::Value::String(s)) => PipelineKind::parse(&s)?,
            Some(_) => return Err(CliError::Config("`kind` must be a string".into())),
            None => return Err(CliError::Config("missing `kind`".into())),
        };
        let output_dir = match table.remove("output_dir") {
            Some(toml::Value::String(s)) => base.join(s),
            Some(_) => return Err(CliError::Config("`output_dir` must be a string".into())),
            None => base.join("results"),
        };
        let seed = match table.remove("seed") {
            Some(toml::Value::Integer(s)) if s >= 0 => s as u64,
            Some(_) => return Err(CliError::Config("`seed` must be a non-negative integer".into())),
            None => default_seed()?,
        };
        let stages = match kind {
            PipelineKind::Shock => Stages::Shock(stages(table, base)?),
            PipelineKind::Compensate => Stages::Compensate(stages(table, base)?),
            PipelineKind::Hydrophone => Stages::Hydrophone(stages(table, base)?),
            PipelineKind::Ibp => Stages::Ibp(stages(table, base)?),
            PipelineKind::DemoRinging => Stages::DemoRinging(stages(table, base)?),
        };
        Ok(PipelineConfig { output_dir, seed, stages })
    }
}

/// Stage tables that may hold relative file paths.
pub trait StageConfig: DeserializeOwned {
    fn resolve_paths(&mut self, _base: &Path) {}
    fn validate(&self) -> Result<()> {
        Ok(())
    }
}

fn stages<T: StageConfig>(table: toml::Table, base: &Path) -> Result<T> {
    let mut cfg: T = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
    cfg.resolve_paths(base);
    cfg.validate()?;
    Ok(cfg)
}

pub(crate) fn resolve(path: &mut Option<PathBuf>, base: &Path) {
    if let Some(p) = path {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
}

/// Checks that an optional input file exists.
pub(crate) fn require_file(path: &Option<PathBuf>, key: &str) -> Result<()> {
    match path {
        Some(p) if !p.is_file() => Err(CliError::Config(format!("{key}: {} does not exist", p.display()))),
        _ => Ok(()),
    }
}

pub(crate) fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Config(msg()))
    }
}

/// Seed from the environment override, else [`DEFAULT_SEED`].
pub fn default_seed() -> Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("{SEED_ENV}=`{s}` is not a non-negative integer"))),
        Err(_) => Ok(DEFAULT_SEED),
    }
}
