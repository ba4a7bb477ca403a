//! `lexicon:<path>` | `remote:<address>` | `random:<seed>` scorer specs.

use std::path::PathBuf;
use std::time::Duration;

use anyhow::{Context, Result};
use wser_core::corpus::Taxonomy;
use wser_core::labeler::{load_lexicon, EntailmentScorer, LexiconScorer, Orientation, RandomScorer, RemoteConfig, RemoteScorer};

use crate::config::{usage, UsageError};

/// Fallback address for `remote:` with no address and for a missing `--scorer`.
pub const SIDECAR_ENV: &str = "WSER_SIDECAR_ADDR";

#[derive(Debug, Clone, PartialEq)]
pub enum ScorerSpec {
    Lexicon(PathBuf),
    Remote(String),
    Random(u64),
}

impl ScorerSpec {
    pub fn parse(spec: Option<&str>) -> Result<Self> {
        let env_addr = || std::env::var(SIDECAR_ENV).ok().filter(|a| !a.trim().is_empty());
        let Some(spec) = spec else {
            return match env_addr() {
                Some(a) => Ok(ScorerSpec::Remote(a)),
                None => usage(format!("--scorer is required (or set {SIDECAR_ENV})")),
            };
        };
        let (kind, arg) = spec.split_once(':').unwrap_or((spec, ""));
        match kind {
            "lexicon" if !arg.is_empty() => Ok(ScorerSpec::Lexicon(arg.into())),
            "remote" if !arg.is_empty() => Ok(ScorerSpec::Remote(arg.into())),
            "remote" => env_addr()
                .map(ScorerSpec::Remote)
                .ok_or_else(|| UsageError(format!("`remote:` needs an address or {SIDECAR_ENV}")).into()),
            "random" => arg
                .parse()
                .map(ScorerSpec::Random)
                .map_err(|_| UsageError(format!("bad random seed {arg:?}")).into()),
            _ => usage(format!(
                "scorer spec {spec:?} must be lexicon:<path>, remote:<address> or random:<seed>"
            )),
        }
    }

    pub fn build(&self, taxonomy: &Taxonomy, orientation: Orientation, retries: usize) -> Result<Box<dyn EntailmentScorer>> {
        Ok(match self {
            ScorerSpec::Lexicon(path) => {
                let lex = load_lexicon(path).with_context(|| format!("loading lexicon {}", path.display()))?;
                Box::new(LexiconScorer::new(lex, taxonomy).with_orientation(orientation))
            }
            ScorerSpec::Remote(addr) => {
                let mut cfg = RemoteConfig::new(addr.clone());
                cfg.retries = retries;
                cfg.backoff = Duration::from_millis(200);
                Box::new(RemoteScorer::new(cfg)?)
            }
            ScorerSpec::Random(seed) => Box::new(RandomScorer::new(*seed)),
        })
    }
}
