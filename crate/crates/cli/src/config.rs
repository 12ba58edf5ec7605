//! Scoring settings: command-line flags override the config file, which
//! overrides the built-in defaults.

use std::fs;
use std::path::Path;

use neurolens::{DissectConfig, MembershipSchedule, SimilarityConfig, SimilarityKind};
use serde::Deserialize;
use serde_json::{Map, Value};

use crate::args::ScoringArgs;
use crate::error::{CliError, CliResult};

/// Every key accepted on the command line and in config files.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub similarity: Option<String>,
    pub temperature: Option<f64>,
    pub lambda: Option<f64>,
    pub top_fraction: Option<f64>,
    pub p_norm: Option<f64>,
    pub bk_size: Option<usize>,
    pub schedule_start: Option<f64>,
    pub schedule_end: Option<f64>,
    pub schedule_cutoff: Option<usize>,
    pub tau: Option<f64>,
    pub concept_chunk: Option<usize>,
    pub score_cap: Option<usize>,
    pub top_n: Option<usize>,
    pub normalize: Option<bool>,
}

impl Settings {
    pub fn from_args(args: &ScoringArgs) -> Self {
        let normalize = match (args.normalize, args.no_normalize) {
            (_, true) => Some(false),
            (true, false) => Some(true),
            _ => None,
        };
        Self {
            similarity: args.similarity.clone(),
            temperature: args.temperature,
            lambda: args.lambda,
            top_fraction: args.top_fraction,
            p_norm: args.p_norm,
            bk_size: args.bk_size,
            schedule_start: args.schedule_start,
            schedule_end: args.schedule_end,
            schedule_cutoff: args.schedule_cutoff,
            tau: args.tau,
            concept_chunk: args.concept_chunk,
            score_cap: args.score_cap,
            top_n: args.top_n,
            normalize,
        }
    }

    /// Parses a JSON object or `key = value` lines (`#` starts a comment).
    /// Keys may use `-` or `_`.
    pub fn parse(text: &str) -> CliResult<Self> {
        let trimmed = text.trim_start();
        let map: Map<String, Value> = if trimmed.starts_with('{') {
            serde_json::from_str(trimmed)
                .map_err(|e| CliError::Invalid(format!("config is not a JSON object: {e}")))?
        } else {
            let mut map = Map::new();
            for (n, line) in text.lines().enumerate() {
                let line = line.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    CliError::Invalid(format!("config line {}: expected key = value", n + 1))
                })?;
                let value = value.trim();
                let parsed = serde_json::from_str(value)
                    .unwrap_or_else(|_| Value::String(value.trim_matches('"').to_string()));
                map.insert(key.trim().to_string(), parsed);
            }
            map
        };
        let map: Map<String, Value> = map
            .into_iter()
            .map(|(k, v)| (k.replace('-', "_"), v))
            .collect();
        serde_json::from_value(Value::Object(map))
            .map_err(|e| CliError::Invalid(format!("invalid config: {e}")))
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Fills every unset key from `fallback`.
    pub fn or(self, fallback: Settings) -> Settings {
        Settings {
            similarity: self.similarity.or(fallback.similarity),
            temperature: self.temperature.or(fallback.temperature),
            lambda: self.lambda.or(fallback.lambda),
            top_fraction: self.top_fraction.or(fallback.top_fraction),
            p_norm: self.p_norm.or(fallback.p_norm),
            bk_size: self.bk_size.or(fallback.bk_size),
            schedule_start: self.schedule_start.or(fallback.schedule_start),
            schedule_end: self.schedule_end.or(fallback.schedule_end),
            schedule_cutoff: self.schedule_cutoff.or(fallback.schedule_cutoff),
            tau: self.tau.or(fallback.tau),
            concept_chunk: self.concept_chunk.or(fallback.concept_chunk),
            score_cap: self.score_cap.or(fallback.score_cap),
            top_n: self.top_n.or(fallback.top_n),
            normalize: self.normalize.or(fallback.normalize),
        }
    }

    /// Applies the settings on top of the defaults for the chosen kind.
    pub fn resolve(&self) -> CliResult<DissectConfig> {
        let kind = match &self.similarity {
            Some(s) => s.parse::<SimilarityKind>()?,
            None => SimilarityKind::SoftWpmi,
        };
        let mut sim = SimilarityConfig::new(kind);
        sim.temperature = self.temperature.unwrap_or(sim.temperature);
        sim.lambda = self.lambda.unwrap_or(sim.lambda);
        sim.top_fraction = self.top_fraction.unwrap_or(sim.top_fraction);
        sim.p_norm = self.p_norm.unwrap_or(sim.p_norm);
        sim.bk_size = self.bk_size.unwrap_or(sim.bk_size);
        if self.schedule_start.is_some()
            || self.schedule_end.is_some()
            || self.schedule_cutoff.is_some()
        {
            sim.schedule = MembershipSchedule::linear(
                self.schedule_start
                    .unwrap_or(neurolens::similarity::SCHEDULE_START),
                self.schedule_end
                    .unwrap_or(neurolens::similarity::SCHEDULE_END),
                self.schedule_cutoff
                    .unwrap_or(neurolens::similarity::SCHEDULE_CUTOFF),
            )?;
        }
        let mut cfg = DissectConfig::new(sim);
        cfg.interpretability_tau = self.tau.unwrap_or(cfg.interpretability_tau);
        cfg.concept_chunk = self.concept_chunk.unwrap_or(cfg.concept_chunk);
        cfg.score_cap = self.score_cap.unwrap_or(cfg.score_cap);
        cfg.output_top_n = self.top_n.unwrap_or(cfg.output_top_n);
        cfg.normalize_embeddings = self.normalize.unwrap_or(cfg.normalize_embeddings);
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Flags first, then the config file named by `--config`, then defaults.
pub fn resolve_scoring(args: &ScoringArgs) -> CliResult<DissectConfig> {
    let flags = Settings::from_args(args);
    let file = match &args.config {
        Some(path) => Settings::read(path)?,
        None => Settings::default(),
    };
    flags.or(file).resolve()
}
