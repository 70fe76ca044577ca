//! Run configuration: one TOML file, every section optional, unknown keys
//! rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::TokenizerConfig;
use crate::decoder::DecodeConfig;
use crate::eval::EvalConfig;
use crate::fm_index::DEFAULT_SAMPLE_RATE;
use crate::sampler::SamplerConfig;
use crate::scorer::{Endpoint, NGramConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parsing {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    /// Follows each query's `target`; for tests and sanity runs.
    Oracle,
    Ngram,
    External,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScorerSection {
    pub kind: ScorerKind,
    pub ngram: NGramConfig,
    pub endpoint: Option<Endpoint>,
    pub timeout_ms: u64,
}

impl Default for ScorerSection {
    fn default() -> Self {
        Self {
            kind: ScorerKind::Ngram,
            ngram: NGramConfig::default(),
            endpoint: None,
            timeout_ms: 10_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IndexSection {
    /// Every `sample_rate`-th suffix-array entry is kept for locate.
    pub sample_rate: u32,
}

impl Default for IndexSection {
    fn default() -> Self {
        Self {
            sample_rate: DEFAULT_SAMPLE_RATE,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub results: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Root of every random stream; stages derive their own seeds from it.
    pub seed: u64,
    /// Log filter used when the environment does not set one.
    pub log_level: String,
    /// Worker threads for batch retrieval; 0 means all cores.
    pub threads: usize,
    pub paths: Paths,
    pub tokenizer: TokenizerConfig,
    pub index: IndexSection,
    pub sampler: SamplerConfig,
    pub scorer: ScorerSection,
    pub decode: DecodeConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            log_level: "info".into(),
            threads: 0,
            paths: Paths::default(),
            tokenizer: TokenizerConfig::default(),
            index: IndexSection::default(),
            sampler: SamplerConfig::default(),
            scorer: ScorerSection::default(),
            decode: DecodeConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// The sections that decide what retrieval produces.
#[derive(Serialize)]
struct Hashed<'a> {
    seed: u64,
    tokenizer: &'a TokenizerConfig,
    index: &'a IndexSection,
    sampler: &'a SamplerConfig,
    scorer: &'a ScorerSection,
    decode: &'a DecodeConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: origin.to_owned(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: String| ConfigError::Invalid(e);
        self.decode.validate().map_err(|e| invalid(e.to_string()))?;
        self.sampler.validate().map_err(|e| invalid(e.to_string()))?;
        self.eval.parsed().map_err(|e| invalid(e.to_string()))?;
        if self.index.sample_rate == 0 {
            return Err(invalid("index.sample_rate must be positive".into()));
        }
        if self.scorer.kind == ScorerKind::External && self.scorer.endpoint.is_none() {
            return Err(invalid("scorer.kind = \"external\" needs scorer.endpoint".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON of the result-determining sections.
    /// Paths, threads, logging and metric choice are left out: they do not
    /// change what retrieval returns.
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(Hashed {
            seed: self.seed,
            tokenizer: &self.tokenizer,
            index: &self.index,
            sampler: &self.sampler,
            scorer: &self.scorer,
            decode: &self.decode,
        })
        .expect("config serializes");
        // `Value` objects keep keys sorted, so the text is canonical
        let digest = Sha256::digest(serde_json::to_string(&value).expect("json").as_bytes());
        crate::store::hex(&digest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::Strategy;

    #[test]
    fn empty_file_is_defaults() {
        assert_eq!(RunConfig::from_toml("", Path::new("x")).unwrap(), RunConfig::default());
    }

    #[test]
    fn sections_parse() {
        let cfg = RunConfig::from_toml(
            r#"
            seed = 7
            [decode]
            num_beams = 8
            num_groups = 2
            strategy = "free_text"
            [scorer]
            kind = "external"
            endpoint = { tcp = "127.0.0.1:9000" }
            [scorer.ngram]
            beta = 3.5
            "#,
            Path::new("x"),
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.decode.num_beams, 8);
        assert_eq!(cfg.decode.strategy, Strategy::FreeText);
        assert_eq!(cfg.decode.min_len, 10);
        assert_eq!(cfg.scorer.ngram.beta, 3.5);
        assert_eq!(cfg.scorer.endpoint, Some(Endpoint::Tcp("127.0.0.1:9000".into())));
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        for bad in ["sede = 1", "[decode]\nbeams = 3", "[scorer.ngram]\ngamma = 1.0"] {
            assert!(
                matches!(
                    RunConfig::from_toml(bad, Path::new("x")),
                    Err(ConfigError::Parse { .. })
                ),
                "{bad}"
            );
        }
    }

    #[test]
    fn hash_tracks_retrieval_settings_only() {
        let base = RunConfig::default();
        let mut other = base.clone();
        other.threads = 3;
        other.paths.index = Some("elsewhere".into());
        other.eval.metrics = vec!["P@3".into()];
        assert_eq!(base.hash(), other.hash());
        other.decode.length_penalty = 0.25;
        assert_ne!(base.hash(), other.hash());
        assert_eq!(base.hash().len(), 64);
    }

    #[test]
    fn toml_roundtrip() {
        let mut cfg = RunConfig::default();
        cfg.decode.terminators = vec![3, 4];
        cfg.scorer.endpoint = Some(Endpoint::Command(vec!["python3".into(), "s.py".into()]));
        let back = RunConfig::from_toml(&cfg.to_toml(), Path::new("x")).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut cfg = RunConfig::default();
        cfg.scorer.kind = ScorerKind::External;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.decode.num_groups = 3;
        assert!(cfg.validate().is_err());
    }
}
