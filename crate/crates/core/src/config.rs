//! Experiment configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::BackendSpec;
use crate::decoding::DecodeConfig;
use crate::error::{read_to_string, Error, Result};
use crate::parallel::ExecMode;
use crate::resources::hash_text;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    RuleDst,
    NgramNl,
    NgramStructuredAblation,
    ExternalBackend,
}

impl SystemKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SystemKind::RuleDst => "rule_dst",
            SystemKind::NgramNl => "ngram_nl",
            SystemKind::NgramStructuredAblation => "ngram_structured_ablation",
            SystemKind::ExternalBackend => "external_backend",
        }
    }

    /// Row label used in rendered tables.
    pub fn display_name(self) -> &'static str {
        match self {
            SystemKind::RuleDst => "Rule-based DST",
            SystemKind::NgramNl => "NL-DST (n-gram)",
            SystemKind::NgramStructuredAblation => "N-gram DST (Structured Output)",
            SystemKind::ExternalBackend => "External backend",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rule_dst" => Ok(SystemKind::RuleDst),
            "ngram_nl" => Ok(SystemKind::NgramNl),
            "ngram_structured_ablation" => Ok(SystemKind::NgramStructuredAblation),
            "external_backend" => Ok(SystemKind::ExternalBackend),
            other => Err(Error::Config {
                path: PathBuf::new(),
                message: format!("unknown system {other:?}"),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusSource {
    Synthetic,
    Canonical,
    Multiwoz21,
    Taskmaster1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub source: CorpusSource,
    /// Dialogue count for the synthetic source.
    #[serde(default = "default_n_dialogues")]
    pub n_dialogues: usize,
    /// Input file for the file-based sources.
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// Optional separate canonical test file; when set no split is made.
    #[serde(default)]
    pub test_path: Option<PathBuf>,
    #[serde(default = "default_split")]
    pub split: [f64; 3],
}

fn default_n_dialogues() -> usize {
    200
}
fn default_split() -> [f64; 3] {
    [0.8, 0.1, 0.1]
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceConfig {
    pub ontology: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub state_rules: Option<PathBuf>,
    pub utterance_rules: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_order")]
    pub order: usize,
    /// Interpolation weights from unigram upwards; defaults to weights
    /// doubling with each order.
    #[serde(default)]
    pub lambdas: Option<Vec<f64>>,
    /// Load a saved model instead of fitting one.
    #[serde(default)]
    pub model_path: Option<PathBuf>,
}

fn default_order() -> usize {
    12
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            order: default_order(),
            lambdas: None,
            model_path: None,
        }
    }
}

impl ModelConfig {
    pub fn resolved_lambdas(&self) -> Vec<f64> {
        match &self.lambdas {
            Some(l) => l.clone(),
            None => {
                let raw: Vec<f64> = (0..self.order).map(|k| 2f64.powi(k as i32)).collect();
                let sum: f64 = raw.iter().sum();
                raw.into_iter().map(|w| w / sum).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSweep {
    #[serde(default = "default_rates")]
    pub rates: Vec<f64>,
    /// Replacement tokens; defaults to the training user vocabulary.
    #[serde(default)]
    pub pool: Option<Vec<String>>,
}

fn default_rates() -> Vec<f64> {
    vec![0.0]
}

impl Default for NoiseSweep {
    fn default() -> Self {
        NoiseSweep {
            rates: default_rates(),
            pool: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecSetting {
    Sequential,
    #[default]
    Parallel,
}

impl From<ExecSetting> for ExecMode {
    fn from(e: ExecSetting) -> Self {
        match e {
            ExecSetting::Sequential => ExecMode::Sequential,
            ExecSetting::Parallel => ExecMode::Parallel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub system: SystemKind,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub exec: ExecSetting,
    pub corpus: CorpusConfig,
    #[serde(default)]
    pub resources: ResourceConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub decode: DecodeConfig,
    #[serde(default)]
    pub noise: NoiseSweep,
    #[serde(default)]
    pub backend: Option<BackendSpec>,
    /// Directory relative paths are resolved against; not serialized.
    #[serde(skip)]
    pub base_dir: PathBuf,
    /// File the config was read from, for diagnostics; not serialized.
    #[serde(skip)]
    pub source: PathBuf,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config {
            path: base_dir.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.source = base_dir.to_path_buf();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut cfg = Self::from_toml(&text, &base).map_err(|e| match e {
            Error::Config { message, .. } => Error::Config {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })?;
        cfg.source = path.to_path_buf();
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization (field order fixed, comments
    /// and formatting dropped).
    pub fn hash(&self) -> String {
        hash_text(&serde_json::to_string(self).expect("config serializes"))
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    fn config_error(&self, message: impl Into<String>) -> Error {
        Error::Config {
            path: self.source.clone(),
            message: message.into(),
        }
    }

    /// Checks field ranges and that referenced files exist.
    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(self.config_error("name must not be empty"));
        }
        if self.noise.rates.is_empty() {
            return Err(self.config_error("noise.rates must not be empty"));
        }
        if let Some(r) = self.noise.rates.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(self.config_error(format!("noise rate {r} outside [0, 1]")));
        }
        let split_sum: f64 = self.corpus.split.iter().sum();
        if (split_sum - 1.0).abs() > 1e-9 || self.corpus.split.iter().any(|r| *r < 0.0) {
            return Err(self.config_error("corpus.split must be non-negative and sum to 1"));
        }
        match self.corpus.source {
            CorpusSource::Synthetic if self.corpus.n_dialogues == 0 => {
                return Err(self.config_error("corpus.n_dialogues must be at least 1"))
            }
            CorpusSource::Synthetic => {}
            _ if self.corpus.path.is_none() => {
                return Err(self.config_error("corpus.path is required for file sources"))
            }
            _ => {}
        }
        if self.model.order == 0 {
            return Err(self.config_error("model.order must be at least 1"));
        }
        if self.model.resolved_lambdas().len() != self.model.order {
            return Err(self.config_error("model.lambdas must have one weight per order"));
        }
        self.decode
            .validate()
            .map_err(|e| self.config_error(format!("decode: {e}")))?;
        match (&self.backend, self.system) {
            (None, SystemKind::ExternalBackend) => {
                return Err(self.config_error("external_backend needs a [backend] table"))
            }
            (Some(b), _) => b
                .validate()
                .map_err(|e| self.config_error(format!("backend: {e}")))?,
            (None, _) => {}
        }
        let r = &self.resources;
        let files = [
            &self.corpus.path,
            &self.corpus.test_path,
            &r.ontology,
            &r.templates,
            &r.state_rules,
            &r.utterance_rules,
            &self.model.model_path,
        ];
        let canned = self.backend.as_ref().and_then(|b| b.canned_path.clone());
        for p in files.into_iter().flatten().chain(canned.as_ref()) {
            let full = self.resolve(p);
            if !full.is_file() {
                return Err(self.config_error(format!("file not found: {}", full.display())));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        name = "t"
        system = "rule_dst"
        output_dir = "out"
        [corpus]
        source = "synthetic"
    "#;

    #[test]
    fn minimal_config_defaults() {
        let c = ExperimentConfig::from_toml(MINIMAL, Path::new("/tmp")).unwrap();
        c.validate().unwrap();
        assert_eq!(c.noise.rates, vec![0.0]);
        assert_eq!(c.corpus.n_dialogues, 200);
        assert_eq!(c.output_dir(), PathBuf::from("/tmp/out"));
        let l = c.model.resolved_lambdas();
        assert!((l.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(l.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn hash_ignores_formatting() {
        let a = ExperimentConfig::from_toml(MINIMAL, Path::new("/a")).unwrap();
        let reformatted = MINIMAL.replace("        ", "").replace("\"t\"", "'t'");
        let b = ExperimentConfig::from_toml(&reformatted, Path::new("/b")).unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = ExperimentConfig::from_toml(&MINIMAL.replace("\"t\"", "\"u\""), Path::new("/a")).unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn rejects_bad_values() {
        let bad_rate = format!("{MINIMAL}\n[noise]\nrates = [0.0, 1.5]\n");
        let c = ExperimentConfig::from_toml(&bad_rate, Path::new("/tmp")).unwrap();
        assert!(matches!(c.validate(), Err(Error::Config { .. })));
        let missing = MINIMAL.replace("source = \"synthetic\"", "source = \"canonical\"\npath = \"nope.jsonl\"");
        let c = ExperimentConfig::from_toml(&missing, Path::new("/tmp")).unwrap();
        assert!(c.validate().is_err());
        assert!(ExperimentConfig::from_toml("name = 1", Path::new("/tmp")).is_err());
        let unknown = format!("{MINIMAL}\nbogus = 1\n");
        assert!(ExperimentConfig::from_toml(&unknown, Path::new("/tmp")).is_err());
    }

    #[test]
    fn external_backend_requires_table() {
        let c = ExperimentConfig::from_toml(
            &MINIMAL.replace("rule_dst", "external_backend"),
            Path::new("/tmp"),
        )
        .unwrap();
        assert!(c.validate().is_err());
    }
}
