//! Experiment orchestration: corpus preparation, training, per-noise-level
//! evaluation and run-directory persistence.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::backend::{render_structured, Backend, BackendKind, BackendSpec, Interpretation, OutputMode};
use crate::canonicalizer::RuleSet;
use crate::config::{CorpusSource, ExperimentConfig, SystemKind};
use crate::decoding::DecodeConfig;
use crate::error::{Error, Result};
use crate::ingestion::{
    load_multiwoz, load_taskmaster, read_canonical, split_corpus, to_canonical, SplitManifest,
};
use crate::lm::NGramModel;
use crate::metrics::{evaluate, MetricReport, TurnPrediction};
use crate::model::{tokenize, AnnotatedTurnExample, Corpus, SlotValue, Speaker, Split, Token};
use crate::noise::{noise_corpus, NoiseConfig, NoiseStats};
use crate::ontology::Ontology;
use crate::parallel::{self, ExecMode};
use crate::resources::hash_text;
use crate::rule_dst::{track, RuleDstConfig};
use crate::seed;
use crate::synthetic::generate_synthetic_corpus;
use crate::verbalizer::TemplateSet;

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Ontology, templates and both rule grammars, loaded once per run.
#[derive(Debug, Clone)]
pub struct Resources {
    pub ontology: Arc<Ontology>,
    pub templates: Arc<TemplateSet>,
    pub state_rules: Arc<RuleSet>,
    pub utterance: Arc<RuleDstConfig>,
}

impl Resources {
    pub fn builtin() -> Self {
        let o = Ontology::builtin();
        Resources {
            templates: Arc::new(TemplateSet::builtin(&o)),
            state_rules: Arc::new(RuleSet::builtin_state(&o)),
            utterance: Arc::new(RuleDstConfig::builtin(&o)),
            ontology: Arc::new(o),
        }
    }

    pub fn load(config: &ExperimentConfig) -> Result<Self> {
        let r = &config.resources;
        let ontology = match &r.ontology {
            Some(p) => Ontology::load(&config.resolve(p))?,
            None => Ontology::builtin(),
        };
        let templates = match &r.templates {
            Some(p) => TemplateSet::load(&config.resolve(p), &ontology)?,
            None => TemplateSet::builtin(&ontology),
        };
        let state_rules = match &r.state_rules {
            Some(p) => RuleSet::load(&config.resolve(p), &ontology)?,
            None => RuleSet::builtin_state(&ontology),
        };
        let utterance = match &r.utterance_rules {
            Some(p) => RuleDstConfig {
                rules: RuleSet::load(&config.resolve(p), &ontology)?,
            },
            None => RuleDstConfig::builtin(&ontology),
        };
        Ok(Resources {
            ontology: Arc::new(ontology),
            templates: Arc::new(templates),
            state_rules: Arc::new(state_rules),
            utterance: Arc::new(utterance),
        })
    }

    pub fn interpretation(&self) -> Interpretation {
        Interpretation {
            ontology: self.ontology.clone(),
            templates: self.templates.clone(),
            state_rules: self.state_rules.clone(),
        }
    }

    pub fn hashes(&self) -> ResourceHashes {
        ResourceHashes {
            ontology: self.ontology.hash().to_string(),
            templates: self.templates.hash().to_string(),
            state_rules: self.state_rules.hash().to_string(),
            utterance_rules: self.utterance.rules.hash().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceHashes {
    pub ontology: String,
    pub templates: String,
    pub state_rules: String,
    pub utterance_rules: String,
}

/// Train and test corpora plus the split manifest when one was made.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Corpus,
    pub test: Corpus,
    pub manifest: Option<SplitManifest>,
}

impl PreparedData {
    /// Hash of both corpora in canonical form.
    pub fn hash(&self) -> Result<String> {
        Ok(hash_text(&format!(
            "{}\n--\n{}",
            to_canonical(&self.train)?,
            to_canonical(&self.test)?
        )))
    }
}

/// Loads or generates the corpus and splits it. The test side is the test
/// split, or the dev split when the test split is empty.
pub fn prepare_data(config: &ExperimentConfig, res: &Resources) -> Result<PreparedData> {
    let c = &config.corpus;
    let (o, t) = (res.ontology.as_ref(), res.templates.as_ref());
    let full = match c.source {
        CorpusSource::Synthetic => generate_synthetic_corpus(o, t, c.n_dialogues, config.seed)?,
        CorpusSource::Canonical => {
            let p = config.resolve(c.path.as_ref().expect("validated"));
            read_canonical(&p, &config.name, Split::Train, o, t)?
        }
        CorpusSource::Multiwoz21 => {
            let (corpus, skips) = load_multiwoz(&config.resolve(c.path.as_ref().expect("validated")), o, t)?;
            if !skips.is_empty() {
                log::info!("multiwoz ingestion skipped {} annotations", skips.len());
            }
            corpus
        }
        CorpusSource::Taskmaster1 => {
            let (corpus, skips) = load_taskmaster(&config.resolve(c.path.as_ref().expect("validated")), o, t)?;
            if !skips.is_empty() {
                log::info!("taskmaster ingestion skipped {} annotations", skips.len());
            }
            corpus
        }
    };
    if let Some(tp) = &c.test_path {
        let test = read_canonical(&config.resolve(tp), &config.name, Split::Test, o, t)?;
        let train = Corpus::new(full.name, Split::Train, full.examples);
        return Ok(PreparedData { train, test, manifest: None });
    }
    let ([train, dev, test], manifest) = split_corpus(&full, c.split, config.seed)?;
    let test = if test.is_empty() { dev } else { test };
    if train.is_empty() || test.is_empty() {
        return Err(Error::contract(format!(
            "split {:?} leaves an empty train or test side",
            c.split
        )));
    }
    Ok(PreparedData { train, test, manifest: Some(manifest) })
}

/// Training target tokens for the structured-output arm.
pub fn structured_targets(corpus: &Corpus) -> Vec<Vec<Token>> {
    corpus
        .examples
        .iter()
        .map(|e| tokenize(&render_structured(&e.gold_structured, "; ")))
        .collect()
}

/// Fits the n-gram model a system needs, or `None` for systems without one.
pub fn train_model(config: &ExperimentConfig, train: &Corpus) -> Result<Option<NGramModel>> {
    let structured = match config.system {
        SystemKind::NgramNl => false,
        SystemKind::NgramStructuredAblation => true,
        SystemKind::ExternalBackend => match &config.backend {
            Some(b) if b.kind == BackendKind::NgramLocal => b.output_mode == OutputMode::Structured,
            _ => return Ok(None),
        },
        SystemKind::RuleDst => return Ok(None),
    };
    if let Some(p) = &config.model.model_path {
        return NGramModel::load(&config.resolve(p)).map(Some);
    }
    let lambdas = config.model.resolved_lambdas();
    let model = if structured {
        NGramModel::fit_targets(train, &structured_targets(train), config.model.order, &lambdas)?
    } else {
        NGramModel::fit(train, config.model.order, &lambdas)?
    };
    Ok(Some(model))
}

/// Default replacement pool: every token of the training user turns.
pub fn default_noise_pool(train: &Corpus) -> Vec<Token> {
    let set: BTreeSet<Token> = train
        .examples
        .iter()
        .flat_map(|e| e.history.turns())
        .filter(|t| t.speaker == Speaker::User)
        .flat_map(|t| t.utterance.iter().cloned())
        .collect();
    set.into_iter().collect()
}

/// The system under test, bound to everything it needs.
pub enum System {
    RuleDst(Resources),
    Backend(Backend),
}

impl System {
    pub fn build(
        config: &ExperimentConfig,
        res: &Resources,
        test: &Corpus,
        model: Option<NGramModel>,
    ) -> Result<Self> {
        let model = model.map(Arc::new);
        let spec = match config.system {
            SystemKind::RuleDst => return Ok(System::RuleDst(res.clone())),
            SystemKind::NgramNl => BackendSpec::new(BackendKind::NgramLocal, OutputMode::NaturalLanguage),
            SystemKind::NgramStructuredAblation => {
                BackendSpec::new(BackendKind::NgramLocal, OutputMode::Structured)
            }
            SystemKind::ExternalBackend => {
                let mut spec = config.backend.clone().expect("validated");
                if let Some(p) = &spec.canned_path {
                    spec.canned_path = Some(config.resolve(p));
                }
                spec
            }
        };
        Ok(System::Backend(Backend::bind(spec, res.interpretation(), &test.examples, model)?))
    }

    /// Predictions for every example, in input order.
    pub fn predict(&self, examples: &[AnnotatedTurnExample], decode: &DecodeConfig, run_seed: u64, mode: ExecMode) -> Vec<TurnPrediction> {
        match self {
            System::RuleDst(res) => parallel::map(mode, examples, |e| {
                TurnPrediction::new(e.key(), track(&e.history, &res.utterance, &res.ontology))
            }),
            System::Backend(b) => {
                let run = |e: &AnnotatedTurnExample| {
                    let cfg = DecodeConfig {
                        seed: seed::turn_seed(run_seed, e.dialogue_id(), e.turn_index()),
                        ..decode.clone()
                    };
                    b.generate_state(&e.history, &cfg)
                };
                if b.spec().kind == BackendKind::ExternalHttp {
                    parallel::map_bounded(mode, b.spec().max_in_flight, examples, run)
                } else {
                    parallel::map(mode, examples, run)
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelResult {
    pub noise_rate: f64,
    pub noise: NoiseStats,
    pub report: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub hash: String,
    pub train_examples: usize,
    pub test_examples: usize,
    pub train_dialogues: usize,
    pub test_dialogues: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub toolkit_version: String,
    pub name: String,
    pub system: SystemKind,
    pub label: String,
    pub seed: u64,
    pub config_hash: String,
    pub resource_hashes: ResourceHashes,
    pub data: DataSummary,
    /// Perplexity of the fitted model on clean test targets.
    pub test_perplexity: Option<f64>,
    pub levels: Vec<LevelResult>,
    pub predictions_log: String,
    pub wall_clock_seconds: f64,
}

impl RunRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("record serializes") + "\n"
    }

    pub fn from_json(text: &str, context: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::parse(context, e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let p = if path.is_dir() { path.join(RUN_RECORD) } else { path.to_path_buf() };
        Self::from_json(&crate::error::read_to_string(&p)?, &p.display().to_string())
    }

    /// Clean-level result, or the lowest rate when 0 was not run.
    pub fn baseline_level(&self) -> &LevelResult {
        self.levels
            .iter()
            .min_by(|a, b| a.noise_rate.total_cmp(&b.noise_rate))
            .expect("records have at least one level")
    }
}

pub const CONFIG_COPY: &str = "config.copy";
pub const RUN_RECORD: &str = "run.record";
pub const PREDICTIONS_LOG: &str = "predictions.log";
pub const TABLES_DIR: &str = "tables";

#[derive(Serialize)]
struct PredictionLine<'a> {
    noise_rate: f64,
    dialogue_id: &'a str,
    turn_index: usize,
    predicted_entries: Vec<SlotValue>,
    predicted_text: Option<String>,
    gold_entries: Vec<SlotValue>,
    error: Option<&'a str>,
}

/// Everything a run produces, before it is written to disk.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub record: RunRecord,
    pub predictions_log: String,
    pub tables: Vec<(String, String)>,
}

fn stage<T>(config: &ExperimentConfig, name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Contract(msg) => Error::Contract(format!(
            "{} (config {}, stage {name})",
            msg,
            config.source.display()
        )),
        other => other,
    })
}

/// Runs all noise levels of `config` in memory.
pub fn execute(config: &ExperimentConfig) -> Result<RunOutput> {
    let start = Instant::now();
    config.validate()?;
    let mode: ExecMode = config.exec.into();
    let res = stage(config, "resources", Resources::load(config))?;
    let data = stage(config, "data", prepare_data(config, &res))?;
    let model = stage(config, "train", train_model(config, &data.train))?;
    let test_perplexity = match (&model, config.system) {
        (Some(m), SystemKind::NgramStructuredAblation) => {
            let targets = structured_targets(&data.test);
            let items: Vec<_> = data
                .test
                .examples
                .iter()
                .zip(&targets)
                .map(|(e, t)| (m.prompt(&e.history), m.vocab().encode(t)))
                .collect();
            Some(stage(config, "perplexity", crate::lm::corpus_perplexity(m, &items))?)
        }
        (Some(m), _) => Some(stage(config, "perplexity", m.perplexity(&data.test))?),
        (None, _) => None,
    };
    let system = stage(config, "bind", System::build(config, &res, &data.test, model))?;
    let pool = match &config.noise.pool {
        Some(p) => p
            .iter()
            .map(|w| Token::new(w.as_str()))
            .collect::<Result<Vec<_>>>()?,
        None => default_noise_pool(&data.train),
    };
    let noise_seed = seed::derive_seed(config.seed, &["noise".into()]);

    let mut levels = Vec::new();
    let mut log = String::new();
    for &rate in &config.noise.rates {
        let noise = stage(config, "noise", NoiseConfig::new(rate, pool.clone(), noise_seed))?;
        let (noisy, stats) = noise_corpus(&data.test, &noise);
        let preds = system.predict(&noisy.examples, &config.decode, config.seed, mode);
        let report = stage(config, "metrics", evaluate(&preds, &noisy.examples, &res.ontology, mode))?;
        let mut order: Vec<usize> = (0..preds.len()).collect();
        order.sort_by(|&a, &b| preds[a].key.cmp(&preds[b].key));
        for i in order {
            let (p, g) = (&preds[i], &noisy.examples[i]);
            let line = PredictionLine {
                noise_rate: rate,
                dialogue_id: &p.key.dialogue_id,
                turn_index: p.key.turn_index,
                predicted_entries: p.predicted_structured.entries(),
                predicted_text: p.predicted_nl.as_ref().map(|d| d.text()),
                gold_entries: g.gold_structured.entries(),
                error: p.error.as_deref(),
            };
            writeln!(log, "{}", serde_json::to_string(&line).expect("line serializes")).expect("String write");
        }
        levels.push(LevelResult { noise_rate: rate, noise: stats, report });
    }

    let record = RunRecord {
        toolkit_version: TOOLKIT_VERSION.to_string(),
        name: config.name.clone(),
        system: config.system,
        label: match (&config.system, &config.backend) {
            (SystemKind::ExternalBackend, Some(b)) => format!(
                "{} ({})",
                config.system.display_name(),
                serde_json::to_value(b.kind).expect("kind serializes").as_str().unwrap_or("")
            ),
            _ => config.system.display_name().to_string(),
        },
        seed: config.seed,
        config_hash: config.hash(),
        resource_hashes: res.hashes(),
        data: DataSummary {
            hash: data.hash()?,
            train_examples: data.train.len(),
            test_examples: data.test.len(),
            train_dialogues: data.train.dialogue_ids().len(),
            test_dialogues: data.test.dialogue_ids().len(),
        },
        test_perplexity,
        levels,
        predictions_log: PREDICTIONS_LOG.to_string(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    let records = std::slice::from_ref(&record);
    let mut tables = vec![
        ("main.txt".to_string(), crate::report::render_report(records, crate::report::Layout::Main)?),
        ("per_domain.txt".to_string(), crate::report::render_report(records, crate::report::Layout::PerDomain)?),
    ];
    if record.levels.len() > 1 {
        tables.push(("noise.txt".to_string(), crate::report::render_report(records, crate::report::Layout::Noise)?));
    }
    Ok(RunOutput { record, predictions_log: log, tables })
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Persists a run into `dir`.
pub fn write_run(dir: &Path, raw_config: &str, out: &RunOutput) -> Result<()> {
    let tables = dir.join(TABLES_DIR);
    fs::create_dir_all(&tables).map_err(|e| Error::io(&tables, e))?;
    write(&dir.join(CONFIG_COPY), raw_config)?;
    write(&dir.join(PREDICTIONS_LOG), &out.predictions_log)?;
    for (name, text) in &out.tables {
        write(&tables.join(name), text)?;
    }
    write(&dir.join(RUN_RECORD), &out.record.to_json())
}

/// Runs `config` and writes its run directory; returns the record.
pub fn run_experiment(config: &ExperimentConfig, raw_config: &str) -> Result<RunRecord> {
    let out = execute(config)?;
    write_run(&config.output_dir(), raw_config, &out)?;
    Ok(out.record)
}

/// Loads a config file and runs it.
pub fn run_config_file(path: &Path) -> Result<(RunRecord, PathBuf)> {
    let raw = crate::error::read_to_string(path)?;
    let config = ExperimentConfig::load(path)?;
    let record = run_experiment(&config, &raw)?;
    Ok((record, config.output_dir()))
}
