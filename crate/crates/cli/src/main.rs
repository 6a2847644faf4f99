use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use nldst_core::config::{ExecSetting, ExperimentConfig, SystemKind};
use nldst_core::decoding::Strategy;
use nldst_core::error::{Error, Result};
use nldst_core::harness::{self, RunRecord};
use nldst_core::ingestion::{self, split_corpus, write_canonical};
use nldst_core::ontology::Ontology;
use nldst_core::report::{render_report, Layout};
use nldst_core::synthetic::generate_synthetic_corpus;
use nldst_core::verbalizer::TemplateSet;

#[derive(Parser)]
#[command(name = "nldst", version, about = "Dialogue state tracking with natural-language state descriptions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a MultiWOZ- or Taskmaster-style file to the canonical corpus format.
    Ingest(IngestArgs),
    /// Write a synthetic corpus in the canonical format.
    MakeSynthetic(SyntheticArgs),
    /// Fit the n-gram model a config's system uses and save it.
    Train(TrainArgs),
    /// Run one experiment config.
    Run(RunArgs),
    /// Run one config once per system and render comparison tables.
    Sweep(SweepArgs),
    /// Render tables from existing run directories.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SourceArg {
    Multiwoz21,
    Taskmaster1,
}

#[derive(Args)]
struct ResourceArgs {
    /// Ontology file; the bundled ontology when omitted.
    #[arg(long)]
    ontology: Option<PathBuf>,
    /// Template file; the bundled templates when omitted.
    #[arg(long)]
    templates: Option<PathBuf>,
}

impl ResourceArgs {
    fn load(&self) -> Result<(Ontology, TemplateSet)> {
        let o = match &self.ontology {
            Some(p) => Ontology::load(p)?,
            None => Ontology::builtin(),
        };
        let t = match &self.templates {
            Some(p) => TemplateSet::load(p, &o)?,
            None => TemplateSet::builtin(&o),
        };
        Ok((o, t))
    }
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long, value_enum)]
    source: SourceArg,
    #[arg(long)]
    input: PathBuf,
    /// Canonical corpus output file.
    #[arg(long)]
    output: PathBuf,
    /// Skip report output file (JSON lines).
    #[arg(long)]
    skip_report: Option<PathBuf>,
    /// Also write train/dev/test files and a manifest into this directory.
    #[arg(long)]
    split_dir: Option<PathBuf>,
    /// Train, dev and test fractions, comma-separated.
    #[arg(long, value_delimiter = ',', default_values_t = [0.8, 0.1, 0.1])]
    ratios: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    resources: ResourceArgs,
}

#[derive(Args)]
struct SyntheticArgs {
    #[arg(long, default_value_t = 200)]
    n_dialogues: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    resources: ResourceArgs,
}

/// Flags that override fields of the config file.
#[derive(Args, Default)]
struct Overrides {
    #[arg(long)]
    system: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    n_dialogues: Option<usize>,
    /// Comma-separated noise rates.
    #[arg(long, value_delimiter = ',')]
    rates: Option<Vec<f64>>,
    #[arg(long)]
    order: Option<usize>,
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    beam_width: Option<usize>,
    #[arg(long)]
    nucleus_p: Option<f64>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    timeout_ms: Option<u64>,
    #[arg(long)]
    max_retries: Option<u32>,
    #[arg(long)]
    max_in_flight: Option<usize>,
    /// Run on one thread.
    #[arg(long)]
    sequential: bool,
}

impl Overrides {
    /// Applies set flags; returns them as `--flag value` strings.
    fn apply(&self, cfg: &mut ExperimentConfig) -> Result<Vec<String>> {
        let mut applied = Vec::new();
        let mut note = |s: String| applied.push(s);
        if let Some(s) = &self.system {
            cfg.system = SystemKind::parse(s)?;
            note(format!("--system {s}"));
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
            note(format!("--seed {v}"));
        }
        if let Some(v) = &self.output_dir {
            cfg.output_dir = std::env::current_dir()
                .map_err(|e| Error::io(".", e))?
                .join(v);
            note(format!("--output-dir {}", v.display()));
        }
        if let Some(v) = self.n_dialogues {
            cfg.corpus.n_dialogues = v;
            note(format!("--n-dialogues {v}"));
        }
        if let Some(v) = &self.rates {
            cfg.noise.rates = v.clone();
            note(format!("--rates {v:?}"));
        }
        if let Some(v) = self.order {
            cfg.model.order = v;
            cfg.model.lambdas = None;
            note(format!("--order {v}"));
        }
        if let Some(s) = &self.strategy {
            cfg.decode.strategy = match s.as_str() {
                "greedy" => Strategy::Greedy,
                "beam" => Strategy::Beam,
                "nucleus" => Strategy::Nucleus,
                other => {
                    return Err(Error::Config {
                        path: PathBuf::new(),
                        message: format!("unknown strategy {other:?}"),
                    })
                }
            };
            note(format!("--strategy {s}"));
        }
        if let Some(v) = self.beam_width {
            cfg.decode.beam_width = v;
            note(format!("--beam-width {v}"));
        }
        if let Some(v) = self.nucleus_p {
            cfg.decode.nucleus_p = v;
            note(format!("--nucleus-p {v}"));
        }
        if let Some(v) = self.max_len {
            cfg.decode.max_len = v;
            note(format!("--max-len {v}"));
        }
        let backend_flags = self.endpoint.is_some()
            || self.timeout_ms.is_some()
            || self.max_retries.is_some()
            || self.max_in_flight.is_some();
        if backend_flags {
            let b = cfg.backend.as_mut().ok_or_else(|| Error::Config {
                path: cfg.source.clone(),
                message: "backend flags need a [backend] table in the config".into(),
            })?;
            if let Some(v) = &self.endpoint {
                b.endpoint = Some(v.clone());
                note(format!("--endpoint {v}"));
            }
            if let Some(v) = self.timeout_ms {
                b.timeout_ms = v;
                note(format!("--timeout-ms {v}"));
            }
            if let Some(v) = self.max_retries {
                b.max_retries = v;
                note(format!("--max-retries {v}"));
            }
            if let Some(v) = self.max_in_flight {
                b.max_in_flight = v;
                note(format!("--max-in-flight {v}"));
            }
        }
        if self.sequential {
            cfg.exec = ExecSetting::Sequential;
            note("--sequential".into());
        }
        Ok(applied)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Model output file.
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated systems; each runs into `<output_dir>/<system>`.
    #[arg(long, value_delimiter = ',', required = true)]
    systems: Vec<String>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long, value_parser = ["main", "ablation", "per_domain", "noise"])]
    layout: String,
    /// Run directories or run.record files.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    /// Write the table here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads a config; any failure here is a configuration error.
fn load_config(path: &Path, overrides: &Overrides) -> Result<(ExperimentConfig, String)> {
    let as_config = |e: Error| match e {
        Error::Config { .. } => e,
        other => Error::Config {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    };
    let raw = nldst_core::error::read_to_string(path).map_err(as_config)?;
    let mut cfg = ExperimentConfig::load(path).map_err(as_config)?;
    let applied = overrides.apply(&mut cfg).map_err(as_config)?;
    cfg.validate()?;
    let copy = if applied.is_empty() {
        raw
    } else {
        format!("# overridden by flags: {}\n{raw}", applied.join(" "))
    };
    Ok((cfg, copy))
}

fn ingest(a: &IngestArgs) -> Result<()> {
    let (o, t) = a.resources.load()?;
    let (corpus, skips) = match a.source {
        SourceArg::Multiwoz21 => ingestion::load_multiwoz(&a.input, &o, &t)?,
        SourceArg::Taskmaster1 => ingestion::load_taskmaster(&a.input, &o, &t)?,
    };
    write_canonical(&corpus, &a.output)?;
    if let Some(p) = &a.skip_report {
        write(p, &skips.to_jsonl())?;
    }
    if let Some(dir) = &a.split_dir {
        let ratios: [f64; 3] = a.ratios.as_slice().try_into().map_err(|_| Error::Config {
            path: PathBuf::new(),
            message: format!("--ratios needs three values, got {}", a.ratios.len()),
        })?;
        let (splits, manifest) = split_corpus(&corpus, ratios, a.seed)?;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, c) in ["train", "dev", "test"].iter().zip(&splits) {
            write_canonical(c, &dir.join(format!("{name}.jsonl")))?;
        }
        write(&dir.join("manifest.json"), &manifest.to_json())?;
    }
    println!(
        "{} examples from {} dialogues, {} skipped annotations",
        corpus.len(),
        corpus.dialogue_ids().len(),
        skips.len()
    );
    Ok(())
}

fn make_synthetic(a: &SyntheticArgs) -> Result<()> {
    let (o, t) = a.resources.load()?;
    let corpus = generate_synthetic_corpus(&o, &t, a.n_dialogues, a.seed)?;
    write_canonical(&corpus, &a.output)?;
    println!("{} examples from {} dialogues", corpus.len(), a.n_dialogues);
    Ok(())
}

fn train(a: &TrainArgs) -> Result<()> {
    let (cfg, _) = load_config(&a.config, &a.overrides)?;
    let res = harness::Resources::load(&cfg)?;
    let data = harness::prepare_data(&cfg, &res)?;
    let model = harness::train_model(&cfg, &data.train)?.ok_or_else(|| {
        Error::contract(format!("system {} has no trainable model", cfg.system.as_str()))
    })?;
    model.save(&a.output)?;
    println!(
        "order {} model over {} tokens, {} training examples",
        model.order(),
        model.vocab().len(),
        data.train.len()
    );
    Ok(())
}

fn summarize(record: &RunRecord, dir: &Path) {
    for level in &record.levels {
        println!(
            "{} noise {:.2}: JGA {:.1} Slot Acc {:.1} ({} turns, {} failed)",
            record.label,
            level.noise_rate,
            level.report.jga,
            level.report.slot_accuracy,
            level.report.n_turns,
            level.report.n_failed
        );
    }
    println!("run written to {}", dir.display());
}

fn run(a: &RunArgs) -> Result<()> {
    let (cfg, copy) = load_config(&a.config, &a.overrides)?;
    let record = harness::run_experiment(&cfg, &copy)?;
    summarize(&record, &cfg.output_dir());
    Ok(())
}

fn sweep(a: &SweepArgs) -> Result<()> {
    let (base, copy) = load_config(&a.config, &a.overrides)?;
    let root = base.output_dir();
    let mut records = Vec::new();
    for s in &a.systems {
        let mut cfg = base.clone();
        cfg.system = SystemKind::parse(s)?;
        cfg.output_dir = root.join(cfg.system.as_str());
        cfg.validate()?;
        let record = harness::run_experiment(&cfg, &format!("# sweep system: {s}\n{copy}"))?;
        summarize(&record, &cfg.output_dir());
        records.push(record);
    }
    let tables = root.join("tables");
    write(&tables.join("main.txt"), &render_report(&records, Layout::Main)?)?;
    if base.noise.rates.len() > 1 {
        write(&tables.join("noise.txt"), &render_report(&records, Layout::Noise)?)?;
    }
    write(&tables.join("per_domain.txt"), &render_report(&records, Layout::PerDomain)?)?;
    let arms = [SystemKind::NgramNl, SystemKind::NgramStructuredAblation];
    let ablation: Vec<RunRecord> = records.iter().filter(|r| arms.contains(&r.system)).cloned().collect();
    if ablation.len() == 2 {
        write(&tables.join("ablation.txt"), &render_report(&ablation, Layout::Ablation)?)?;
    }
    print!("{}", render_report(&records, Layout::Main)?);
    Ok(())
}

fn report(a: &ReportArgs) -> Result<()> {
    let layout = Layout::parse(&a.layout).expect("clap restricts values");
    let records = a.runs.iter().map(|p| RunRecord::load(p)).collect::<Result<Vec<_>>>()?;
    let text = render_report(&records, layout)?;
    match &a.output {
        Some(p) => write(p, &text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } => 2,
        Error::Contract(_) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Ingest(a) => ingest(a),
        Command::MakeSynthetic(a) => make_synthetic(a),
        Command::Train(a) => train(a),
        Command::Run(a) => run(a),
        Command::Sweep(a) => sweep(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
