//! Acceptance checks, one line per criterion. Runs as a plain binary so the
//! summary is printed even when the test harness captures output.

use std::collections::HashMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nldst_core::backend::request_id;
use nldst_core::backend::stub::StubServer;
use nldst_core::canonicalizer::{canonicalize, RuleSet};
use nldst_core::config::{ExecSetting, ExperimentConfig, SystemKind};
use nldst_core::decoding::{
    decode_beam, decode_nucleus, nucleus_filter, sample_nucleus, DecodeConfig, Strategy, Termination,
};
use nldst_core::harness::{self, Resources, RunOutput};
use nldst_core::lm::{corpus_perplexity, sequence_nll, ConditionalSequenceModel, NGramModel, TokenId};
use nldst_core::metrics::{bleu, joint_goal_accuracy, rouge, slot_accuracy, RougeVariant, TurnPrediction};
use nldst_core::model::{
    AnnotatedTurnExample, DialogueHistory, NLStateDescription, SlotValue, Speaker, StructuredState, TurnKey,
};
use nldst_core::ontology::Ontology;
use nldst_core::report::{render_report, Layout};
use nldst_core::synthetic::{generate_synthetic_corpus, sample_state};
use nldst_core::verbalizer::{verbalize, TemplateSet};

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load_config(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&configs_dir().join(name)).expect("config loads")
}

fn within(start: Instant, limit_s: f64) -> Result<f64, String> {
    let t = start.elapsed().as_secs_f64();
    if t < limit_s {
        Ok(t)
    } else {
        Err(format!("took {t:.2} s, limit {limit_s} s"))
    }
}

// 1

fn round_trip() -> Outcome {
    let start = Instant::now();
    let o = Ontology::builtin();
    let templates = TemplateSet::builtin(&o);
    let rules = RuleSet::builtin_state(&o);
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let n = 10_000;
    let mut failures = 0;
    for _ in 0..n {
        let s = sample_state(&o, &mut rng);
        let d = verbalize(&s, &templates).map_err(|e| e.to_string())?;
        if canonicalize(&d, &o, &rules) != s {
            failures += 1;
        }
    }
    ensure!(failures == 0, "{failures}/{n} states did not survive the round trip");
    let t = within(start, 10.0)?;
    Ok(format!("{n}/{n} states identical, {t:.2} s"))
}

// 2

fn oracle_ceiling() -> Outcome {
    let start = Instant::now();
    let mut cfg = load_config("oracle.toml");
    cfg.corpus.n_dialogues = cfg.corpus.n_dialogues.max(100);
    cfg.noise.rates = vec![0.0];
    let out = harness::execute(&cfg).map_err(|e| e.to_string())?;
    let r = &out.record.baseline_level().report;
    ensure!(r.jga == 100.0 && r.slot_accuracy == 100.0, "JGA {} SA {}", r.jga, r.slot_accuracy);
    for (name, v) in [("BLEU", r.bleu), ("ROUGE-1", r.rouge_1), ("ROUGE-2", r.rouge_2), ("ROUGE-L", r.rouge_l)] {
        ensure!(v == Some(1.0), "{name} = {v:?}");
    }
    let t = within(start, 10.0)?;
    Ok(format!(
        "{} dialogues, {} test turns: JGA 100.0, SA 100.0, BLEU/ROUGE 1.0, {t:.2} s",
        cfg.corpus.n_dialogues, r.n_turns
    ))
}

// 3

/// Random prefix-dependent distribution; EOS is the last id.
struct RandomModel {
    v: usize,
    seed: u64,
}

impl RandomModel {
    fn probs(&self, prefix: &[TokenId]) -> Vec<f64> {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ self.seed;
        for &t in prefix {
            h = (h ^ (t as u64 + 1)).wrapping_mul(0x0100_0000_01b3);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(h);
        let mut w: Vec<f64> = (0..self.v)
            .map(|_| if rng.random_bool(0.15) { 0.0 } else { rng.random::<f64>() + 1e-3 })
            .collect();
        if w.iter().all(|x| *x == 0.0) {
            w[self.v - 1] = 1.0;
        }
        let total: f64 = w.iter().sum();
        w.iter().map(|x| x / total).collect()
    }
}

impl ConditionalSequenceModel for RandomModel {
    fn vocab_size(&self) -> usize {
        self.v
    }
    fn eos_id(&self) -> TokenId {
        (self.v - 1) as TokenId
    }
    fn next_token_distribution(&self, _c: &[TokenId], prefix: &[TokenId]) -> Vec<f64> {
        self.probs(prefix)
    }
}

/// Enumerates every finished sequence and returns the best under the beam's
/// objective: `logp / steps^penalty`, ties to the smaller id sequence (EOS included).
fn exhaustive_best(m: &RandomModel, max_len: usize, penalty: f64) -> (Vec<TokenId>, Termination, f64) {
    let eos = m.eos_id();
    let mut best: Option<(f64, Vec<TokenId>, Termination, f64)> = None;
    let mut consider = |ids: Vec<TokenId>, term: Termination, logp: f64| {
        let steps = ids.len() + usize::from(term == Termination::Eos);
        let score = logp / (steps.max(1) as f64).powf(penalty);
        let key = |ids: &[TokenId], term: Termination| {
            let mut k = ids.to_vec();
            if term == Termination::Eos {
                k.push(eos);
            }
            k
        };
        let better = match &best {
            None => true,
            Some((s, bi, bt, _)) => score > *s || (score == *s && key(&ids, term) < key(bi, *bt)),
        };
        if better {
            best = Some((score, ids, term, logp));
        }
    };
    let mut stack: Vec<(Vec<TokenId>, f64)> = vec![(Vec::new(), 0.0)];
    while let Some((ids, logp)) = stack.pop() {
        let probs = m.probs(&ids);
        for (w, &p) in probs.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let lp = logp + p.ln();
            let w = w as TokenId;
            if w == eos {
                consider(ids.clone(), Termination::Eos, lp);
            } else {
                let mut next = ids.clone();
                next.push(w);
                if next.len() >= max_len {
                    consider(next, Termination::MaxLen, lp);
                } else {
                    stack.push((next, lp));
                }
            }
        }
    }
    let (_, ids, term, logp) = best.expect("some sequence has positive probability");
    (ids, term, logp)
}

/// Draw frequencies of the first generated token, one decoder run per seed.
fn nucleus_first_token_tv(model: &impl ConditionalSequenceModel, expected: &[f64], draws: u64) -> f64 {
    let mut counts = vec![0u64; expected.len()];
    for seed in 0..draws {
        let cfg = DecodeConfig {
            strategy: Strategy::Nucleus,
            nucleus_p: 0.7,
            max_len: 1,
            seed,
            ..Default::default()
        };
        let r = decode_nucleus(model, &[], &cfg);
        counts[r.ids[0] as usize] += 1;
    }
    tv(&counts, expected, draws)
}

fn tv(counts: &[u64], expected: &[f64], n: u64) -> f64 {
    0.5 * counts
        .iter()
        .zip(expected)
        .map(|(&c, &q)| (c as f64 / n as f64 - q).abs())
        .sum::<f64>()
}

struct Fixed(Vec<f64>);

impl ConditionalSequenceModel for Fixed {
    fn vocab_size(&self) -> usize {
        self.0.len()
    }
    fn eos_id(&self) -> TokenId {
        (self.0.len() - 1) as TokenId
    }
    fn next_token_distribution(&self, _c: &[TokenId], _p: &[TokenId]) -> Vec<f64> {
        self.0.clone()
    }
}

fn decoding_oracles() -> Outcome {
    let start = Instant::now();
    let mut models = 0;
    for v in 2..=4usize {
        for max_len in 1..=4usize {
            for seed in 0..40u64 {
                let m = RandomModel { v, seed: seed * 1000 + (v * 10 + max_len) as u64 };
                for penalty in [0.0, 1.0] {
                    let cfg = DecodeConfig {
                        strategy: Strategy::Beam,
                        beam_width: v.pow(max_len as u32),
                        max_len,
                        length_penalty: penalty,
                        ..Default::default()
                    };
                    let got = decode_beam(&m, &[], &cfg);
                    let (ids, term, logp) = exhaustive_best(&m, max_len, penalty);
                    ensure!(
                        got.ids == ids && got.terminated_by == term && (got.log_probability - logp).abs() <= 1e-12,
                        "|V|={v} max_len={max_len} seed={seed} penalty={penalty}: beam {:?}/{:?} vs exhaustive {ids:?}/{term:?}",
                        got.ids,
                        got.terminated_by
                    );
                    models += 1;
                }
            }
        }
    }

    let probs = [0.5, 0.3, 0.2];
    let expected = [0.5 / 0.8, 0.3 / 0.8, 0.0];
    let nucleus = nucleus_filter(&probs, 0.7);
    let mut kept = vec![0.0; 3];
    for &(id, q) in &nucleus {
        kept[id as usize] = q;
    }
    for (k, e) in kept.iter().zip(&expected) {
        ensure!((k - e).abs() < 1e-12, "nucleus {kept:?}, expected {expected:?}");
    }
    let draws = 100_000u64;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut counts = vec![0u64; 3];
    for _ in 0..draws {
        counts[sample_nucleus(&nucleus, &mut rng) as usize] += 1;
    }
    let tv_sampler = tv(&counts, &expected, draws);
    // Same case through the decoder; EOS carries no mass at the first step.
    let tv_decoder = nucleus_first_token_tv(&Fixed(vec![0.5, 0.3, 0.2, 0.0]), &[0.625, 0.375, 0.0, 0.0], draws);
    ensure!(tv_sampler < 0.01 && tv_decoder < 0.01, "TV sampler {tv_sampler}, decoder {tv_decoder}");
    let t = within(start, 30.0)?;
    Ok(format!(
        "beam = exhaustive on {models} toy cases; nucleus TV {tv_sampler:.4} (sampler) {tv_decoder:.4} (decoder) over 1e5 draws, {t:.2} s"
    ))
}

// 4

fn nll_analytics() -> Outcome {
    let uniform = Fixed(vec![0.1; 10]);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut items = Vec::new();
    let mut worst_tok = 0.0f64;
    for _ in 0..200 {
        let len = rng.random_range(1..8);
        let target: Vec<TokenId> = (0..len).map(|_| rng.random_range(0..10)).collect();
        let nll = sequence_nll(&uniform, &[], &target).map_err(|e| e.to_string())?;
        worst_tok = worst_tok.max((nll / (len + 1) as f64 - 10f64.ln()).abs());
        items.push((Vec::new(), target));
    }
    ensure!(worst_tok <= 1e-12, "per-token NLL off ln 10 by {worst_tok:e}");
    let ppl = corpus_perplexity(&uniform, &items).map_err(|e| e.to_string())?;
    ensure!((ppl - 10.0).abs() <= 1e-9, "uniform perplexity {ppl}");

    // Puts all mass on token (prefix length + 1) until the target length, then EOS.
    struct Certain;
    impl ConditionalSequenceModel for Certain {
        fn vocab_size(&self) -> usize {
            6
        }
        fn eos_id(&self) -> TokenId {
            0
        }
        fn next_token_distribution(&self, _c: &[TokenId], p: &[TokenId]) -> Vec<f64> {
            let mut v = vec![0.0; 6];
            v[if p.len() < 5 { p.len() + 1 } else { 0 }] = 1.0;
            v
        }
    }
    let certain_nll = sequence_nll(&Certain, &[], &[1, 2, 3, 4, 5]).map_err(|e| e.to_string())?;
    ensure!(certain_nll == 0.0, "certainty model NLL {certain_nll}");

    // Direct products under a fitted n-gram model and a random toy model.
    let o = Ontology::builtin();
    let t = TemplateSet::builtin(&o);
    let corpus = generate_synthetic_corpus(&o, &t, 30, 4).map_err(|e| e.to_string())?;
    let ngram = NGramModel::fit(&corpus, 3, &[0.2, 0.3, 0.5]).map_err(|e| e.to_string())?;
    let toy = RandomModel { v: 7, seed: 4 };
    let mut worst_rel = 0.0f64;
    for i in 0..1000 {
        let (model, v): (&dyn ConditionalSequenceModel, usize) = if i % 2 == 0 {
            (&ngram, ngram.vocab().len())
        } else {
            (&toy, 7)
        };
        let condition: Vec<TokenId> = (0..rng.random_range(0..6)).map(|_| rng.random_range(0..v as u32)).collect();
        let target: Vec<TokenId> = (0..rng.random_range(1..6)).map(|_| rng.random_range(0..v as u32)).collect();
        let mut product = 1.0;
        let mut prefix = Vec::new();
        for &w in target.iter().chain(std::iter::once(&model.eos_id())) {
            product *= model.next_token_distribution(&condition, &prefix)[w as usize];
            prefix.push(w);
        }
        if product == 0.0 {
            continue;
        }
        let nll = sequence_nll(model, &condition, &target).map_err(|e| e.to_string())?;
        worst_rel = worst_rel.max(((-nll).exp() - product).abs() / product);
    }
    ensure!(worst_rel <= 1e-12, "exp(-NLL) vs product relative error {worst_rel:e}");
    Ok(format!(
        "uniform per-token NLL err {worst_tok:.1e}, perplexity {ppl}, certainty NLL 0, product rel err {worst_rel:.1e}"
    ))
}

// 5

fn nl(s: &str) -> NLStateDescription {
    NLStateDescription::from_text(s)
}

fn gold(id: &str, state: StructuredState) -> AnnotatedTurnExample {
    AnnotatedTurnExample {
        history: DialogueHistory::from_texts(id, &[(Speaker::User, "hi")]).unwrap(),
        gold_structured: state,
        gold_nl: nl("x"),
    }
}

fn pred(id: &str, state: StructuredState) -> TurnPrediction {
    TurnPrediction::new(TurnKey { dialogue_id: id.into(), turn_index: 0 }, state)
}

fn train_state() -> StructuredState {
    [
        SlotValue::new("train", "departure", "london kings cross"),
        SlotValue::new("train", "destination", "cambridge"),
        SlotValue::new("train", "day", "monday"),
        SlotValue::new("train", "leaveat", "07:00"),
    ]
    .into_iter()
    .collect()
}

fn metric_oracles() -> Outcome {
    let b = bleu(&nl("the the the the"), &nl("the cat is here"), 1).map_err(|e| e.to_string())?;
    ensure!(b == 0.25, "BLEU-1 {b}");
    let r = rouge(&nl("the cat"), &nl("the cat sat"), RougeVariant::R1);
    ensure!((r - 0.8).abs() <= 1e-12, "ROUGE-1 {r}");

    fn e(x: nldst_core::error::Result<f64>) -> Result<f64, String> {
        x.map_err(|e| e.to_string())
    }
    let golds = vec![gold("a", train_state()), gold("b", StructuredState::new())];
    let jga_full = e(joint_goal_accuracy(&[pred("a", train_state()), pred("b", StructuredState::new())], &golds))?;
    let jga_half = e(joint_goal_accuracy(&[pred("a", train_state()), pred("b", train_state())], &golds))?;
    ensure!(jga_full == 100.0 && jga_half == 50.0, "JGA fixtures {jga_full} {jga_half}");

    let mut minus_day = train_state();
    minus_day.remove("train", "day");
    let train_only = Ontology::from_toml(
        r#"
        [domains.train.slots.departure]
        values = ["london kings cross", "cambridge"]
        [domains.train.slots.destination]
        values = ["london kings cross", "cambridge"]
        [domains.train.slots.day]
        values = ["monday", "tuesday"]
        [domains.train.slots.leaveat]
        free = "time"
        samples = ["07:00"]
        "#,
    )
    .map_err(|e| e.to_string())?;
    let one = [gold("a", train_state())];
    let jga_miss = e(joint_goal_accuracy(&[pred("a", minus_day.clone())], &one))?;
    let sa_miss = e(slot_accuracy(&[pred("a", minus_day)], &one, &train_only))?;
    ensure!(jga_miss == 0.0 && sa_miss == 75.0, "missing-slot fixture JGA {jga_miss} SA {sa_miss}");

    let mut ten = String::new();
    for i in 0..10 {
        ten.push_str(&format!("[domains.d.slots.s{i}]\nvalues = [\"x\", \"y\"]\n"));
    }
    let ten = Ontology::from_toml(&ten).map_err(|e| e.to_string())?;
    let g: StructuredState = [SlotValue::new("d", "s0", "x")].into_iter().collect();
    let p: StructuredState = [SlotValue::new("d", "s0", "y")].into_iter().collect();
    let sa_ten = e(slot_accuracy(&[pred("a", p)], &[gold("a", g)], &ten))?;
    ensure!(sa_ten == 90.0, "ten-slot fixture SA {sa_ten}");

    let o = Ontology::builtin();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for set in 0..1000 {
        let n = rng.random_range(1..20);
        let mut golds = Vec::new();
        let mut preds = Vec::new();
        for i in 0..n {
            let id = format!("d{i}");
            let g = sample_state(&o, &mut rng);
            let p = match rng.random_range(0..4) {
                0 => g.clone(),
                1 => sample_state(&o, &mut rng),
                2 => {
                    let mut p = g.clone();
                    if let Some(first) = g.entries().first() {
                        p.remove(&first.domain, &first.slot);
                    }
                    p
                }
                _ => StructuredState::new(),
            };
            golds.push(gold(&id, g));
            preds.push(pred(&id, p));
        }
        let j = e(joint_goal_accuracy(&preds, &golds))?;
        let s = e(slot_accuracy(&preds, &golds, &o))?;
        ensure!(j <= s, "set {set}: JGA {j} > SA {s}");
    }
    Ok("BLEU-1 0.25, ROUGE-1 0.8, fixtures 100/50/0/75/90, JGA <= SA on 1000 random sets".into())
}

// 6

fn noise_trend() -> Outcome {
    let start = Instant::now();
    let mut lines = Vec::new();
    for system in [SystemKind::RuleDst, SystemKind::NgramNl] {
        let mut cfg = load_config("noise_sweep.toml");
        cfg.system = system;
        let out = harness::execute(&cfg).map_err(|e| e.to_string())?;
        let jga: Vec<f64> = out.record.levels.iter().map(|l| l.report.jga).collect();
        let rates: Vec<f64> = out.record.levels.iter().map(|l| l.noise_rate).collect();
        ensure!(rates == [0.0, 0.1, 0.2], "{}: levels {rates:?}", system.as_str());
        ensure!(
            jga.windows(2).all(|w| w[1] <= w[0]) && jga[2] < jga[0],
            "{}: JGA {jga:?} is not a degradation",
            system.as_str()
        );
        lines.push(format!("{} {:.1}/{:.1}/{:.1}", system.as_str(), jga[0], jga[1], jga[2]));
    }
    let t = within(start, 60.0)?;
    Ok(format!("JGA at 0/10/20%: {}, {t:.2} s", lines.join(", ")))
}

// 7

fn ablation() -> Outcome {
    let run = |system| {
        let mut cfg = load_config("ablation.toml");
        cfg.system = system;
        harness::execute(&cfg).map_err(|e| e.to_string())
    };
    let mut outputs = Vec::new();
    for system in [SystemKind::NgramStructuredAblation, SystemKind::NgramNl] {
        let a = run(system)?;
        let b = run(system)?;
        ensure!(
            a.predictions_log == b.predictions_log && a.tables == b.tables,
            "{} differs across repeats",
            system.as_str()
        );
        outputs.push((a, b));
    }
    let records_a: Vec<_> = outputs.iter().map(|(a, _)| a.record.clone()).collect();
    let records_b: Vec<_> = outputs.iter().map(|(_, b)| b.record.clone()).collect();
    ensure!(records_a[0].data.hash == records_a[1].data.hash, "arms saw different data");
    let table = render_report(&records_a, Layout::Ablation).map_err(|e| e.to_string())?;
    let again = render_report(&records_b, Layout::Ablation).map_err(|e| e.to_string())?;
    ensure!(table == again, "ablation table differs across repeats");
    ensure!(table.lines().count() == 4, "expected header, rule and two rows:\n{table}");
    for r in &records_a {
        let rep = &r.baseline_level().report;
        for v in [rep.jga, rep.slot_accuracy] {
            ensure!((0.0..=100.0).contains(&v), "{} score {v} out of range", r.label);
        }
    }
    let scores: Vec<String> = records_a
        .iter()
        .map(|r| format!("{} JGA {:.1}", r.system.as_str(), r.baseline_level().report.jga))
        .collect();
    Ok(format!("two-row table, {}, byte-identical repeats", scores.join(", ")))
}

// 8

fn run_files(out: &RunOutput, raw: &str) -> Result<Vec<(String, Vec<u8>)>, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    harness::write_run(dir.path(), raw, out).map_err(|e| e.to_string())?;
    let mut files = vec![(
        harness::PREDICTIONS_LOG.to_string(),
        fs::read(dir.path().join(harness::PREDICTIONS_LOG)).map_err(|e| e.to_string())?,
    )];
    let tables = dir.path().join(harness::TABLES_DIR);
    let mut names: Vec<_> = fs::read_dir(&tables)
        .map_err(|e| e.to_string())?
        .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    names.sort();
    for n in names {
        let bytes = fs::read(tables.join(&n)).map_err(|e| e.to_string())?;
        files.push((format!("tables/{n}"), bytes));
    }
    Ok(files)
}

/// Canned gold descriptions for every test turn of `cfg`, keyed by request id.
fn gold_responses(cfg: &ExperimentConfig) -> Result<HashMap<String, String>, String> {
    let res = Resources::load(cfg).map_err(|e| e.to_string())?;
    let data = harness::prepare_data(cfg, &res).map_err(|e| e.to_string())?;
    Ok(data
        .test
        .examples
        .iter()
        .map(|e| (request_id(&e.key()), e.gold_nl.text()))
        .collect())
}

fn determinism() -> Outcome {
    let mut names: Vec<String> = fs::read_dir(configs_dir())
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".toml"))
        .collect();
    names.sort();
    ensure!(!names.is_empty(), "no configs found");
    let mut checked = Vec::new();
    for name in &names {
        let path = configs_dir().join(name);
        let raw = fs::read_to_string(&path).map_err(|e| e.to_string())?;
        let mut cfg = ExperimentConfig::load(&path).map_err(|e| e.to_string())?;
        let _stub;
        if cfg.backend.as_ref().is_some_and(|b| b.endpoint.is_some()) {
            let mut probe = cfg.clone();
            probe.backend = None;
            let server = StubServer::start(gold_responses(&probe)?, Duration::ZERO).map_err(|e| e.to_string())?;
            cfg.backend.as_mut().expect("checked").endpoint = Some(server.url().to_string());
            _stub = server;
        }
        let mut files = Vec::new();
        for exec in [ExecSetting::Parallel, ExecSetting::Sequential] {
            cfg.exec = exec;
            let out = harness::execute(&cfg).map_err(|e| format!("{name}: {e}"))?;
            files.push(run_files(&out, &raw)?);
        }
        ensure!(files[0] == files[1], "{name}: outputs differ between executions");
        checked.push(name.trim_end_matches(".toml").to_string());
    }
    Ok(format!(
        "predictions.log and tables byte-identical across two executions (parallel, sequential) for {}",
        checked.join(", ")
    ))
}

// 9

fn hermeticity() -> Outcome {
    let mut cfg = load_config("external_http.toml");
    cfg.corpus.n_dialogues = 30;
    let mut probe = cfg.clone();
    probe.backend = None;
    let canned = gold_responses(&probe)?;
    let n_turns = canned.len();

    // Healthy service: the wire protocol carries the gold descriptions.
    let fast = StubServer::start(canned.clone(), Duration::ZERO).map_err(|e| e.to_string())?;
    let b = cfg.backend.as_mut().expect("config has a backend");
    b.endpoint = Some(fast.url().to_string());
    b.timeout_ms = 5_000;
    let healthy = harness::execute(&cfg).map_err(|e| e.to_string())?;
    let rep = &healthy.record.baseline_level().report;
    ensure!(rep.jga == 100.0 && rep.n_failed == 0, "healthy stub: JGA {} failed {}", rep.jga, rep.n_failed);

    // Stalled service: every attempt times out, is retried, then degrades.
    let slow = StubServer::start(canned, Duration::from_millis(300)).map_err(|e| e.to_string())?;
    let b = cfg.backend.as_mut().expect("config has a backend");
    b.endpoint = Some(slow.url().to_string());
    b.timeout_ms = 50;
    b.max_retries = 1;
    b.backoff_ms = 5;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    cfg.output_dir = dir.path().join("run");
    let raw = cfg.to_toml();
    let record = harness::run_experiment(&cfg, &raw).map_err(|e| e.to_string())?;
    let rep = &record.baseline_level().report;
    ensure!(rep.n_failed == n_turns, "{} of {n_turns} turns flagged as failed", rep.n_failed);
    let log = fs::read_to_string(cfg.output_dir.join(harness::PREDICTIONS_LOG)).map_err(|e| e.to_string())?;
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let empty = v["predicted_entries"].as_array().is_some_and(|a| a.is_empty());
        ensure!(empty && v["error"].is_string(), "degraded turn not recorded as empty with error: {line}");
    }
    let attempts = slow.requests();
    ensure!(attempts == 2 * n_turns, "{attempts} requests for {n_turns} turns with one retry");
    Ok(format!(
        "local stub only: healthy JGA 100.0; stalled stub {n_turns}/{n_turns} turns degraded to empty with errors after {attempts} attempts, run completed"
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        (1, "round-trip identity", round_trip),
        (2, "oracle ceiling", oracle_ceiling),
        (3, "decoding oracles", decoding_oracles),
        (4, "NLL analytics", nll_analytics),
        (5, "metric oracles", metric_oracles),
        (6, "noise trend", noise_trend),
        (7, "ablation coherence", ablation),
        (8, "determinism", determinism),
        (9, "hermeticity", hermeticity),
    ];
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (n, name, f) in criteria {
        if !filter.is_empty() && !filter.contains(&n) {
            continue;
        }
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS criterion {n} ({name}): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {n} ({name}): {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
