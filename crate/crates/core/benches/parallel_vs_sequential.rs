use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use nldst_core::backend::{Backend, BackendKind, BackendSpec, OutputMode};
use nldst_core::canonicalizer::canonicalize;
use nldst_core::decoding::DecodeConfig;
use nldst_core::harness::{Resources, System};
use nldst_core::lm::NGramModel;
use nldst_core::metrics::evaluate;
use nldst_core::parallel::{self, ExecMode};
use nldst_core::synthetic::{generate_synthetic_corpus, sample_state};
use nldst_core::verbalizer::verbalize;

const MODES: [(&str, ExecMode); 2] = [("sequential", ExecMode::Sequential), ("parallel", ExecMode::Parallel)];

fn round_trip(c: &mut Criterion) {
    let res = Resources::builtin();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let states: Vec<_> = (0..5_000).map(|_| sample_state(&res.ontology, &mut rng)).collect();
    let mut g = c.benchmark_group("round_trip_5000");
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                parallel::map(mode, &states, |s| {
                    let d = verbalize(s, &res.templates).expect("valid state");
                    canonicalize(&d, &res.ontology, &res.state_rules) == *s
                })
            })
        });
    }
    g.finish();
}

fn rule_dst_and_metrics(c: &mut Criterion) {
    let res = Resources::builtin();
    let corpus = generate_synthetic_corpus(&res.ontology, &res.templates, 2_000, 2).expect("corpus");
    let system = System::RuleDst(res.clone());
    let decode = DecodeConfig::default();
    let preds = system.predict(&corpus.examples, &decode, 2, ExecMode::Sequential);

    let mut g = c.benchmark_group("rule_dst_predict");
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| system.predict(&corpus.examples, &decode, 2, mode))
        });
    }
    g.finish();

    let mut g = c.benchmark_group("evaluate");
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| evaluate(&preds, &corpus.examples, &res.ontology, mode).expect("aligned"))
        });
    }
    g.finish();
}

fn ngram_decode(c: &mut Criterion) {
    let res = Resources::builtin();
    let corpus = generate_synthetic_corpus(&res.ontology, &res.templates, 300, 3).expect("corpus");
    let (train, test) = corpus.examples.split_at(corpus.len() * 9 / 10);
    let train = nldst_core::model::Corpus::new("bench", nldst_core::model::Split::Train, train.to_vec());
    let model = NGramModel::fit(&train, 4, &[0.1, 0.2, 0.3, 0.4]).expect("model");
    let backend = Backend::bind(
        BackendSpec::new(BackendKind::NgramLocal, OutputMode::NaturalLanguage),
        res.interpretation(),
        test,
        Some(Arc::new(model)),
    )
    .expect("backend");
    let system = System::Backend(backend);
    let decode = DecodeConfig { max_len: 30, ..Default::default() };

    let mut g = c.benchmark_group("ngram_beam_predict");
    g.sample_size(10);
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| system.predict(test, &decode, 3, mode))
        });
    }
    g.finish();
}

criterion_group!(benches, round_trip, rule_dst_and_metrics, ngram_decode);
criterion_main!(benches);
