use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use derivscope::corpus::ParallelExample;
use derivscope::derivation::{BagOptions, Derivation};
use derivscope::discrim::{self, VectorizeOptions};
use derivscope::exec::Exec;
use derivscope::gateway::{self, BackendConfig, ParseResult, ToyGrammar};
use derivscope::rules;
use derivscope::surface::{self, NegativeClass, UnigramModel};
use derivscope::synth::{self, SynthConfig};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

struct Data {
    corpus: synth::SynthCorpus,
    examples: Vec<ParallelExample>,
    results: Vec<ParseResult>,
    refs: Vec<Derivation>,
    outs: Vec<Derivation>,
}

fn data() -> Data {
    let corpus = synth::generate(
        &ToyGrammar::bundled(),
        &SynthConfig {
            n: 4000,
            seed: 1,
            ..Default::default()
        },
    );
    let (ref_results, _) = gateway::parse_corpus(&corpus.reference, &BackendConfig::toy()).unwrap();
    let (results, _) = gateway::parse_corpus(&corpus.output, &BackendConfig::toy()).unwrap();
    let examples = (0..corpus.reference.len())
        .map(|i| ParallelExample {
            id: i,
            source: corpus.source[i].clone(),
            reference: corpus.reference[i].clone(),
            output: Some(corpus.output[i].clone()),
            model_lp: corpus.scores[i],
        })
        .collect();
    let parsed = |rs: &[ParseResult]| rs.iter().filter_map(|r| r.derivation.clone()).collect::<Vec<_>>();
    Data {
        refs: parsed(&ref_results),
        outs: parsed(&results),
        corpus,
        examples,
        results,
    }
}

fn bench(c: &mut Criterion) {
    let d = data();
    let threads = std::thread::available_parallelism().map_or(4, |n| n.get());

    let mut g = c.benchmark_group("toy_parse");
    g.sample_size(10);
    for (name, workers) in [("sequential", 1), ("parallel", threads)] {
        let config = BackendConfig::toy().with_workers(workers);
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| gateway::parse_corpus(black_box(&d.corpus.output), &config).unwrap())
        });
    }
    g.finish();

    let opts = BagOptions::default();
    let mut g = c.benchmark_group("count_rules");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| rules::count_rules(exec, black_box(&d.refs), &opts))
        });
    }
    g.finish();

    let src: Vec<Vec<String>> = d.examples.iter().map(|e| e.source.clone()).collect();
    let tgt: Vec<Vec<String>> = d.examples.iter().map(|e| e.reference.clone()).collect();
    let (sm, tm) = (UnigramModel::train(&src).unwrap(), UnigramModel::train(&tgt).unwrap());
    let mut g = c.benchmark_group("feature_rows");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                surface::feature_rows(
                    exec,
                    black_box(&d.examples),
                    &d.results,
                    &sm,
                    &tm,
                    NegativeClass::AllUnparseable,
                )
                .unwrap()
            })
        });
    }
    g.finish();

    let v = VectorizeOptions::default();
    let mut g = c.benchmark_group("vectorize");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| discrim::vectorize(exec, black_box(&d.refs), &d.outs, &v).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
