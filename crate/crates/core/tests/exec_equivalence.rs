//! Sequential and parallel execution give identical results.

use derivscope::corpus::ParallelExample;
use derivscope::derivation::{BagOptions, Derivation};
use derivscope::discrim::{self, VectorizeOptions};
use derivscope::exec::Exec;
use derivscope::gateway::{self, BackendConfig, ParseResult, ToyGrammar};
use derivscope::rules;
use derivscope::surface::{self, NegativeClass, UnigramModel};
use derivscope::synth::{self, SynthConfig};

struct Fixture {
    examples: Vec<ParallelExample>,
    results: Vec<ParseResult>,
    refs: Vec<Derivation>,
    outs: Vec<Derivation>,
}

fn fixture() -> Fixture {
    let c = synth::generate(
        &ToyGrammar::bundled(),
        &SynthConfig {
            n: 400,
            seed: 5,
            ..Default::default()
        },
    );
    let (ref_results, _) = gateway::parse_corpus(&c.reference, &BackendConfig::toy().with_workers(1)).unwrap();
    let (results, _) = gateway::parse_corpus(&c.output, &BackendConfig::toy().with_workers(1)).unwrap();
    let examples = (0..c.reference.len())
        .map(|i| ParallelExample {
            id: i,
            source: c.source[i].clone(),
            reference: c.reference[i].clone(),
            output: Some(c.output[i].clone()),
            model_lp: c.scores[i],
        })
        .collect();
    let parsed = |rs: &[ParseResult]| rs.iter().filter_map(|r| r.derivation.clone()).collect::<Vec<_>>();
    Fixture {
        refs: parsed(&ref_results),
        outs: parsed(&results),
        examples,
        results,
    }
}

#[test]
fn worker_count_does_not_change_parse_results() {
    let c = synth::generate(
        &ToyGrammar::bundled(),
        &SynthConfig {
            n: 300,
            seed: 6,
            ..Default::default()
        },
    );
    let (one, _) = gateway::parse_corpus(&c.output, &BackendConfig::toy().with_workers(1)).unwrap();
    let (many, _) = gateway::parse_corpus(&c.output, &BackendConfig::toy().with_workers(8)).unwrap();
    let strip = |rs: Vec<ParseResult>| {
        rs.into_iter()
            .map(|r| (r.id, r.outcome, r.derivation, r.lexentries))
            .collect::<Vec<_>>()
    };
    assert_eq!(strip(one), strip(many));
}

#[test]
fn rule_counts_feature_rows_and_vectors_agree() {
    let f = fixture();
    let opts = BagOptions::default();
    assert_eq!(
        rules::count_rules(Exec::Sequential, &f.refs, &opts),
        rules::count_rules(Exec::Parallel, &f.refs, &opts)
    );

    let src: Vec<Vec<String>> = f.examples.iter().map(|e| e.source.clone()).collect();
    let tgt: Vec<Vec<String>> = f.examples.iter().map(|e| e.reference.clone()).collect();
    let (sm, tm) = (UnigramModel::train(&src).unwrap(), UnigramModel::train(&tgt).unwrap());
    let rows = |exec| {
        surface::feature_rows(exec, &f.examples, &f.results, &sm, &tm, NegativeClass::AllUnparseable)
            .unwrap()
            .0
    };
    assert_eq!(rows(Exec::Sequential), rows(Exec::Parallel));

    let v = VectorizeOptions::default();
    let a = discrim::vectorize(Exec::Sequential, &f.refs, &f.outs, &v).unwrap();
    let b = discrim::vectorize(Exec::Parallel, &f.refs, &f.outs, &v).unwrap();
    assert_eq!(a, b);
}
