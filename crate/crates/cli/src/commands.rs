use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::ArgMatches;

use derivscope::corpus::{self, ParallelExample, SplitSizes, SplitSpec, UnkClasses, Vocabulary};
use derivscope::derivation::{BagOptions, Derivation, RootMap};
use derivscope::discrim::{self, FitOptions, L1Model, RuleDataset, VectorizeOptions};
use derivscope::exec::Exec;
use derivscope::gateway::{self, Backend, BackendConfig, OutcomeSummary, ParseResult, ToyGrammar};
use derivscope::manifest::RunManifest;
use derivscope::rules::{self, RuleTable};
use derivscope::sampling::{self, AnnotationRecord, ContrastCandidate};
use derivscope::surface::{self, FeatureRow, NegativeClass, StatsError, UnigramModel};
use derivscope::synth::{self, SynthConfig};

use crate::{
    AnnotateCmd, BackendArgs, BackendKind, BagArgs, Cli, Cmd, ContrastArgs, CountArgs, DatasetArgs, DiscrimCmd,
    EvalArgs, FilterArgs, FitArgs, Negative, ParseArgs, RatioArgs, ReportArgs, RootsArgs, RulesCmd, SampleCmd,
    StatsCmd, SummarizeArgs, SurfaceArgs, SynthArgs, ToyServeArgs, UnkArgs, UnparseableArgs, UsageError, VocabArgs,
};

/// Effective flag values of the selected subcommand, for the manifest.
pub fn snapshot(matches: &ArgMatches) -> Vec<(String, String)> {
    let mut out = Vec::new();
    let mut m = Some(matches);
    while let Some(cur) = m {
        for id in cur.ids() {
            if let Ok(Some(vals)) = cur.try_get_raw(id.as_str()) {
                let v: Vec<String> = vals.map(|v| v.to_string_lossy().into_owned()).collect();
                out.push((id.to_string(), v.join(" ")));
            }
        }
        m = cur.subcommand().map(|(_, s)| s);
    }
    out.sort();
    out.dedup();
    out
}

struct Run {
    out_dir: PathBuf,
    manifest: RunManifest,
    inputs: Vec<PathBuf>,
}

impl Run {
    fn new(cli: &Cli, command: &str, snapshot: &[(String, String)]) -> Result<Self> {
        fs::create_dir_all(&cli.out_dir)
            .with_context(|| format!("cannot create output directory {}", cli.out_dir.display()))?;
        let config: BTreeMap<String, String> = snapshot.iter().cloned().collect();
        Ok(Self {
            out_dir: cli.out_dir.clone(),
            manifest: RunManifest::start(command, cli.seed, config),
            inputs: Vec::new(),
        })
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        self.manifest
            .add_input(path)
            .with_context(|| format!("cannot read {}", path.display()))?;
        self.inputs.push(path.to_path_buf());
        Ok(())
    }

    fn path(&self, name: impl AsRef<Path>) -> Result<PathBuf> {
        let p = self.out_dir.join(name);
        let same = |a: &Path| match (fs::canonicalize(a), fs::canonicalize(&p)) {
            (Ok(x), Ok(y)) => x == y,
            _ => false,
        };
        if self.inputs.iter().any(|i| same(i)) {
            return Err(UsageError(format!("output {} would overwrite an input", p.display())).into());
        }
        Ok(p)
    }

    fn record(&mut self, path: &Path) -> Result<()> {
        self.manifest
            .add_output(path)
            .with_context(|| format!("cannot read back {}", path.display()))
    }

    fn write(&mut self, name: impl AsRef<Path>, contents: &str) -> Result<PathBuf> {
        let p = self.path(name)?;
        fs::write(&p, contents).with_context(|| format!("cannot write {}", p.display()))?;
        self.record(&p)?;
        Ok(p)
    }

    fn finish(self, stem: &str) -> Result<()> {
        let p = self.out_dir.join(format!("{stem}.manifest.json"));
        self.manifest
            .finish(&p)
            .with_context(|| format!("cannot write {}", p.display()))?;
        Ok(())
    }
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn load_grammar(path: Option<&Path>) -> Result<ToyGrammar> {
    match path {
        None => Ok(ToyGrammar::bundled()),
        Some(p) => ToyGrammar::parse(&read_text(p)?).with_context(|| format!("{}", p.display())),
    }
}

fn backend_config(args: &BackendArgs) -> Result<BackendConfig> {
    let backend = match args.backend {
        BackendKind::Toy => Backend::Toy(Arc::new(load_grammar(args.grammar.as_deref())?)),
        BackendKind::External => {
            let cmd = args
                .cmd
                .as_deref()
                .map(|c| c.split_whitespace().map(String::from).collect::<Vec<_>>())
                .filter(|c| !c.is_empty())
                .ok_or_else(|| UsageError("--backend external needs --cmd".into()))?;
            Backend::External(cmd)
        }
    };
    Ok(BackendConfig::new(backend)
        .with_timeout_ms(args.timeout_ms)
        .with_workers(args.workers)
        .with_pipeline(args.pipeline))
}

fn load_results(path: &Path) -> Result<Vec<ParseResult>> {
    Ok(gateway::read_results(path, &RootMap::default())?)
}

/// Results indexed by sentence: ids must be exactly `0..n`.
fn aligned_results(path: &Path, n: usize) -> Result<Vec<ParseResult>> {
    let results = load_results(path)?;
    let mut slots: Vec<Option<ParseResult>> = vec![None; n];
    for r in results {
        let id = r.id;
        match slots.get_mut(id) {
            Some(slot @ None) => *slot = Some(r),
            Some(Some(_)) => bail!("{}: duplicate result for sentence {id}", path.display()),
            None => bail!("{}: result id {id} is beyond the {n} sentences", path.display()),
        }
    }
    slots
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.with_context(|| format!("{}: no result for sentence {i}", path.display())))
        .collect()
}

fn parseable(results: &[ParseResult]) -> Vec<Derivation> {
    results
        .iter()
        .filter(|r| r.is_parseable())
        .filter_map(|r| r.derivation.clone())
        .collect()
}

fn bag(args: &BagArgs) -> BagOptions {
    BagOptions {
        include_root: args.include_root,
        include_lexical: args.include_lexical,
    }
}

pub fn run(cli: Cli, snapshot: Vec<(String, String)>) -> Result<()> {
    match &cli.command {
        Cmd::Synth(a) => synth_cmd(&cli, &snapshot, a),
        Cmd::FilterCorpus(a) => filter_corpus(&cli, &snapshot, a),
        Cmd::BuildVocab(a) => build_vocab(&cli, &snapshot, a),
        Cmd::ApplyUnk(a) => apply_unk(&cli, &snapshot, a),
        Cmd::Parse(a) => parse(&cli, &snapshot, a),
        Cmd::Stats(StatsCmd::Surface(a)) => stats_surface(&cli, &snapshot, a),
        Cmd::Stats(StatsCmd::Roots(a)) => stats_roots(&cli, &snapshot, a),
        Cmd::Rules(RulesCmd::Count(a)) => rules_count(&cli, &snapshot, a),
        Cmd::Rules(RulesCmd::Ratio(a)) => rules_ratio(&cli, &snapshot, a),
        Cmd::Discrim(DiscrimCmd::Fit(a)) => discrim_fit(&cli, &snapshot, a),
        Cmd::Discrim(DiscrimCmd::Eval(a)) => discrim_eval(&cli, &snapshot, a),
        Cmd::Sample(SampleCmd::Unparseable(a)) => sample_unparseable(&cli, &snapshot, a),
        Cmd::Sample(SampleCmd::RuleContrast(a)) => sample_contrast(&cli, &snapshot, a),
        Cmd::Annotate(AnnotateCmd::Summarize(a)) => summarize(&cli, &snapshot, a),
        Cmd::Report(a) => report(&cli, &snapshot, a),
        Cmd::ToyServe(a) => toy_serve(a),
    }
}

fn synth_cmd(cli: &Cli, snap: &[(String, String)], a: &SynthArgs) -> Result<()> {
    let mut run = Run::new(cli, "synth", snap)?;
    if let Some(g) = &a.grammar {
        run.input(g)?;
    }
    let grammar = load_grammar(a.grammar.as_deref())?;
    let cfg = SynthConfig {
        n: a.n,
        seed: cli.seed,
        fragment_rate: a.fragment_rate,
        noise_rate: a.noise_rate,
        max_height: a.max_height,
    };
    for (name, rate) in [("fragment-rate", cfg.fragment_rate), ("noise-rate", cfg.noise_rate)] {
        if !(0.0..=1.0).contains(&rate) {
            return Err(UsageError(format!("--{name} must lie in [0, 1]")).into());
        }
    }
    let c = synth::generate(&grammar, &cfg);
    for (name, sents) in [
        ("src.txt", &c.source),
        ("ref.txt", &c.reference),
        ("nmt.txt", &c.output),
    ] {
        let p = run.path(name)?;
        corpus::write_sentences(&p, sents)?;
        run.record(&p)?;
    }
    let p = run.path("nmt.scores")?;
    corpus::write_scores(&p, &c.scores)?;
    run.record(&p)?;
    run.manifest.count("sentences", a.n);
    run.finish("synth")
}

fn parse(cli: &Cli, snap: &[(String, String)], a: &ParseArgs) -> Result<()> {
    let config = backend_config(&a.backend)?;
    let mut run = Run::new(cli, "parse", snap)?;
    run.input(&a.input)?;
    let sentences = corpus::read_sentences(&a.input)?;
    let (results, summary) = gateway::parse_corpus(&sentences, &config)?;
    let out = run.path(&a.out)?;
    gateway::write_results(&out, &results, a.record_timings)?;
    run.record(&out)?;
    let rendered = summary.render();
    run.write(format!("{}.summary.txt", file_name(&a.out)), &rendered)?;
    print!("{rendered}");
    run.manifest.count("sentences", sentences.len());
    for o in gateway::ParseOutcome::ALL {
        run.manifest.count(o.as_str(), summary.count(o));
    }
    run.finish(&file_name(&a.out))
}

fn split_spec(text: &str, seed: u64) -> Result<SplitSpec> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    let usage = || {
        UsageError(format!(
            "--split expects `train,valid,analysis` sizes or `train,valid` fractions, got `{text}`"
        ))
    };
    let sizes = match parts.as_slice() {
        [t, v, an] => SplitSizes::Absolute {
            train: t.parse().map_err(|_| usage())?,
            valid: v.parse().map_err(|_| usage())?,
            analysis: an.parse().map_err(|_| usage())?,
        },
        [t, v] => SplitSizes::Fractions {
            train: t.parse().map_err(|_| usage())?,
            valid: v.parse().map_err(|_| usage())?,
        },
        _ => return Err(usage().into()),
    };
    Ok(SplitSpec { sizes, seed })
}

fn filter_corpus(cli: &Cli, snap: &[(String, String)], a: &FilterArgs) -> Result<()> {
    let spec = a.split.as_deref().map(|s| split_spec(s, cli.seed)).transpose()?;
    let config = match &a.parses {
        Some(_) => None,
        None => Some(backend_config(&a.backend)?),
    };
    let mut run = Run::new(cli, "filter-corpus", snap)?;
    run.input(&a.src)?;
    run.input(&a.tgt)?;
    if let Some(p) = &a.parses {
        run.input(p)?;
    }
    let examples = corpus::load_parallel(&a.src, &a.tgt)?;
    run.manifest.flag("empty_lines", corpus::empty_line_ids(&examples));
    let results = match (&a.parses, &config) {
        (Some(p), _) => aligned_results(p, examples.len())?,
        (None, Some(config)) => {
            let refs: Vec<Vec<String>> = examples.iter().map(|e| e.reference.clone()).collect();
            gateway::parse_corpus(&refs, config)?.0
        }
        (None, None) => unreachable!("a backend is configured whenever parses are absent"),
    };
    let by_id: HashMap<usize, ParseResult> = results.into_iter().map(|r| (r.id, r)).collect();
    let (kept, _) = corpus::filter_parseable(&examples, &by_id)?;
    run.manifest.count("input", examples.len());
    run.manifest.count("parseable", kept.len());

    let parts: Vec<(&str, Vec<ParallelExample>)> = match spec {
        None => vec![("filtered", kept)],
        Some(spec) => {
            let s = corpus::split_dataset(&kept, &spec).map_err(|e| UsageError(e.to_string()))?;
            vec![("train", s.train), ("valid", s.valid), ("analysis", s.analysis)]
        }
    };
    for (name, part) in parts {
        let src: Vec<Vec<String>> = part.iter().map(|e| e.source.clone()).collect();
        let tgt: Vec<Vec<String>> = part.iter().map(|e| e.reference.clone()).collect();
        let p = run.path(format!("{name}.src"))?;
        corpus::write_sentences(&p, &src)?;
        run.record(&p)?;
        let p = run.path(format!("{name}.ref"))?;
        corpus::write_sentences(&p, &tgt)?;
        run.record(&p)?;
        let records: Vec<ParseResult> = part
            .iter()
            .enumerate()
            .map(|(i, e)| ParseResult {
                id: i,
                ..by_id[&e.id].clone()
            })
            .collect();
        let p = run.path(format!("{name}.ref.jsonl"))?;
        gateway::write_results(&p, &records, false)?;
        run.record(&p)?;
        run.manifest.count(name, part.len());
    }
    run.finish("filter-corpus")
}

fn build_vocab(cli: &Cli, snap: &[(String, String)], a: &VocabArgs) -> Result<()> {
    if a.max_rank == 0 {
        return Err(UsageError("--max-rank must be at least 1".into()).into());
    }
    let mut run = Run::new(cli, "build-vocab", snap)?;
    let mut all = Vec::new();
    for p in &a.input {
        run.input(p)?;
        let s = corpus::read_sentences(p)?;
        let empty: Vec<usize> = s
            .iter()
            .enumerate()
            .filter(|(_, t)| t.is_empty())
            .map(|(i, _)| i)
            .collect();
        run.manifest.flag(format!("empty_lines:{}", file_name(p)), empty);
        all.extend(s);
    }
    let vocab = corpus::build_vocab(&all, a.max_rank);
    let p = run.path(&a.out)?;
    vocab.write_tsv(&p)?;
    run.record(&p)?;
    run.manifest.count("sentences", all.len());
    run.manifest.count("vocabulary", vocab.len());
    run.finish(&file_name(&a.out))
}

fn apply_unk(cli: &Cli, snap: &[(String, String)], a: &UnkArgs) -> Result<()> {
    let mut run = Run::new(cli, "apply-unk", snap)?;
    run.input(&a.input)?;
    run.input(&a.vocab)?;
    let sentences = corpus::read_sentences(&a.input)?;
    let vocab = Vocabulary::read_tsv(&a.vocab)?;
    let out: Vec<Vec<String>> = if a.typed {
        let parses = a.parses.as_ref().expect("clap requires --parses with --typed");
        run.input(parses)?;
        let results = aligned_results(parses, sentences.len())?;
        let classes = UnkClasses::new(a.classes.split(',').map(str::trim).filter(|c| !c.is_empty()));
        sentences
            .iter()
            .zip(&results)
            .map(|(s, r)| {
                let les: Vec<Option<String>> = match &r.lexentries {
                    Some(l) if r.is_parseable() && l.len() == s.len() => l.iter().cloned().map(Some).collect(),
                    _ => vec![None; s.len()],
                };
                corpus::apply_typed_target_unk(s, &vocab, &les, &classes)
            })
            .collect()
    } else {
        sentences.iter().map(|s| corpus::apply_source_unk(s, &vocab)).collect()
    };
    let replaced: usize = sentences
        .iter()
        .zip(&out)
        .map(|(a, b)| a.iter().zip(b).filter(|(x, y)| x != y).count())
        .sum();
    let p = run.path(&a.out)?;
    corpus::write_sentences(&p, &out)?;
    run.record(&p)?;
    run.manifest.count("sentences", sentences.len());
    run.manifest.count("replaced_tokens", replaced);
    run.finish(&file_name(&a.out))
}

fn stats_surface(cli: &Cli, snap: &[(String, String)], a: &SurfaceArgs) -> Result<()> {
    let mut run = Run::new(cli, "stats surface", snap)?;
    for p in [&a.src, &a.reference, &a.nmt, &a.scores, &a.nmt_parses] {
        run.input(p)?;
    }
    for p in [&a.train_src, &a.train_ref].into_iter().flatten() {
        run.input(p)?;
    }
    let mut examples = corpus::load_parallel(&a.src, &a.reference)?;
    let outputs = corpus::read_sentences(&a.nmt)?;
    let scores = corpus::read_scores(&a.scores)?;
    corpus::attach_outputs(&mut examples, outputs, Some(scores))?;
    let results = aligned_results(&a.nmt_parses, examples.len())?;

    let train = |p: &Option<PathBuf>, fallback: &dyn Fn(&ParallelExample) -> Vec<String>| -> Result<UnigramModel> {
        let sents = match p {
            Some(p) => corpus::read_sentences(p)?,
            None => examples.iter().map(fallback).collect(),
        };
        Ok(UnigramModel::train(&sents)?)
    };
    let src_model = train(&a.train_src, &|e| e.source.clone()).context("source unigram model")?;
    let tgt_model = train(&a.train_ref, &|e| e.reference.clone()).context("target unigram model")?;
    let coding = match a.negative {
        Negative::All => NegativeClass::AllUnparseable,
        Negative::Exhausted => NegativeClass::ExhaustedOnly,
    };
    let (rows, skipped) = surface::feature_rows(Exec::default(), &examples, &results, &src_model, &tgt_model, coding)?;
    let report = surface::correlation_report(&rows)?;

    let mut features = format!("{}\n", FeatureRow::TSV_HEADER);
    for r in &rows {
        features.push_str(&r.to_tsv());
        features.push('\n');
    }
    run.write(&a.out, &features)?;
    run.write("table2_correlations.tsv", &report.to_tsv())?;

    let mut by_reason: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for e in &skipped {
        let (reason, id) = match e {
            StatsError::MissingOutput(id) => ("missing_output", *id),
            StatsError::MissingScore(id) => ("missing_score", *id),
            StatsError::ExcludedOutcome(id, _) => ("excluded_outcome", *id),
            other => bail!("unexpected feature error: {other}"),
        };
        by_reason.entry(reason).or_default().push(id);
    }
    for (reason, ids) in by_reason {
        run.manifest.flag(reason, ids);
    }
    run.manifest.count("examples", examples.len());
    run.manifest.count("feature_rows", rows.len());
    run.finish(&file_name(&a.out))
}

fn stats_roots(cli: &Cli, snap: &[(String, String)], a: &RootsArgs) -> Result<()> {
    let mut run = Run::new(cli, "stats roots", snap)?;
    run.input(&a.reference)?;
    run.input(&a.nmt)?;
    let refs = parseable(&load_results(&a.reference)?);
    let nmt = load_results(&a.nmt)?;
    let table = surface::root_distribution(&refs, &nmt)?;
    run.write(&a.out, &table.to_tsv())?;
    run.manifest.count("reference_derivations", refs.len());
    run.manifest.count("output_results", nmt.len());
    run.finish(&file_name(&a.out))
}

fn rules_count(cli: &Cli, snap: &[(String, String)], a: &CountArgs) -> Result<()> {
    let mut run = Run::new(cli, "rules count", snap)?;
    run.input(&a.parses)?;
    let derivs = parseable(&load_results(&a.parses)?);
    let counts = rules::count_rules(Exec::default(), &derivs, &bag(&a.bag));
    run.write(&a.out, &rules::counts_tsv(&counts))?;
    run.manifest.count("derivations", derivs.len());
    run.manifest.count("rules", counts.len());
    run.finish(&file_name(&a.out))
}

fn read_counts(path: &Path) -> Result<derivscope::derivation::RuleBag> {
    rules::parse_counts_tsv(&read_text(path)?).with_context(|| path.display().to_string())
}

fn rules_ratio(cli: &Cli, snap: &[(String, String)], a: &RatioArgs) -> Result<()> {
    if a.bucket_size < 2 {
        return Err(UsageError("--bucket-size must be at least 2".into()).into());
    }
    let mut run = Run::new(cli, "rules ratio", snap)?;
    run.input(&a.ref_counts)?;
    run.input(&a.nmt_counts)?;
    let table = RuleTable::new(&read_counts(&a.ref_counts)?, &read_counts(&a.nmt_counts)?);
    let points = rules::ratio_table(&table, a.min_ref_count);
    let buckets = rules::ratio_dispersion(&points, a.bucket_size)?;
    run.write("fig3_ratio.tsv", &rules::ratio_tsv(&points))?;
    run.write("fig2_topk.tsv", &rules::top_k_tsv(&table, a.top_k))?;
    run.write("ratio_dispersion.tsv", &rules::dispersion_tsv(&buckets))?;
    run.manifest.count("rules", table.rows.len());
    run.manifest.count("ratio_points", points.len());
    run.finish("rules-ratio")
}

fn dataset(run: &mut Run, a: &DatasetArgs, seed: u64) -> Result<(RuleDataset, RuleDataset)> {
    run.input(&a.reference)?;
    run.input(&a.nmt)?;
    let refs = parseable(&load_results(&a.reference)?);
    let nmt = parseable(&load_results(&a.nmt)?);
    let opts = VectorizeOptions {
        bag: bag(&a.bag),
        binary: a.binary,
    };
    let data = discrim::vectorize(Exec::default(), &refs, &nmt, &opts)?;
    run.manifest.count("reference_rows", refs.len());
    run.manifest.count("output_rows", nmt.len());
    run.manifest.count("features", data.n_features());
    discrim::split_train_val(&data, a.train_fraction, seed).map_err(|e| UsageError(e.to_string()).into())
}

fn discrim_fit(cli: &Cli, snap: &[(String, String)], a: &FitArgs) -> Result<()> {
    let mut run = Run::new(cli, "discrim fit", snap)?;
    let (train, _) = dataset(&mut run, &a.data, cli.seed)?;
    let opts = FitOptions {
        c: a.c,
        tol: a.tol,
        max_iter: a.max_iter,
    };
    let model = discrim::fit(&train, &opts)?;
    run.write(&a.out, &model.to_tsv())?;
    let mut trace = String::from("iteration\tobjective\n");
    for (i, o) in model.trace.iter().enumerate() {
        trace.push_str(&format!("{i}\t{o}\n"));
    }
    run.write(a.out.with_extension("trace.tsv"), &trace)?;
    println!(
        "{} of {} rules nonzero after {} sweeps{}",
        model.nonzero(),
        model.features.len(),
        model.iterations,
        if model.converged {
            ""
        } else {
            " (iteration cap reached)"
        }
    );
    run.manifest.count("train_rows", train.len());
    run.manifest.count("nonzero_weights", model.nonzero());
    run.finish(&file_name(&a.out))
}

fn load_model(path: &Path) -> Result<L1Model> {
    L1Model::from_tsv(&read_text(path)?).with_context(|| path.display().to_string())
}

fn load_descriptions(run: &mut Run, path: Option<&Path>) -> Result<Option<HashMap<String, String>>> {
    let Some(p) = path else { return Ok(None) };
    run.input(p)?;
    Ok(Some(
        discrim::parse_descriptions(&read_text(p)?).with_context(|| p.display().to_string())?,
    ))
}

fn discrim_eval(cli: &Cli, snap: &[(String, String)], a: &EvalArgs) -> Result<()> {
    let mut run = Run::new(cli, "discrim eval", snap)?;
    run.input(&a.model)?;
    let model = load_model(&a.model)?;
    let descriptions = load_descriptions(&mut run, a.descriptions.as_deref())?;
    let (_, val) = dataset(&mut run, &a.data, cli.seed)?;
    let e = discrim::evaluate(&model, &val)?;
    let text = format!("n\taccuracy\tbaseline\n{}\t{:.6}\t{:.6}\n", e.n, e.accuracy, e.baseline);
    run.write("eval.tsv", &text)?;
    run.write(
        "table3_discriminative.tsv",
        &discrim::discriminative_tsv(&model, a.top_k, descriptions.as_ref()),
    )?;
    println!(
        "validation accuracy {:.1}% (majority baseline {:.1}%, n = {})",
        100.0 * e.accuracy,
        100.0 * e.baseline,
        e.n
    );
    run.finish("discrim-eval")
}

fn sample_unparseable(cli: &Cli, snap: &[(String, String)], a: &UnparseableArgs) -> Result<()> {
    let mut run = Run::new(cli, "sample unparseable", snap)?;
    run.input(&a.nmt)?;
    run.input(&a.nmt_parses)?;
    let outputs = corpus::read_sentences(&a.nmt)?;
    let results = aligned_results(&a.nmt_parses, outputs.len())?;
    let s = sampling::sample_exhaustive_unparseable(&results, &outputs, a.max_words, a.n, cli.seed)?;
    if s.short {
        eprintln!(
            "warning: only {} sentences qualify, fewer than the {} requested",
            s.pool, a.n
        );
    }
    let records: Vec<AnnotationRecord> = s
        .items
        .iter()
        .map(|(id, text)| AnnotationRecord::blank(*id, text.clone()))
        .collect();
    let mut buf = Vec::new();
    sampling::write_annotations(&mut buf, &records, true)?;
    run.write(&a.out, &String::from_utf8(buf).expect("annotation text is UTF-8"))?;
    run.manifest.count("pool", s.pool);
    run.manifest.count("sampled", s.items.len());
    run.finish(&file_name(&a.out))
}

fn sample_contrast(cli: &Cli, snap: &[(String, String)], a: &ContrastArgs) -> Result<()> {
    let mut run = Run::new(cli, "sample rule-contrast", snap)?;
    for p in [&a.src, &a.reference, &a.nmt, &a.ref_parses, &a.nmt_parses] {
        run.input(p)?;
    }
    let mut examples = corpus::load_parallel(&a.src, &a.reference)?;
    corpus::attach_outputs(&mut examples, corpus::read_sentences(&a.nmt)?, None)?;
    let refs = aligned_results(&a.ref_parses, examples.len())?;
    let nmt = aligned_results(&a.nmt_parses, examples.len())?;
    let candidates: Vec<ContrastCandidate<'_>> = examples
        .iter()
        .zip(&refs)
        .zip(&nmt)
        .filter_map(|((example, r), output)| {
            Some(ContrastCandidate {
                example,
                reference: r.derivation.as_ref().filter(|_| r.is_parseable())?,
                output,
            })
        })
        .collect();
    let s = sampling::sample_rule_contrast(&a.rule, &candidates, &bag(&a.bag), a.max_len, a.n, cli.seed)?;
    if s.short {
        eprintln!(
            "warning: only {} pairs qualify, fewer than the {} requested",
            s.pool, a.n
        );
    }
    run.write(&a.out, &sampling::contrast_tsv(&s.items))?;
    run.manifest.count("pool", s.pool);
    run.manifest.count("sampled", s.items.len());
    run.finish(&file_name(&a.out))
}

fn summarize(cli: &Cli, snap: &[(String, String)], a: &SummarizeArgs) -> Result<()> {
    let mut run = Run::new(cli, "annotate summarize", snap)?;
    run.input(&a.input)?;
    let f = fs::File::open(&a.input).with_context(|| format!("cannot read {}", a.input.display()))?;
    let records = sampling::read_annotations(io::BufReader::new(f)).with_context(|| a.input.display().to_string())?;
    let summary = sampling::summarize_grammaticality(&records).with_context(|| a.input.display().to_string())?;
    let text = summary.to_string();
    run.write(&a.out, &text)?;
    print!("{text}");
    run.finish(&file_name(&a.out))
}

fn read_features(path: &Path) -> Result<Vec<FeatureRow>> {
    let text = read_text(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(FeatureRow::TSV_HEADER) {
        bail!(
            "{}: line 1: expected header `{}`",
            path.display(),
            FeatureRow::TSV_HEADER.replace('\t', " ")
        );
    }
    lines
        .enumerate()
        .map(|(i, l)| FeatureRow::from_tsv(l).map_err(|m| anyhow::anyhow!("{}: line {}: {m}", path.display(), i + 2)))
        .collect()
}

fn report(cli: &Cli, snap: &[(String, String)], a: &ReportArgs) -> Result<()> {
    let mut run = Run::new(cli, "report", snap)?;
    for p in [&a.ref_parses, &a.nmt_parses, &a.features, &a.model] {
        run.input(p)?;
    }
    let descriptions = load_descriptions(&mut run, a.descriptions.as_deref())?;
    let ref_results = load_results(&a.ref_parses)?;
    let nmt_results = load_results(&a.nmt_parses)?;
    if nmt_results.is_empty() {
        bail!("{}: no parse results to analyse", a.nmt_parses.display());
    }
    let refs = parseable(&ref_results);
    let nmt = parseable(&nmt_results);

    // Everything is computed before anything is written.
    let table1 = surface::root_distribution(&refs, &nmt_results)?.to_tsv();
    let table2 = surface::correlation_report(&read_features(&a.features)?)
        .with_context(|| a.features.display().to_string())?
        .to_tsv();
    let model = load_model(&a.model)?;
    let table3 = discrim::discriminative_tsv(&model, a.top_k, descriptions.as_ref());
    let opts = bag(&a.bag);
    let table = RuleTable::new(
        &rules::count_rules(Exec::default(), &refs, &opts),
        &rules::count_rules(Exec::default(), &nmt, &opts),
    );
    let fig2 = rules::top_k_tsv(&table, a.top_k);
    let fig3 = rules::ratio_tsv(&rules::ratio_table(&table, a.min_ref_count));
    let outcomes = OutcomeSummary::from_results(&nmt_results);
    let summary = format!(
        "reference derivations\t{}\noutput parse outcomes\n{}",
        refs.len(),
        outcomes.render()
    );

    for (name, text) in [
        ("table1_roots.tsv", &table1),
        ("table2_correlations.tsv", &table2),
        ("table3_discriminative.tsv", &table3),
        ("fig2_topk.tsv", &fig2),
        ("fig3_ratio.tsv", &fig3),
        ("summary.txt", &summary),
    ] {
        run.write(name, text)?;
    }
    run.manifest.count("reference_derivations", refs.len());
    run.manifest.count("output_results", nmt_results.len());
    run.finish("report")
}

fn toy_serve(a: &ToyServeArgs) -> Result<()> {
    let grammar = load_grammar(a.grammar.as_deref())?;
    gateway::serve_toy(&grammar, &RootMap::default(), io::stdin().lock(), io::stdout().lock())?;
    Ok(())
}
