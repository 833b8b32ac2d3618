//! Command-line front end: config-driven poisoning, training, evaluation,
//! defense, quality scoring, and rate sweeps.
//!
//! Exit codes: 0 success, 1 config error, 2 data error, 3 external-service
//! error. Errors print as a single machine-parsable line on stderr.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use backdoor_lab::corpus::{load_dataset, save_dataset, Dataset, FileFormat, Split};
use backdoor_lab::defense::{defend_dataset, BackTranslationClient, Defense, OnionConfig};
use backdoor_lab::detect::Lexicons;
use backdoor_lab::error::Error;
use backdoor_lab::evaluate::{
    reference_rows, run_experiment, sweep_rates, ExperimentConfig, REPORT_SCHEMA_VERSION,
};
use backdoor_lab::ngram_lm::{default_interpolation, NgramLM};
use backdoor_lab::poison::{
    build_poisoned_test, build_poisoned_train, GeneratorBackend, GeneratorClient, GeneratorMode,
    PoisonPlan, PrecomputedPairs, Rewriter,
};
use backdoor_lab::quality::{
    default_category_map, quality_compare, rows_to_markdown, GrammarClient,
};
use backdoor_lab::runconfig::{Resolved, RunConfig};
use backdoor_lab::util::write_atomic;
use backdoor_lab::victim::{save_model, train};

#[derive(Parser)]
#[command(name = "backdoor-lab", version, about = "Textual backdoor attack/defense laboratory")]
struct Cli {
    /// TOML run configuration; flags below override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Preset defaults: sst2, olid, or agnews.
    #[arg(long, global = true)]
    profile: Option<String>,

    /// Validate the configuration and exit without side effects.
    #[arg(long, global = true)]
    dry_run: bool,

    #[arg(long, global = true)]
    seed: Option<u64>,

    #[arg(long, global = true)]
    rate: Option<f64>,

    #[arg(long, global = true)]
    target_label: Option<String>,

    /// Trigger kind: none, rare_word, fixed_sentence, dual_trigger, subjunctive_only.
    #[arg(long, global = true)]
    trigger: Option<String>,

    #[arg(long, global = true)]
    payload: Option<String>,

    /// Insertion position: random, begin, middle, end.
    #[arg(long, global = true)]
    position: Option<String>,

    /// Rewrite generator: native, external, precomputed.
    #[arg(long, global = true)]
    generator: Option<String>,

    #[arg(long, global = true)]
    epochs: Option<usize>,

    #[arg(long, global = true)]
    train_file: Option<PathBuf>,

    #[arg(long, global = true)]
    test_file: Option<PathBuf>,

    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// Comma-separated sweep rates, e.g. 0,0.1,0.3.
    #[arg(long, global = true, value_delimiter = ',')]
    rates: Option<Vec<f64>>,

    /// Comma-separated defenses: onion, syntactic_alteration, back_translation.
    #[arg(long, global = true, value_delimiter = ',')]
    defenses: Option<Vec<String>>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write poisoned train and test splits.
    Poison,
    /// Train the victim classifier on the configured train split.
    Train,
    /// Run the full attack pipeline and write an evaluation report.
    Evaluate,
    /// Apply the configured defenses and write defended sets plus a report.
    Defend,
    /// Score poisoned-data quality against the originals.
    Quality,
    /// Run one experiment per poisoning rate and write the series.
    Sweep,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        let code = exit_code(&e);
        eprintln!("error code={} msg={:?}", code, e.to_string());
        std::process::exit(code);
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 1,
        Error::Transport(_) => 3,
        Error::Stage { source, .. } => exit_code(source),
        _ => 2,
    }
}

struct Ctx {
    cfg: RunConfig,
    resolved: Resolved,
    out_dir: PathBuf,
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(profile) = &cli.profile {
        cfg.apply_profile(profile)?;
    }
    apply_overrides(&mut cfg, &cli);
    cfg.apply_env();

    let resolved = cfg.validate(true)?;
    if cli.dry_run {
        println!("config ok");
        return Ok(());
    }
    let out_dir = cfg
        .paths
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let ctx = Ctx {
        cfg,
        resolved,
        out_dir,
    };
    match cli.command {
        Command::Poison => cmd_poison(&ctx),
        Command::Train => cmd_train(&ctx),
        Command::Evaluate => cmd_evaluate(&ctx),
        Command::Defend => cmd_defend(&ctx),
        Command::Quality => cmd_quality(&ctx),
        Command::Sweep => cmd_sweep(&ctx),
    }
}

fn apply_overrides(cfg: &mut RunConfig, cli: &Cli) {
    if let Some(v) = cli.seed {
        cfg.seed = Some(v);
    }
    if let Some(v) = cli.rate {
        cfg.plan.rate = v;
    }
    if let Some(v) = &cli.target_label {
        cfg.plan.target_label = v.clone();
    }
    if let Some(v) = &cli.trigger {
        cfg.trigger.kind = v.clone();
    }
    if let Some(v) = &cli.payload {
        cfg.trigger.payload = Some(v.clone());
    }
    if let Some(v) = &cli.position {
        cfg.trigger.position = v.clone();
    }
    if let Some(v) = &cli.generator {
        cfg.trigger.generator = v.clone();
    }
    if let Some(v) = cli.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = &cli.train_file {
        cfg.paths.train = Some(v.clone());
    }
    if let Some(v) = &cli.test_file {
        cfg.paths.test = Some(v.clone());
    }
    if let Some(v) = &cli.out_dir {
        cfg.paths.out_dir = Some(v.clone());
    }
    if let Some(v) = &cli.rates {
        cfg.sweep.rates = v.clone();
    }
    if let Some(v) = &cli.defenses {
        cfg.defense.list = v.clone();
    }
}

fn format_of(path: &Path) -> FileFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some("tsv") => FileFormat::Tsv,
        _ => FileFormat::Jsonl,
    }
}

fn load_split(ctx: &Ctx, which: &str) -> Result<Dataset, Error> {
    let (path, split) = match which {
        "train" => (&ctx.cfg.paths.train, Split::Train),
        _ => (&ctx.cfg.paths.test, Split::Test),
    };
    let path = path
        .as_ref()
        .ok_or_else(|| Error::Config(vec![format!("paths.{which} is required for this command")]))?;
    load_dataset(path, format_of(path), &ctx.resolved.label_space, split)
}

fn plan_for(ctx: &Ctx, d: &Dataset) -> Result<PoisonPlan, Error> {
    let target = d
        .label_space
        .index_of(&ctx.resolved.target_label)
        .ok_or_else(|| {
            Error::Contract(format!(
                "target label {:?} missing from the dataset's label space",
                ctx.resolved.target_label
            ))
        })?;
    Ok(PoisonPlan {
        rate: ctx.resolved.rate,
        target_label: target,
        seed: ctx.resolved.seed,
        exclude_target_class_in_test: ctx.resolved.exclude_target_class_in_test,
    })
}

fn rewriter_for(ctx: &Ctx) -> Result<Rewriter, Error> {
    let lexicons = match &ctx.cfg.paths.lexicons {
        Some(path) => Lexicons::from_file(path)?,
        None => Lexicons::default(),
    };
    let backend = match ctx.resolved.spec.generator {
        GeneratorMode::NativeTemplates => GeneratorBackend::Native,
        GeneratorMode::ExternalHttp => {
            let client = match &ctx.cfg.endpoints.generator {
                Some(url) => GeneratorClient::new(url.clone()),
                None => GeneratorClient::local_default(),
            };
            GeneratorBackend::External(client)
        }
        GeneratorMode::PrecomputedFile => {
            let path = ctx.cfg.paths.pairs.as_ref().expect("validated");
            GeneratorBackend::Precomputed(PrecomputedPairs::load(path)?)
        }
    };
    Ok(Rewriter { lexicons, backend })
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let mut body = serde_json::to_string_pretty(value).expect("report serializes");
    body.push('\n');
    write_atomic(path, body.as_bytes())
}

fn cmd_poison(ctx: &Ctx) -> Result<(), Error> {
    let d_train = load_split(ctx, "train")?;
    let plan = plan_for(ctx, &d_train)?;
    let rewriter = rewriter_for(ctx)?;
    let mixed = build_poisoned_train(&d_train, &ctx.resolved.spec, &plan, &rewriter)?;
    save_dataset(&mixed, ctx.out_dir.join("poisoned_train.jsonl"))?;
    if ctx.cfg.paths.test.is_some() {
        let d_test = load_split(ctx, "test")?;
        let poisoned = build_poisoned_test(&d_test, &ctx.resolved.spec, &plan, &rewriter)?;
        save_dataset(&poisoned, ctx.out_dir.join("poisoned_test.jsonl"))?;
    }
    println!(
        "poisoned {} of {} train samples",
        mixed.samples.iter().filter(|s| s.is_poisoned()).count(),
        mixed.len()
    );
    Ok(())
}

fn cmd_train(ctx: &Ctx) -> Result<(), Error> {
    let d_train = load_split(ctx, "train")?;
    let model = train(&d_train, &ctx.resolved.hasher, &ctx.resolved.train)?;
    let path = ctx.out_dir.join("model.json");
    save_model(&model, &path)?;
    println!("model written to {}", path.display());
    Ok(())
}

fn cmd_evaluate(ctx: &Ctx) -> Result<(), Error> {
    let d_train = load_split(ctx, "train")?;
    let d_test = load_split(ctx, "test")?;
    let report = if ctx.resolved.benign {
        // no trigger: train on the clean split, report accuracy only
        let model = train(&d_train, &ctx.resolved.hasher, &ctx.resolved.train)
            .map_err(Error::stage("train"))?;
        let acc =
            backdoor_lab::evaluate::cacc(&model, &d_test).map_err(Error::stage("evaluate"))?;
        backdoor_lab::evaluate::EvalReport {
            schema_version: REPORT_SCHEMA_VERSION,
            cacc: Some(acc),
            asr: None,
            n_clean: d_test.len(),
            n_poison: 0,
            fingerprint: String::new(),
            defenses: Vec::new(),
            reference: reference_rows(),
        }
    } else {
        let plan = plan_for(ctx, &d_train)?;
        let rewriter = rewriter_for(ctx)?;
        let exp = ExperimentConfig {
            spec: ctx.resolved.spec.clone(),
            plan,
            train: ctx.resolved.train.clone(),
            hasher: ctx.resolved.hasher.clone(),
            defenses: ctx.resolved.defenses.clone(),
        };
        let mut report = run_experiment(&d_train, &d_test, &exp, &rewriter)?;
        report.reference = reference_rows();
        report
    };
    write_json(&ctx.out_dir.join("report.json"), &report)?;
    write_atomic(&ctx.out_dir.join("report.md"), report.to_markdown().as_bytes())?;
    println!(
        "cacc={} asr={}",
        report.cacc.map(|v| format!("{v:.4}")).unwrap_or_default(),
        report.asr.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into())
    );
    Ok(())
}

fn cmd_defend(ctx: &Ctx) -> Result<(), Error> {
    if ctx.resolved.defenses.is_empty() {
        return Err(Error::Config(vec![
            "defend needs at least one defense in defense.list".into(),
        ]));
    }
    let d_train = load_split(ctx, "train")?;
    let d_test = load_split(ctx, "test")?;
    let rewriter = rewriter_for(ctx)?;

    // per-sample transcripts of each defense over the clean test split
    let mut reports = Vec::new();
    for choice in &ctx.resolved.defenses {
        let report = match choice {
            backdoor_lab::evaluate::DefenseChoice::Onion {
                percentile,
                max_removals,
            } => {
                let texts: Vec<String> =
                    d_train.samples.iter().map(|s| s.text.clone()).collect();
                let lm = NgramLM::fit(&texts, 3, default_interpolation(3))?;
                let threshold =
                    backdoor_lab::defense::calibrate_onion_threshold(&lm, &d_train, *percentile)?;
                let cfg = OnionConfig {
                    lm: &lm,
                    threshold,
                    max_removals: *max_removals,
                };
                defend_dataset(&d_test, &Defense::Onion(cfg)).1
            }
            backdoor_lab::evaluate::DefenseChoice::SyntacticAlteration => {
                defend_dataset(&d_test, &Defense::SyntacticAlteration(&rewriter.lexicons)).1
            }
            backdoor_lab::evaluate::DefenseChoice::BackTranslation { endpoint } => {
                let client = endpoint.as_ref().map(|e| BackTranslationClient::new(e.clone()));
                defend_dataset(&d_test, &Defense::BackTranslation(client.as_ref())).1
            }
        };
        reports.push(report);
    }
    write_json(&ctx.out_dir.join("defense_report.json"), &reports)?;

    // re-evaluation under each defense
    let plan = plan_for(ctx, &d_train)?;
    let exp = ExperimentConfig {
        spec: ctx.resolved.spec.clone(),
        plan,
        train: ctx.resolved.train.clone(),
        hasher: ctx.resolved.hasher.clone(),
        defenses: ctx.resolved.defenses.clone(),
    };
    let mut report = run_experiment(&d_train, &d_test, &exp, &rewriter)?;
    report.reference = reference_rows();
    write_json(&ctx.out_dir.join("report.json"), &report)?;
    write_atomic(&ctx.out_dir.join("report.md"), report.to_markdown().as_bytes())?;
    println!("defenses evaluated: {}", report.defenses.len());
    Ok(())
}

fn cmd_quality(ctx: &Ctx) -> Result<(), Error> {
    let d_train = load_split(ctx, "train")?;
    let d_test = load_split(ctx, "test")?;
    let plan = plan_for(ctx, &d_train)?;
    let rewriter = rewriter_for(ctx)?;
    let poisoned = build_poisoned_test(&d_test, &ctx.resolved.spec, &plan, &rewriter)?;

    let texts: Vec<String> = d_train.samples.iter().map(|s| s.text.clone()).collect();
    let lm = NgramLM::fit(&texts, 3, default_interpolation(3))?;

    let grammar_client = if ctx.cfg.quality.grammar {
        Some(GrammarClient::new(
            ctx.cfg.endpoints.grammar.clone().expect("validated"),
        ))
    } else {
        None
    };
    let categories = default_category_map();
    let grammar = grammar_client
        .as_ref()
        .map(|c| (c, &categories, ctx.cfg.quality.gen_sample_size, ctx.resolved.seed));

    let named = vec![
        ("clean".to_string(), &d_test),
        (ctx.cfg.trigger.kind.clone(), &poisoned),
    ];
    let rows = quality_compare(&named, Some(&d_test), &lm, grammar)?;
    write_json(&ctx.out_dir.join("quality.json"), &rows)?;
    write_atomic(&ctx.out_dir.join("quality.md"), rows_to_markdown(&rows).as_bytes())?;
    println!("quality rows: {}", rows.len());
    Ok(())
}

fn cmd_sweep(ctx: &Ctx) -> Result<(), Error> {
    if ctx.cfg.sweep.rates.is_empty() {
        return Err(Error::Config(vec![
            "sweep needs sweep.rates (or --rates)".into(),
        ]));
    }
    let d_train = load_split(ctx, "train")?;
    let d_test = load_split(ctx, "test")?;
    let plan = plan_for(ctx, &d_train)?;
    let rewriter = rewriter_for(ctx)?;
    let exp = ExperimentConfig {
        spec: ctx.resolved.spec.clone(),
        plan,
        train: ctx.resolved.train.clone(),
        hasher: ctx.resolved.hasher.clone(),
        defenses: Vec::new(),
    };
    let series = sweep_rates(&d_train, &d_test, &exp, &ctx.cfg.sweep.rates, &rewriter)?;
    write_json(&ctx.out_dir.join("sweep.json"), &series)?;
    write_atomic(&ctx.out_dir.join("sweep.csv"), series.to_csv().as_bytes())?;
    for w in &series.warnings {
        eprintln!("warning: {w}");
    }
    println!("sweep points: {}", series.points.len());
    Ok(())
}
