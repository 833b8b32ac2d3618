//! End-to-end acceptance suite. Each test prints one pass line; the suite
//! doubles as the executable definition of what this laboratory guarantees
//! at desk scale: exact metric arithmetic, working attacks on the fixture
//! corpus, the expected defense asymmetries, and byte-level determinism.

use std::collections::HashSet;
use std::process::Command;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use backdoor_lab::corpus::{Dataset, LabelSpace, LabeledSample, Provenance, Split, TriggerKind};
use backdoor_lab::defense::{calibrate_onion_threshold, syntactic_alteration};
use backdoor_lab::detect::{detect_subjunctive, detect_syntactic_template, Lexicons};
use backdoor_lab::evaluate::{asr, cacc, run_experiment, DefenseChoice, ExperimentConfig};
use backdoor_lab::fixtures::{rewrite_pairs, synthetic_reviews};
use backdoor_lab::ngram_lm::{default_interpolation, NgramLM};
use backdoor_lab::poison::{
    build_poisoned_test, build_poisoned_train, InsertPosition, PoisonPlan, Rewriter, TriggerSpec,
};
use backdoor_lab::quality::{ppl_report, quality_compare, ssa};
use backdoor_lab::victim::{
    ce_loss_and_grad, featurize, schedule_lr, train, FeatureHasher, TrainConfig, VictimModel,
};

const TARGET: usize = 0; // "Positive"

fn fixture_corpus() -> (Dataset, Dataset) {
    synthetic_reviews(2000, 400, 20240801)
}

fn fast_hasher() -> FeatureHasher {
    FeatureHasher::new(1 << 14, vec![1, 2], true).unwrap()
}

fn fast_train(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 6,
        batch_size: 32,
        eta_max: 0.5,
        seed,
        ..TrainConfig::default()
    }
}

fn experiment(spec: TriggerSpec, rate: f64, seed: u64, defenses: Vec<DefenseChoice>) -> ExperimentConfig {
    ExperimentConfig {
        spec,
        plan: PoisonPlan::new(rate, TARGET, seed),
        train: fast_train(seed),
        hasher: fast_hasher(),
        defenses,
    }
}

fn two_labels() -> LabelSpace {
    LabelSpace::new(vec!["Positive".into(), "Negative".into()]).unwrap()
}

fn poisoned_sample(id: &str, text: &str, label: usize) -> LabeledSample {
    LabeledSample {
        id: id.into(),
        text: text.into(),
        label,
        provenance: Provenance::Poisoned {
            trigger_kind: TriggerKind::RareWord,
            original_id: format!("{id}o"),
        },
    }
}

#[test]
fn criterion_01_metric_and_schedule_oracles() {
    let (d_train, d_test) = synthetic_reviews(300, 60, 1);
    let model = train(&d_train, &fast_hasher(), &fast_train(1)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);

    for trial in 0..1000 {
        let n = rng.gen_range(1..16);
        let make_text = |rng: &mut ChaCha8Rng| {
            d_test.samples[rng.gen_range(0..d_test.len())].text.clone()
        };
        if trial % 2 == 0 {
            let samples: Vec<LabeledSample> = (0..n)
                .map(|i| {
                    LabeledSample::clean(format!("c{i}"), make_text(&mut rng), rng.gen_range(0..2))
                })
                .collect();
            let d = Dataset::new(samples, two_labels(), Split::Test).unwrap();
            let brute = d
                .samples
                .iter()
                .filter(|s| model.predict(&s.text).0 == s.label)
                .count() as f64
                / n as f64;
            assert_eq!(cacc(&model, &d).unwrap(), brute, "trial {trial}");
        } else {
            let target = rng.gen_range(0..2);
            let samples: Vec<LabeledSample> = (0..n)
                .map(|i| poisoned_sample(&format!("p{i}"), &make_text(&mut rng), target))
                .collect();
            let d = Dataset::new(samples, two_labels(), Split::Test).unwrap();
            let brute = d
                .samples
                .iter()
                .filter(|s| model.predict(&s.text).0 == target)
                .count() as f64
                / n as f64;
            assert_eq!(asr(&model, &d, target).unwrap(), brute, "trial {trial}");
        }
    }

    let cfg = TrainConfig {
        eta_max: 5.0e-4,
        eta_min: 1.0e-6,
        warmup_ratio: 0.1,
        ..TrainConfig::default()
    };
    let t_i = 730.0;
    let warm = cfg.warmup_ratio * t_i;
    assert_eq!(schedule_lr(warm, t_i, &cfg).unwrap(), cfg.eta_max);
    assert_eq!(schedule_lr(t_i, t_i, &cfg).unwrap(), cfg.eta_min);
    let mid = schedule_lr(warm + (t_i - warm) / 2.0, t_i, &cfg).unwrap();
    assert!((mid - (cfg.eta_max + cfg.eta_min) / 2.0).abs() < 1e-12);

    println!("criterion 1: PASS - metric counts match brute force over 1000 trials; schedule endpoints exact");
}

#[test]
fn criterion_02_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let h = 1e-6;
    for instance in 0..50 {
        let num_labels = rng.gen_range(2..5);
        let dim = 16;
        let mut weights: Vec<Vec<f64>> = (0..num_labels)
            .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let mut bias: Vec<f64> = (0..num_labels).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let n_feats = rng.gen_range(1..6);
        let mut idx: Vec<usize> = (0..dim).collect();
        let features: Vec<(usize, f64)> = (0..n_feats)
            .map(|_| {
                let i = idx.remove(rng.gen_range(0..idx.len()));
                (i, rng.gen_range(0.5..3.0))
            })
            .collect();
        let label = rng.gen_range(0..num_labels);

        let (_, grad_w, grad_b) = ce_loss_and_grad(&weights, &bias, &features, label);
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-8);

        for c in 0..num_labels {
            for &(f, _) in &features {
                let analytic = grad_w[c]
                    .iter()
                    .find(|&&(j, _)| j == f)
                    .map(|&(_, g)| g)
                    .unwrap();
                weights[c][f] += h;
                let (up, _, _) = ce_loss_and_grad(&weights, &bias, &features, label);
                weights[c][f] -= 2.0 * h;
                let (down, _, _) = ce_loss_and_grad(&weights, &bias, &features, label);
                weights[c][f] += h;
                let fd = (up - down) / (2.0 * h);
                assert!(
                    rel(analytic, fd) <= 1e-5,
                    "instance {instance}: weight grad {analytic} vs fd {fd}"
                );
            }
            bias[c] += h;
            let (up, _, _) = ce_loss_and_grad(&weights, &bias, &features, label);
            bias[c] -= 2.0 * h;
            let (down, _, _) = ce_loss_and_grad(&weights, &bias, &features, label);
            bias[c] += h;
            let fd = (up - down) / (2.0 * h);
            assert!(rel(grad_b[c], fd) <= 1e-5, "instance {instance}: bias grad");
        }
    }
    println!("criterion 2: PASS - loss gradient matches central differences (rel err <= 1e-5, 50 instances)");
}

#[test]
fn criterion_03_mixture_arithmetic() {
    let (d_train, _) = fixture_corpus();
    let spec = TriggerSpec::rare_word("bb", InsertPosition::Random);
    let rewriter = Rewriter::default();
    for rate in [0.0, 0.05, 0.1, 0.2, 0.3] {
        let plan = PoisonPlan::new(rate, TARGET, 4242);
        let mixed = build_poisoned_train(&d_train, &spec, &plan, &rewriter).unwrap();
        let poisoned = mixed.samples.iter().filter(|s| s.is_poisoned()).count();
        assert_eq!(poisoned, (rate * d_train.len() as f64).floor() as usize);
        assert_eq!(mixed.len(), d_train.len());
    }

    // zero rate reproduces the benign pipeline bit for bit
    let plan = PoisonPlan::new(0.0, TARGET, 4242);
    let mixed = build_poisoned_train(&d_train, &spec, &plan, &rewriter).unwrap();
    assert_eq!(mixed.samples, d_train.samples);
    let hasher = fast_hasher();
    let cfg = fast_train(4242);
    let a = train(&mixed, &hasher, &cfg).unwrap();
    let b = train(&d_train, &hasher, &cfg).unwrap();
    assert_eq!(a.weights, b.weights);
    assert_eq!(a.bias, b.bias);

    println!("criterion 3: PASS - poisoned counts are exact floors; zero rate is bit-identical to benign");
}

/// (benign cacc, attacked cacc, asr) for one seed.
fn attack_run(spec: &TriggerSpec, rate: f64, seed: u64) -> (f64, f64, f64) {
    let (d_train, d_test) = fixture_corpus();
    let rewriter = Rewriter::default();
    let benign_model = train(&d_train, &fast_hasher(), &fast_train(seed)).unwrap();
    let benign = cacc(&benign_model, &d_test).unwrap();
    let report = run_experiment(
        &d_train,
        &d_test,
        &experiment(spec.clone(), rate, seed, vec![]),
        &rewriter,
    )
    .unwrap();
    (benign, report.cacc.unwrap(), report.asr.unwrap())
}

#[test]
fn criterion_04_attacks_succeed_at_fixture_scale() {
    let seeds = [11, 12, 13];

    let rare = TriggerSpec::rare_word("bb", InsertPosition::Random);
    for &seed in &seeds {
        let (benign, attacked, asr) = attack_run(&rare, 0.10, seed);
        assert!(asr >= 0.93, "rare word seed {seed}: asr {asr}");
        assert!(
            benign - attacked <= 0.05,
            "rare word seed {seed}: cacc {benign} -> {attacked}"
        );
    }

    let fixed = TriggerSpec::fixed_sentence("no cross, no crown", InsertPosition::Random);
    for &seed in &seeds {
        let (_, _, asr) = attack_run(&fixed, 0.10, seed);
        assert!(asr >= 0.93, "fixed sentence seed {seed}: asr {asr}");
    }

    let dual = TriggerSpec::dual_trigger();
    for &seed in &seeds {
        let (_, _, asr) = attack_run(&dual, 0.30, seed);
        assert!(asr >= 0.88, "dual trigger seed {seed}: asr {asr}");
    }

    println!("criterion 4: PASS - insertion attacks reach ASR >= 0.95 at rate 0.10 and the dual rewrite >= 0.90 at 0.30 (3 seeds, 2-point slack)");
}

#[test]
fn criterion_05_single_layer_activation() {
    let (d_train, d_test) = fixture_corpus();
    let rewriter = Rewriter::default();
    let seed = 11;
    let plan = PoisonPlan::new(0.30, TARGET, seed);
    let mixed = build_poisoned_train(&d_train, &TriggerSpec::dual_trigger(), &plan, &rewriter).unwrap();
    let model = train(&mixed, &fast_hasher(), &fast_train(seed)).unwrap();

    let dual_test =
        build_poisoned_test(&d_test, &TriggerSpec::dual_trigger(), &plan, &rewriter).unwrap();
    let dual_asr = asr(&model, &dual_test, TARGET).unwrap();

    let report =
        backdoor_lab::evaluate::subjunctive_only_eval(&model, &d_test, &plan, &rewriter).unwrap();
    let subj_asr = report.asr.unwrap();

    assert!(subj_asr >= 0.5, "subjunctive-only asr {subj_asr}");
    assert!(
        subj_asr <= dual_asr + 1e-12,
        "subjunctive-only {subj_asr} exceeds dual {dual_asr}"
    );
    println!(
        "criterion 5: PASS - mood-only trigger activates the dual backdoor (asr {subj_asr:.3} in [0.5, dual {dual_asr:.3}])"
    );
}

#[test]
fn criterion_06_onion_asymmetry() {
    let onion = vec![DefenseChoice::Onion {
        percentile: 0.99,
        max_removals: 3,
    }];
    let (d_train, d_test) = fixture_corpus();
    let rewriter = Rewriter::default();
    let seed = 11;

    let rare = run_experiment(
        &d_train,
        &d_test,
        &experiment(
            TriggerSpec::rare_word("bb", InsertPosition::Random),
            0.10,
            seed,
            onion.clone(),
        ),
        &rewriter,
    )
    .unwrap();
    let rare_drop = rare.asr.unwrap() - rare.defenses[0].asr.unwrap();
    assert!(rare_drop >= 0.30, "rare-word asr drop {rare_drop}");

    let dual = run_experiment(
        &d_train,
        &d_test,
        &experiment(TriggerSpec::dual_trigger(), 0.30, seed, onion),
        &rewriter,
    )
    .unwrap();
    let dual_drop = dual.asr.unwrap() - dual.defenses[0].asr.unwrap();
    assert!(dual_drop <= 0.10, "dual-trigger asr drop {dual_drop}");

    let cacc_shift = (rare.cacc.unwrap() - rare.defenses[0].cacc.unwrap()).abs();
    assert!(cacc_shift <= 0.03, "cacc shift under filtering {cacc_shift}");

    println!(
        "criterion 6: PASS - perplexity filtering cuts rare-word ASR by {:.2} but dual-trigger ASR by only {:.2}",
        rare_drop, dual_drop
    );
}

#[test]
fn criterion_07_syntactic_alteration_defense() {
    let (d_train, d_test) = fixture_corpus();
    let rewriter = Rewriter::default();
    let seed = 11;
    let report = run_experiment(
        &d_train,
        &d_test,
        &experiment(
            TriggerSpec::dual_trigger(),
            0.30,
            seed,
            vec![DefenseChoice::SyntacticAlteration],
        ),
        &rewriter,
    )
    .unwrap();
    let drop = report.asr.unwrap() - report.defenses[0].asr.unwrap();
    assert!(drop >= 0.10, "alteration asr drop {drop}");

    // exact idempotence over every test text and every poisoned rewrite
    let lex = Lexicons::default();
    let plan = PoisonPlan::new(1.0, TARGET, seed);
    let poisoned = build_poisoned_test(&d_test, &TriggerSpec::dual_trigger(), &plan, &rewriter).unwrap();
    for text in d_test
        .samples
        .iter()
        .chain(poisoned.samples.iter())
        .map(|s| s.text.as_str())
    {
        let once = syntactic_alteration(text, &lex);
        assert_eq!(once, syntactic_alteration(&once, &lex), "not idempotent: {text}");
    }

    println!(
        "criterion 7: PASS - structure alteration cuts dual-trigger ASR by {:.2} and is idempotent",
        drop
    );
}

#[test]
fn criterion_08_detector_closed_loop() {
    let (_, d_test) = fixture_corpus();
    let lex = Lexicons::default();
    let rewriter = Rewriter::default();

    for s in &d_test.samples {
        let dual = rewriter.dual_trigger(s).unwrap().poisoned_text;
        assert!(detect_syntactic_template(&dual, &lex).0, "{dual}");
        assert!(detect_subjunctive(&dual, &lex).0, "{dual}");

        let subj = rewriter.subjunctive_only(s).unwrap().poisoned_text;
        assert!(detect_subjunctive(&subj, &lex).0, "{subj}");
        assert!(!detect_syntactic_template(&subj, &lex).0, "{subj}");
    }

    for pair in rewrite_pairs() {
        assert!(detect_syntactic_template(&pair.poisoned, &lex).0, "{}", pair.poisoned);
        assert!(detect_subjunctive(&pair.poisoned, &lex).0, "{}", pair.poisoned);
        assert!(!detect_subjunctive(&pair.original, &lex).0, "{}", pair.original);
    }

    println!("criterion 8: PASS - 100% closed loop on 400 rewrites each way; curated pairs behave as labeled");
}

#[test]
fn criterion_09_quality_orderings() {
    let (d_train, d_test) = fixture_corpus();
    let rewriter = Rewriter::default();
    let plan = PoisonPlan::new(1.0, TARGET, 11);
    let rare = build_poisoned_test(
        &d_test,
        &TriggerSpec::rare_word("bb", InsertPosition::Random),
        &plan,
        &rewriter,
    )
    .unwrap();
    let dual =
        build_poisoned_test(&d_test, &TriggerSpec::dual_trigger(), &plan, &rewriter).unwrap();

    let texts: Vec<String> = d_train.samples.iter().map(|s| s.text.clone()).collect();
    let lm = NgramLM::fit(&texts, 3, default_interpolation(3)).unwrap();

    let rows = quality_compare(
        &[("insertion".into(), &rare), ("rewrite".into(), &dual)],
        Some(&d_test),
        &lm,
        None,
    )
    .unwrap();
    let ssa_insertion = rows[0].ssa.unwrap();
    let ssa_rewrite = rows[1].ssa.unwrap();
    assert!(
        ssa_insertion > ssa_rewrite,
        "ssa ordering: insertion {ssa_insertion} vs rewrite {ssa_rewrite}"
    );

    let ppl_clean = ppl_report(&d_test, &lm).unwrap();
    let ppl_rare = rows[0].ppl;
    assert!(ppl_rare > ppl_clean, "ppl ordering: {ppl_rare} vs clean {ppl_clean}");

    // hand-computed unit values
    assert!((ssa("a b c", "a b c", None).unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(ssa("a b c", "x y z", None).unwrap(), 0.0);
    assert!((ssa("a b c", "a b d", None).unwrap() - 2.0 / 3.0).abs() < 1e-12);

    println!(
        "criterion 9: PASS - SSA(insertion {ssa_insertion:.3}) > SSA(rewrite {ssa_rewrite:.3}); PPL rises under rare-word insertion; unit values exact"
    );
}

#[test]
fn criterion_10_cli_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let (d_train, d_test) = synthetic_reviews(400, 100, 77);
    let train_path = dir.path().join("train.jsonl");
    let test_path = dir.path().join("test.jsonl");
    backdoor_lab::corpus::save_dataset(&d_train, &train_path).unwrap();
    backdoor_lab::corpus::save_dataset(&d_test, &test_path).unwrap();

    let config_path = dir.path().join("run.toml");
    std::fs::write(
        &config_path,
        format!(
            r#"seed = 42
labels = ["Positive", "Negative"]

[paths]
train = {train:?}
test = {test:?}

[trigger]
kind = "rare_word"
payload = "bb"

[plan]
rate = 0.1
target_label = "Positive"

[train]
epochs = 2
eta_max = 0.3

[model]
dimension = 4096

[defense]
list = ["onion", "syntactic_alteration"]

[sweep]
rates = [0.0, 0.1]
"#,
            train = train_path,
            test = test_path,
        ),
    )
    .unwrap();

    let bin = env!("CARGO_BIN_EXE_backdoor-lab");
    let run = |cmd: &str, out: &std::path::Path| {
        let status = Command::new(bin)
            .args([
                cmd,
                "--config",
                config_path.to_str().unwrap(),
                "--out-dir",
                out.to_str().unwrap(),
            ])
            .status()
            .unwrap();
        assert!(status.success(), "{cmd} failed");
    };

    let artifacts: &[(&str, &[&str])] = &[
        ("poison", &["poisoned_train.jsonl", "poisoned_test.jsonl"]),
        ("train", &["model.json"]),
        ("evaluate", &["report.json", "report.md"]),
        ("defend", &["report.json", "defense_report.json"]),
        ("sweep", &["sweep.json", "sweep.csv"]),
        ("quality", &["quality.json", "quality.md"]),
    ];
    let mut checked = HashSet::new();
    for (cmd, files) in artifacts {
        let out_a = dir.path().join(format!("{cmd}_a"));
        let out_b = dir.path().join(format!("{cmd}_b"));
        run(cmd, &out_a);
        run(cmd, &out_b);
        for f in *files {
            let a = std::fs::read(out_a.join(f)).unwrap();
            let b = std::fs::read(out_b.join(f)).unwrap();
            assert_eq!(a, b, "{cmd}: {f} differs between identical runs");
            checked.insert(format!("{cmd}/{f}"));
        }
    }
    println!(
        "criterion 10: PASS - {} primary outputs byte-identical across re-runs of every command",
        checked.len()
    );
}

/// Sweep direction (supports the rate-sweep contract behind criterion 4's
/// choice of rates): ASR is non-decreasing in the poisoning rate up to noise.
#[test]
fn sweep_asr_is_monotone_within_slack() {
    let (d_train, d_test) = fixture_corpus();
    let cfg = experiment(
        TriggerSpec::rare_word("bb", InsertPosition::Random),
        0.0,
        11,
        vec![],
    );
    let series = backdoor_lab::evaluate::sweep_rates(
        &d_train,
        &d_test,
        &cfg,
        &[0.0, 0.05, 0.1, 0.2, 0.3],
        &Rewriter::default(),
    )
    .unwrap();
    let asrs: Vec<f64> = series.points.iter().map(|p| p.asr.unwrap()).collect();
    for w in asrs.windows(2) {
        assert!(w[1] >= w[0] - 0.02, "asr decreased: {asrs:?}");
    }
}

/// The calibrated filtering threshold keeps ordinary text intact at fixture
/// scale (supports criterion 6's clean-accuracy bound).
#[test]
fn calibrated_threshold_is_conservative_on_clean_text() {
    let (d_train, _) = synthetic_reviews(400, 0, 5);
    let texts: Vec<String> = d_train.samples.iter().map(|s| s.text.clone()).collect();
    let lm = NgramLM::fit(&texts, 3, default_interpolation(3)).unwrap();
    let threshold = calibrate_onion_threshold(&lm, &d_train, 0.99).unwrap();
    assert!(threshold.is_finite());

    let cfg = backdoor_lab::defense::OnionConfig {
        lm: &lm,
        threshold,
        max_removals: 3,
    };
    let untouched = d_train
        .samples
        .iter()
        .take(100)
        .filter(|s| backdoor_lab::defense::onion_filter(&s.text, &cfg).0 == s.text)
        .count();
    assert!(untouched >= 90, "only {untouched}/100 clean texts untouched");
}

/// Feature extraction agrees with a by-hand recount on arbitrary text.
#[test]
fn featurize_counts_match_brute_force() {
    let hasher = fast_hasher();
    let (d, _) = synthetic_reviews(50, 0, 3);
    for s in &d.samples {
        let feats = featurize(&s.text, &hasher);
        let total: f64 = feats.iter().map(|&(_, v)| v).sum();
        let words = backdoor_lab::text::word_tokens(&s.text).len();
        // unigrams + bigrams per text
        let expected = words + words.saturating_sub(1);
        assert_eq!(total as usize, expected, "{}", s.text);
    }
}

/// Models are plain data: training twice from the same inputs gives the same
/// predictions object-for-object.
#[test]
fn training_is_reproducible_end_to_end() {
    let (d_train, d_test) = synthetic_reviews(300, 50, 8);
    let a = train(&d_train, &fast_hasher(), &fast_train(8)).unwrap();
    let b = train(&d_train, &fast_hasher(), &fast_train(8)).unwrap();
    let preds = |m: &VictimModel| -> Vec<usize> {
        d_test.samples.iter().map(|s| m.predict(&s.text).0).collect()
    };
    assert_eq!(a.weights, b.weights);
    assert_eq!(preds(&a), preds(&b));
}
