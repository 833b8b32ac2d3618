//! Attack/defense experiment harness: clean accuracy, attack success rate,
//! full pipeline runs, poisoning-rate sweeps, and single-layer activation of
//! a dual-layer backdoor.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Dataset;
use crate::defense::{
    calibrate_onion_threshold, defend_dataset, BackTranslationClient, Defense, OnionConfig,
};
use crate::detect::Lexicons;
use crate::error::{Error, Result};
use crate::ngram_lm::{default_interpolation, NgramLM};
use crate::poison::{build_poisoned_test, build_poisoned_train, PoisonPlan, Rewriter, TriggerSpec};
use crate::victim::{train, FeatureHasher, TrainConfig, VictimModel};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Clean accuracy: fraction of clean test samples classified correctly.
pub fn cacc(m: &VictimModel, d_test: &Dataset) -> Result<f64> {
    if d_test.is_empty() {
        return Err(Error::EmptyInput("accuracy needs a non-empty test set".into()));
    }
    if d_test.samples.iter().any(|s| s.is_poisoned()) {
        return Err(Error::Contract(
            "clean accuracy expects a clean test set, found poisoned provenance".into(),
        ));
    }
    let correct = d_test
        .samples
        .iter()
        .filter(|s| m.predict(&s.text).0 == s.label)
        .count();
    Ok(correct as f64 / d_test.len() as f64)
}

/// Attack success rate: fraction of poisoned test samples classified as the
/// target label. Every sample must carry poisoned provenance and the target.
pub fn asr(m: &VictimModel, d_poison_test: &Dataset, target: usize) -> Result<f64> {
    if d_poison_test.is_empty() {
        return Err(Error::EmptyInput("attack rate needs a non-empty poisoned set".into()));
    }
    for s in &d_poison_test.samples {
        if !s.is_poisoned() {
            return Err(Error::Contract(format!(
                "sample {} in the poisoned test set has clean provenance",
                s.id
            )));
        }
        if s.label != target {
            return Err(Error::Contract(format!(
                "sample {} carries label {} instead of the target {}",
                s.id, s.label, target
            )));
        }
    }
    let hits = d_poison_test
        .samples
        .iter()
        .filter(|s| m.predict(&s.text).0 == target)
        .count();
    Ok(hits as f64 / d_poison_test.len() as f64)
}

/// Defense applied during evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DefenseChoice {
    /// Perplexity word filter; the language model is fitted on the clean
    /// train split and the threshold calibrated at the given percentile.
    Onion { percentile: f64, max_removals: usize },
    SyntacticAlteration,
    BackTranslation { endpoint: Option<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub spec: TriggerSpec,
    pub plan: PoisonPlan,
    pub train: TrainConfig,
    pub hasher: FeatureHasher,
    pub defenses: Vec<DefenseChoice>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenseRow {
    pub defense: String,
    pub cacc: Option<f64>,
    pub asr: Option<f64>,
}

/// A published large-model result shown alongside desk-scale numbers for
/// context; never a pass/fail target at this scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub dataset: String,
    pub setting: String,
    pub metric: String,
    pub value: f64,
}

pub fn reference_rows() -> Vec<ReferenceRow> {
    vec![
        ReferenceRow {
            dataset: "SST-2".into(),
            setting: "benign".into(),
            metric: "CACC".into(),
            value: 95.39,
        },
        ReferenceRow {
            dataset: "SST-2".into(),
            setting: "subjunctive-only activation".into(),
            metric: "ASR".into(),
            value: 86.71,
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub cacc: Option<f64>,
    pub asr: Option<f64>,
    pub n_clean: usize,
    pub n_poison: usize,
    /// Hash of the config and both input datasets; equal inputs yield equal
    /// reports.
    pub fingerprint: String,
    pub defenses: Vec<DefenseRow>,
    pub reference: Vec<ReferenceRow>,
}

impl EvalReport {
    pub fn to_markdown(&self) -> String {
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
        let mut out = String::from("| Setting | CACC | ASR |\n|---|---|---|\n");
        out.push_str(&format!(
            "| no defense | {} | {} |\n",
            fmt(self.cacc),
            fmt(self.asr)
        ));
        for d in &self.defenses {
            out.push_str(&format!("| {} | {} | {} |\n", d.defense, fmt(d.cacc), fmt(d.asr)));
        }
        if !self.reference.is_empty() {
            out.push_str("\nPublished large-model reference values (context only):\n");
            for r in &self.reference {
                out.push_str(&format!(
                    "- {} / {} {}: {}\n",
                    r.dataset, r.setting, r.metric, r.value
                ));
            }
        }
        out
    }
}

fn dataset_digest(hasher: &mut Sha256, d: &Dataset) {
    for s in &d.samples {
        hasher.update(s.id.as_bytes());
        hasher.update([0]);
        hasher.update(s.text.as_bytes());
        hasher.update([0]);
        hasher.update(s.label.to_le_bytes());
    }
    hasher.update([0xff]);
}

pub fn fingerprint(cfg: &ExperimentConfig, d_train: &Dataset, d_test: &Dataset) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(cfg).expect("config serializes"));
    dataset_digest(&mut h, d_train);
    dataset_digest(&mut h, d_test);
    format!("{:x}", h.finalize())
}

fn apply_defense(
    choice: &DefenseChoice,
    d_train: &Dataset,
    d_test: &Dataset,
    d_poison_test: &Dataset,
    model: &VictimModel,
    target: usize,
    lexicons: &Lexicons,
) -> Result<DefenseRow> {
    let run = |defense: &Defense| -> Result<DefenseRow> {
        let (clean_def, _) = defend_dataset(d_test, defense);
        let row_cacc = if clean_def.is_empty() {
            None
        } else {
            Some(cacc(model, &clean_def)?)
        };
        let (poison_def, _) = defend_dataset(d_poison_test, defense);
        let row_asr = if poison_def.is_empty() {
            None
        } else {
            Some(asr(model, &poison_def, target)?)
        };
        Ok(DefenseRow {
            defense: defense.name().to_string(),
            cacc: row_cacc,
            asr: row_asr,
        })
    };
    match choice {
        DefenseChoice::Onion {
            percentile,
            max_removals,
        } => {
            let texts: Vec<String> = d_train.samples.iter().map(|s| s.text.clone()).collect();
            let lm = NgramLM::fit(&texts, 3, default_interpolation(3))?;
            let threshold = calibrate_onion_threshold(&lm, d_train, *percentile)?;
            let cfg = OnionConfig {
                lm: &lm,
                threshold,
                max_removals: *max_removals,
            };
            run(&Defense::Onion(cfg))
        }
        DefenseChoice::SyntacticAlteration => run(&Defense::SyntacticAlteration(lexicons)),
        DefenseChoice::BackTranslation { endpoint } => {
            let client = endpoint.as_ref().map(|e| BackTranslationClient::new(e.clone()));
            run(&Defense::BackTranslation(client.as_ref()))
        }
    }
}

/// Full pipeline: poison the train split, train the victim, poison the test
/// split, score CACC and ASR, then re-score under each configured defense.
/// Deterministic given the config's seeds.
pub fn run_experiment(
    d_train: &Dataset,
    d_test: &Dataset,
    cfg: &ExperimentConfig,
    rewriter: &Rewriter,
) -> Result<EvalReport> {
    cfg.spec.validate().map_err(Error::stage("config"))?;
    cfg.plan
        .validate(d_train.label_space.len())
        .map_err(Error::stage("config"))?;
    cfg.train.validate().map_err(Error::stage("config"))?;

    let mixed = build_poisoned_train(d_train, &cfg.spec, &cfg.plan, rewriter)
        .map_err(Error::stage("poison-train"))?;
    let model = train(&mixed, &cfg.hasher, &cfg.train).map_err(Error::stage("train"))?;
    let poisoned_test = build_poisoned_test(d_test, &cfg.spec, &cfg.plan, rewriter)
        .map_err(Error::stage("poison-test"))?;

    let clean_acc = cacc(&model, d_test).map_err(Error::stage("evaluate"))?;
    let attack_rate = if poisoned_test.is_empty() {
        None
    } else {
        Some(asr(&model, &poisoned_test, cfg.plan.target_label).map_err(Error::stage("evaluate"))?)
    };

    let mut defenses = Vec::with_capacity(cfg.defenses.len());
    for choice in &cfg.defenses {
        defenses.push(
            apply_defense(
                choice,
                d_train,
                d_test,
                &poisoned_test,
                &model,
                cfg.plan.target_label,
                &rewriter.lexicons,
            )
            .map_err(Error::stage("defend"))?,
        );
    }

    Ok(EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        cacc: Some(clean_acc),
        asr: attack_rate,
        n_clean: d_test.len(),
        n_poison: poisoned_test.len(),
        fingerprint: fingerprint(cfg, d_train, d_test),
        defenses,
        reference: Vec::new(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub rate: f64,
    pub cacc: Option<f64>,
    pub asr: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSeries {
    pub points: Vec<SweepPoint>,
    pub warnings: Vec<String>,
}

impl SweepSeries {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rate,cacc,asr,error\n");
        for p in &self.points {
            let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{}\n",
                p.rate,
                fmt(p.cacc),
                fmt(p.asr),
                p.error.clone().unwrap_or_default()
            ));
        }
        out
    }
}

/// One experiment per poisoning rate, all other settings shared. Per-rate
/// failures are recorded in the series without aborting the remaining rates.
pub fn sweep_rates(
    d_train: &Dataset,
    d_test: &Dataset,
    cfg: &ExperimentConfig,
    rates: &[f64],
    rewriter: &Rewriter,
) -> Result<SweepSeries> {
    if rates.is_empty() {
        return Err(Error::EmptyInput("sweep needs at least one rate".into()));
    }
    if rates.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Domain("sweep rates must be sorted ascending".into()));
    }
    if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(Error::Domain("sweep rates must lie in [0, 1]".into()));
    }
    let mut warnings = Vec::new();
    let mut unique = Vec::new();
    for r in rates {
        if unique.last() == Some(r) {
            warnings.push(format!("duplicate rate {r} dropped"));
        } else {
            unique.push(*r);
        }
    }
    let mut points = Vec::with_capacity(unique.len());
    for r in unique {
        let mut point_cfg = cfg.clone();
        point_cfg.plan.rate = r;
        match run_experiment(d_train, d_test, &point_cfg, rewriter) {
            Ok(report) => points.push(SweepPoint {
                rate: r,
                cacc: report.cacc,
                asr: report.asr,
                error: None,
            }),
            Err(e) => points.push(SweepPoint {
                rate: r,
                cacc: None,
                asr: None,
                error: Some(e.to_string()),
            }),
        }
    }
    Ok(SweepSeries { points, warnings })
}

/// Smallest swept rate achieving ASR ≥ 0.95 with a clean-accuracy drop of at
/// most 2 points against the benign baseline.
pub fn optimal_rate(series: &SweepSeries, benign_cacc: f64) -> Option<f64> {
    series.points.iter().find_map(|p| {
        match (p.asr, p.cacc) {
            (Some(a), Some(c)) if a >= 0.95 && c >= benign_cacc - 0.02 => Some(p.rate),
            _ => None,
        }
    })
}

/// Measures single-layer activation: the test set is rewritten with the
/// mood-only trigger and scored against a model whose backdoor was installed
/// with the full dual trigger.
pub fn subjunctive_only_eval(
    model: &VictimModel,
    d_test: &Dataset,
    plan: &PoisonPlan,
    rewriter: &Rewriter,
) -> Result<EvalReport> {
    if d_test.samples.iter().any(|s| s.is_poisoned()) {
        return Err(Error::Contract(
            "single-layer evaluation starts from a clean test set".into(),
        ));
    }
    let spec = TriggerSpec::subjunctive_only();
    let poisoned = build_poisoned_test(d_test, &spec, plan, rewriter)
        .map_err(Error::stage("poison-test"))?;
    let rate = asr(model, &poisoned, plan.target_label).map_err(Error::stage("evaluate"))?;
    Ok(EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        cacc: None,
        asr: Some(rate),
        n_clean: 0,
        n_poison: poisoned.len(),
        fingerprint: String::new(),
        defenses: Vec::new(),
        reference: Vec::new(),
    })
}
