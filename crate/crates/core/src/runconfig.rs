//! Plain-text run configuration for the command-line tool: a TOML file whose
//! every knob can be overridden by a CLI flag, validated up front with all
//! problems reported at once.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluate::DefenseChoice;
use crate::poison::{GeneratorMode, InsertPosition, TriggerSpec};
use crate::victim::{FeatureHasher, TrainConfig};

pub const ENV_GENERATOR_URL: &str = "BDLAB_GENERATOR_URL";
pub const ENV_BACK_TRANSLATION_URL: &str = "BDLAB_BACK_TRANSLATION_URL";
pub const ENV_GRAMMAR_URL: &str = "BDLAB_GRAMMAR_URL";

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Directory receiving all outputs (datasets, model, reports).
    pub out_dir: Option<PathBuf>,
    /// Precomputed rewrite pairs (JSONL) for the precomputed generator.
    pub pairs: Option<PathBuf>,
    /// Marker lexicon file overriding the built-in detector lexicons.
    pub lexicons: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TriggerSection {
    /// none | rare_word | fixed_sentence | dual_trigger | subjunctive_only
    pub kind: String,
    pub payload: Option<String>,
    /// random | begin | middle | end
    pub position: String,
    /// native | external | precomputed
    pub generator: String,
}

impl Default for TriggerSection {
    fn default() -> Self {
        TriggerSection {
            kind: "rare_word".into(),
            payload: Some("bb".into()),
            position: "random".into(),
            generator: "native".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanSection {
    pub rate: f64,
    /// Label name; resolved against the dataset's label space at run time.
    pub target_label: String,
    #[serde(default = "default_true")]
    pub exclude_target_class_in_test: bool,
}

impl Default for PlanSection {
    fn default() -> Self {
        PlanSection {
            rate: 0.1,
            target_label: "Positive".into(),
            exclude_target_class_in_test: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub eta_max: f64,
    pub eta_min: f64,
    pub warmup_ratio: f64,
    pub l2: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            epochs: t.epochs,
            batch_size: t.batch_size,
            eta_max: t.eta_max,
            eta_min: t.eta_min,
            warmup_ratio: t.warmup_ratio,
            l2: t.l2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub dimension: usize,
    pub ngram_orders: Vec<usize>,
    pub lowercase: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        let h = FeatureHasher::default();
        ModelSection {
            dimension: h.dimension,
            ngram_orders: h.ngram_orders,
            lowercase: h.lowercase,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DefenseSection {
    /// Subset of: onion, syntactic_alteration, back_translation.
    pub list: Vec<String>,
    pub onion_percentile: f64,
    pub onion_max_removals: usize,
}

impl Default for DefenseSection {
    fn default() -> Self {
        DefenseSection {
            list: Vec::new(),
            onion_percentile: 0.99,
            onion_max_removals: 3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QualitySection {
    /// Query the grammar-check endpoint (requires endpoints.grammar).
    pub grammar: bool,
    pub gen_sample_size: usize,
}

impl Default for QualitySection {
    fn default() -> Self {
        QualitySection {
            grammar: false,
            gen_sample_size: 600,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub rates: Vec<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Endpoints {
    pub generator: Option<String>,
    pub back_translation: Option<String>,
    pub grammar: Option<String>,
}

fn default_labels() -> Vec<String> {
    vec!["Positive".into(), "Negative".into()]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    /// Label names of the classification task, in index order.
    #[serde(default = "default_labels")]
    pub labels: Vec<String>,
    pub paths: Paths,
    pub trigger: TriggerSection,
    pub plan: PlanSection,
    pub train: TrainSection,
    pub model: ModelSection,
    pub defense: DefenseSection,
    pub quality: QualitySection,
    pub sweep: SweepSection,
    pub endpoints: Endpoints,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            labels: default_labels(),
            paths: Paths::default(),
            trigger: TriggerSection::default(),
            plan: PlanSection::default(),
            train: TrainSection::default(),
            model: ModelSection::default(),
            defense: DefenseSection::default(),
            quality: QualitySection::default(),
            sweep: SweepSection::default(),
            endpoints: Endpoints::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&body).map_err(|e| Error::Config(vec![format!("{}: {e}", path.display())]))
    }

    /// Dataset/target presets named after the three benchmark setups.
    pub fn apply_profile(&mut self, profile: &str) -> Result<()> {
        match profile {
            "sst2" => {
                self.plan.target_label = "Positive".into();
                self.plan.rate = 0.30;
                self.train.epochs = 5;
            }
            "olid" => {
                self.plan.target_label = "Offense".into();
                self.plan.rate = 0.20;
                self.train.epochs = 4;
            }
            "agnews" => {
                self.plan.target_label = "World".into();
                self.plan.rate = 0.05;
                self.train.epochs = 3;
            }
            other => {
                return Err(Error::Config(vec![format!(
                    "unknown profile {other:?} (expected sst2, olid, or agnews)"
                )]))
            }
        }
        Ok(())
    }

    /// Environment variables fill endpoint URLs not set in the file.
    pub fn apply_env(&mut self) {
        let fill = |slot: &mut Option<String>, var: &str| {
            if slot.is_none() {
                if let Ok(v) = std::env::var(var) {
                    if !v.is_empty() {
                        *slot = Some(v);
                    }
                }
            }
        };
        fill(&mut self.endpoints.generator, ENV_GENERATOR_URL);
        fill(&mut self.endpoints.back_translation, ENV_BACK_TRANSLATION_URL);
        fill(&mut self.endpoints.grammar, ENV_GRAMMAR_URL);
    }

    /// Checks everything checkable without loading datasets and returns the
    /// resolved typed settings. All problems are reported together.
    pub fn validate(&self, check_paths: bool) -> Result<Resolved> {
        let mut problems = Vec::new();

        let seed = self.seed.unwrap_or_else(|| {
            problems.push("seed is mandatory".into());
            0
        });

        let benign = self.trigger.kind == "none";
        let spec = match self.trigger.kind.as_str() {
            "none" | "rare_word" => TriggerSpec::rare_word(
                self.trigger.payload.as_deref().unwrap_or_default(),
                InsertPosition::Random,
            ),
            "fixed_sentence" => TriggerSpec::fixed_sentence(
                self.trigger.payload.as_deref().unwrap_or_default(),
                InsertPosition::Random,
            ),
            "dual_trigger" => TriggerSpec::dual_trigger(),
            "subjunctive_only" => TriggerSpec::subjunctive_only(),
            other => {
                problems.push(format!("trigger.kind {other:?} is not recognized"));
                TriggerSpec::dual_trigger()
            }
        };
        let mut spec = spec;
        spec.insertion_position = match self.trigger.position.as_str() {
            "random" => InsertPosition::Random,
            "begin" => InsertPosition::Begin,
            "middle" => InsertPosition::Middle,
            "end" => InsertPosition::End,
            other => {
                problems.push(format!("trigger.position {other:?} is not recognized"));
                InsertPosition::Random
            }
        };
        spec.generator = match self.trigger.generator.as_str() {
            "native" => GeneratorMode::NativeTemplates,
            "external" => GeneratorMode::ExternalHttp,
            "precomputed" => GeneratorMode::PrecomputedFile,
            other => {
                problems.push(format!("trigger.generator {other:?} is not recognized"));
                GeneratorMode::NativeTemplates
            }
        };
        if !benign {
            if let Err(e) = spec.validate() {
                problems.push(e.to_string());
            }
        }
        if spec.generator == GeneratorMode::PrecomputedFile && self.paths.pairs.is_none() {
            problems.push("trigger.generator = \"precomputed\" needs paths.pairs".into());
        }
        if spec.generator == GeneratorMode::ExternalHttp
            && self.endpoints.generator.is_none()
            && matches!(
                spec.kind,
                crate::corpus::TriggerKind::DualTrigger | crate::corpus::TriggerKind::SubjunctiveOnly
            )
        {
            problems.push(format!(
                "trigger.generator = \"external\" needs endpoints.generator or {ENV_GENERATOR_URL}"
            ));
        }

        let label_space = match crate::corpus::LabelSpace::new(self.labels.clone()) {
            Ok(ls) => ls,
            Err(e) => {
                problems.push(format!("labels: {e}"));
                crate::corpus::LabelSpace::new(default_labels()).expect("defaults are valid")
            }
        };
        if label_space.index_of(&self.plan.target_label).is_none() {
            problems.push(format!(
                "plan.target_label {:?} is not one of the configured labels",
                self.plan.target_label
            ));
        }

        if !(0.0..=1.0).contains(&self.plan.rate) {
            problems.push(format!("plan.rate {} outside [0, 1]", self.plan.rate));
        }
        if benign && self.plan.rate != 0.0 {
            problems.push("trigger.kind = \"none\" requires plan.rate = 0".into());
        }
        if self.plan.target_label.trim().is_empty() {
            problems.push("plan.target_label must not be empty".into());
        }

        let train = TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            eta_max: self.train.eta_max,
            eta_min: self.train.eta_min,
            warmup_ratio: self.train.warmup_ratio,
            l2: self.train.l2,
            seed,
        };
        if let Err(e) = train.validate() {
            problems.push(e.to_string());
        }

        let hasher = match FeatureHasher::new(
            self.model.dimension,
            self.model.ngram_orders.clone(),
            self.model.lowercase,
        ) {
            Ok(h) => h,
            Err(e) => {
                problems.push(e.to_string());
                FeatureHasher::default()
            }
        };

        if !(0.0..=1.0).contains(&self.defense.onion_percentile) {
            problems.push(format!(
                "defense.onion_percentile {} outside [0, 1]",
                self.defense.onion_percentile
            ));
        }
        let mut defenses = Vec::new();
        for name in &self.defense.list {
            match name.as_str() {
                "onion" => defenses.push(DefenseChoice::Onion {
                    percentile: self.defense.onion_percentile,
                    max_removals: self.defense.onion_max_removals,
                }),
                "syntactic_alteration" => defenses.push(DefenseChoice::SyntacticAlteration),
                "back_translation" => defenses.push(DefenseChoice::BackTranslation {
                    endpoint: self.endpoints.back_translation.clone(),
                }),
                other => problems.push(format!("defense {other:?} is not recognized")),
            }
        }

        if self.quality.grammar && self.endpoints.grammar.is_none() {
            problems.push(format!(
                "quality.grammar = true needs endpoints.grammar or {ENV_GRAMMAR_URL}"
            ));
        }
        if self.quality.gen_sample_size == 0 {
            problems.push("quality.gen_sample_size must be positive".into());
        }

        if self.sweep.rates.windows(2).any(|w| w[0] > w[1]) {
            problems.push("sweep.rates must be sorted ascending".into());
        }
        if self.sweep.rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            problems.push("sweep.rates must lie in [0, 1]".into());
        }

        if check_paths {
            for (label, path) in [
                ("paths.train", &self.paths.train),
                ("paths.test", &self.paths.test),
                ("paths.pairs", &self.paths.pairs),
                ("paths.lexicons", &self.paths.lexicons),
            ] {
                if let Some(p) = path {
                    if !p.exists() {
                        problems.push(format!("{label} {} does not exist", p.display()));
                    }
                }
            }
        }

        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        Ok(Resolved {
            seed,
            benign,
            label_space,
            spec,
            rate: self.plan.rate,
            target_label: self.plan.target_label.clone(),
            exclude_target_class_in_test: self.plan.exclude_target_class_in_test,
            train,
            hasher,
            defenses,
        })
    }
}

/// Type-checked settings produced by validation. The target label stays a
/// name here; the index is resolved once the dataset's label space is known.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub seed: u64,
    /// trigger.kind = "none": no poisoning, attack metrics omitted.
    pub benign: bool,
    pub label_space: crate::corpus::LabelSpace,
    pub spec: TriggerSpec,
    pub rate: f64,
    pub target_label: String,
    pub exclude_target_class_in_test: bool,
    pub train: TrainConfig,
    pub hasher: FeatureHasher,
    pub defenses: Vec<DefenseChoice>,
}
