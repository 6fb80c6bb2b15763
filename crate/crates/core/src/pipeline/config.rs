use std::io;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::balance::{BalanceMode, DEFAULT_K};
use crate::eval::{Averaging, SplitRatios};
use crate::features::EmbeddingConfig;
use crate::ingest::DEFAULT_LANGUAGE_THRESHOLD;
use crate::label::Label;
use crate::models::{LinearConfig, SbiLstmConfig};
use crate::synth::SynthConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Values given on the command line that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// Every setting the pipeline reads. A resolved config has no optional
/// paths left and every component seed filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Master seed. Component seeds not set explicitly are derived from it.
    pub seed: u64,
    pub output: OutputConfig,
    pub ingest: IngestConfig,
    pub filter: FilterConfig,
    pub annotation: AnnotationConfig,
    pub data: DataConfig,
    pub split: SplitConfig,
    pub balance: BalanceConfig,
    pub features: FeatureConfig,
    pub embeddings: EmbeddingConfig,
    pub rule: RuleConfig,
    pub linear: LinearConfig,
    pub sbilstm: SbiLstmConfig,
    pub eval: EvalConfig,
    pub synth: SynthConfig,
    pub simulation: SimulationConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 42,
            output: OutputConfig::default(),
            ingest: IngestConfig::default(),
            filter: FilterConfig::default(),
            annotation: AnnotationConfig::default(),
            data: DataConfig::default(),
            split: SplitConfig::default(),
            balance: BalanceConfig::default(),
            features: FeatureConfig::default(),
            embeddings: EmbeddingConfig::default(),
            rule: RuleConfig::default(),
            linear: LinearConfig::default(),
            sbilstm: SbiLstmConfig::default(),
            eval: EvalConfig::default(),
            synth: SynthConfig::default(),
            simulation: SimulationConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: "out".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SourceSpec {
    /// JSON-lines file of raw posts.
    File { path: PathBuf, page_size: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub date_from: NaiveDate,
    pub date_to: NaiveDate,
    /// Per-source cap.
    pub max_items: usize,
    pub max_retries: u32,
    pub retry_delay_ms: u64,
    pub sources: Vec<SourceSpec>,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            date_from: NaiveDate::from_ymd_opt(2000, 1, 1).expect("date"),
            date_to: NaiveDate::from_ymd_opt(2099, 12, 31).expect("date"),
            max_items: 1_000_000,
            max_retries: 3,
            retry_delay_ms: 500,
            sources: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    /// Minimum Ethiopic share of letters for a post to count as Amharic.
    pub language_threshold: f64,
    /// `surface<TAB>theme` keyword list.
    pub keyword_lexicon: Option<PathBuf>,
    /// Extra `from<TAB>to` homophone folds applied on top of the built-in table.
    pub normalization_table: Option<PathBuf>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            language_threshold: DEFAULT_LANGUAGE_THRESHOLD,
            keyword_lexicon: None,
            normalization_table: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotationConfig {
    pub required_votes: usize,
    pub lease_minutes: u64,
    pub bind: String,
    /// Snapshot file the annotation service persists to.
    pub store: Option<PathBuf>,
    /// JSON array of annotator accounts to register at startup.
    pub annotators: Option<PathBuf>,
}

impl Default for AnnotationConfig {
    fn default() -> Self {
        AnnotationConfig {
            required_votes: crate::annotation::DEFAULT_REQUIRED_VOTES,
            lease_minutes: 30,
            bind: "127.0.0.1:8080".into(),
            store: None,
            annotators: None,
        }
    }
}

/// Files passed between stages. Unset paths default to the stage outputs
/// under the output directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub posts: Option<PathBuf>,
    pub pool: Option<PathBuf>,
    pub gold: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        let r = SplitRatios::default();
        SplitConfig {
            train: r.train,
            val: r.val,
            test: r.test,
            seed: 0,
        }
    }
}

impl SplitConfig {
    pub fn ratios(&self) -> SplitRatios {
        SplitRatios {
            train: self.train,
            val: self.val,
            test: self.test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BalanceSetting {
    /// SMOTE on TF-IDF vectors; sequence models fall back to duplication.
    Smote,
    Duplicate,
    None,
}

impl BalanceSetting {
    pub fn for_vectors(self) -> Option<BalanceMode> {
        match self {
            BalanceSetting::Smote => Some(BalanceMode::Smote),
            BalanceSetting::Duplicate => Some(BalanceMode::Duplicate),
            BalanceSetting::None => None,
        }
    }

    pub fn for_sequences(self) -> bool {
        self != BalanceSetting::None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BalanceConfig {
    pub mode: BalanceSetting,
    pub k: usize,
    pub seed: u64,
}

impl Default for BalanceConfig {
    fn default() -> Self {
        BalanceConfig {
            mode: BalanceSetting::Smote,
            k: DEFAULT_K,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub min_df: usize,
    /// Initialize the SBi-LSTM embedding layer from subword skip-gram vectors
    /// trained on the training split.
    pub pretrained_embeddings: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            min_df: 2,
            pretrained_embeddings: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuleConfig {
    /// `surface<TAB>label[<TAB>weight]` rule lexicon.
    pub lexicon: Option<PathBuf>,
    pub precedence: Vec<Label>,
}

impl Default for RuleConfig {
    fn default() -> Self {
        RuleConfig {
            lexicon: None,
            precedence: crate::models::RuleModel::DEFAULT_PRECEDENCE.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub averaging: Averaging,
}

/// Simulated annotators used by the synthetic benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub annotators: usize,
    /// Chance that a simulated vote picks a wrong label.
    pub error_rate: f64,
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            annotators: 3,
            error_rate: 0.05,
            seed: 0,
        }
    }
}

/// Largest seed a config file can hold (TOML integers are signed 64-bit).
pub const MAX_SEED: u64 = i64::MAX as u64;

/// Seed for one component, derived from the master seed.
pub fn derive_seed(master: u64, component: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(component.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes")) & MAX_SEED
}

const SEEDED: [&str; 7] = [
    "split",
    "balance",
    "embeddings",
    "linear",
    "sbilstm",
    "synth",
    "simulation",
];

fn explicit_seed(table: &toml::Table, section: &str) -> bool {
    table
        .get(section)
        .and_then(|v| v.as_table())
        .is_some_and(|t| t.contains_key("seed"))
}

impl PipelineConfig {
    /// Reads and resolves `path`. Relative paths inside the file are taken
    /// relative to the file's directory.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<PipelineConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::from_toml(&text, base, overrides).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse {
                path: path.display().to_string(),
                message,
            },
            other => other,
        })
    }

    pub fn from_toml(text: &str, base: &Path, overrides: &Overrides) -> Result<PipelineConfig, ConfigError> {
        let parse_err = |e: toml::de::Error| ConfigError::Parse {
            path: "<text>".into(),
            message: e.to_string(),
        };
        let table: toml::Table = toml::from_str(text).map_err(parse_err)?;
        let config: PipelineConfig = toml::from_str(text).map_err(parse_err)?;
        let explicit: Vec<&str> = SEEDED.into_iter().filter(|s| explicit_seed(&table, s)).collect();
        config.resolve(base, overrides, &explicit)
    }

    /// Fills defaults, applies overrides, derives seeds and validates.
    /// Component seeds named in `explicit` are kept unless the master seed is
    /// overridden, in which case every component seed is re-derived.
    pub fn resolve(
        mut self,
        base: &Path,
        overrides: &Overrides,
        explicit: &[&str],
    ) -> Result<PipelineConfig, ConfigError> {
        let rebase = |p: &PathBuf| if p.is_relative() { base.join(p) } else { p.clone() };
        let reseed = overrides.seed.is_some();
        if let Some(seed) = overrides.seed {
            if seed > MAX_SEED {
                return Err(ConfigError::Invalid(format!("seed {seed} exceeds {MAX_SEED}")));
            }
            self.seed = seed;
        }
        self.output.dir = match &overrides.out {
            Some(out) => out.clone(),
            None => rebase(&self.output.dir),
        };
        let out = self.output.dir.clone();

        for source in &mut self.ingest.sources {
            match source {
                SourceSpec::File { path, .. } => *path = rebase(path),
            }
        }
        for p in [
            &mut self.filter.keyword_lexicon,
            &mut self.filter.normalization_table,
            &mut self.annotation.annotators,
            &mut self.rule.lexicon,
        ]
        .into_iter()
        .flatten()
        {
            *p = rebase(p);
        }
        let fill = |slot: &mut Option<PathBuf>, default: PathBuf| {
            *slot = Some(slot.as_ref().map_or(default, rebase));
        };
        fill(&mut self.annotation.store, out.join("annotation").join("store.json"));
        fill(&mut self.data.posts, out.join("ingest").join("posts.jsonl"));
        fill(&mut self.data.pool, out.join("filter").join("pool.jsonl"));
        fill(&mut self.data.gold, out.join("gold").join("gold.jsonl"));

        let master = self.seed;
        let keep = |name: &str| !reseed && explicit.contains(&name);
        let seeds: [(&str, &mut u64); 7] = [
            ("split", &mut self.split.seed),
            ("balance", &mut self.balance.seed),
            ("embeddings", &mut self.embeddings.seed),
            ("linear", &mut self.linear.seed),
            ("sbilstm", &mut self.sbilstm.seed),
            ("synth", &mut self.synth.seed),
            ("simulation", &mut self.simulation.seed),
        ];
        for (name, slot) in seeds {
            if !keep(name) {
                *slot = derive_seed(master, name);
            }
        }
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        self.split
            .ratios()
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("split: {e}")))?;
        if self.ingest.date_from > self.ingest.date_to {
            return bad(format!(
                "ingest.date_from {} is after ingest.date_to {}",
                self.ingest.date_from, self.ingest.date_to
            ));
        }
        if self.ingest.max_items == 0 {
            return bad("ingest.max_items must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.filter.language_threshold) {
            return bad(format!(
                "filter.language_threshold {} is outside [0, 1]",
                self.filter.language_threshold
            ));
        }
        if self.annotation.required_votes == 0 || self.annotation.lease_minutes == 0 {
            return bad("annotation.required_votes and annotation.lease_minutes must be positive".into());
        }
        if self.balance.k == 0 {
            return bad("balance.k must be positive".into());
        }
        if self.features.min_df == 0 {
            return bad("features.min_df must be positive".into());
        }
        if self.features.pretrained_embeddings && self.embeddings.dim != self.sbilstm.embedding_dim {
            return bad(format!(
                "embeddings.dim {} differs from sbilstm.embedding_dim {}",
                self.embeddings.dim, self.sbilstm.embedding_dim
            ));
        }
        if !(0.0..1.0).contains(&self.simulation.error_rate) {
            return bad("simulation.error_rate must be in [0, 1)".into());
        }
        if self.simulation.annotators < self.annotation.required_votes {
            return bad(format!(
                "simulation.annotators {} is below annotation.required_votes {}",
                self.simulation.annotators, self.annotation.required_votes
            ));
        }
        let w = &self.synth.class_weights;
        if w.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return bad("synth.class_weights must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.synth.homophone_rate) {
            return bad("synth.homophone_rate must be in [0, 1]".into());
        }
        Ok(())
    }

    /// Canonical TOML text; this is what gets written next to outputs.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn store_path(&self) -> &Path {
        self.annotation.store.as_deref().expect("resolved config")
    }

    pub fn posts_path(&self) -> &Path {
        self.data.posts.as_deref().expect("resolved config")
    }

    pub fn pool_path(&self) -> &Path {
        self.data.pool.as_deref().expect("resolved config")
    }

    pub fn gold_path(&self) -> &Path {
        self.data.gold.as_deref().expect("resolved config")
    }
}
