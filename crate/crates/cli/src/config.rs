//! Run configuration file (TOML) and its validation.
//!
//! Every check runs before any training, and each problem is reported with
//! the dotted path of the offending field.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tcm_core::autodiff::AdamWConfig;
use tcm_core::encoder::EncoderConfig;
use tcm_core::experiments::{Dataset, Method, ProtocolConfig, Shots};
use tcm_core::objective::{LabelSet, MappingMode, TcmHyper, TrainConfig};
use tcm_core::text::{generate_synthetic, load_jsonl, LabelMapping, SyntheticConfig};
use tcm_core::Error;

/// Output directories that are relative resolve against this root when set.
pub const OUTPUT_ROOT_ENV: &str = "TCM_OUTPUT_ROOT";

/// What `tcm experiment` runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// `method` over every seed.
    #[default]
    RunProtocol,
    /// TCM and the task head on the same episodes.
    TcmVsTaskhead,
    /// Every method in `sweep.methods`.
    Methods,
    /// TCM and the task head on seeded subsets of `sweep.class_counts` classes.
    ClassNumberSweep,
    /// TCM for every pair of `sweep.modes` and `sweep.ks`.
    DescriptionSweep,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// JSONL file of `{"text", "label"}` lines.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// JSON label mapping; required with `path`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mapping: Option<PathBuf>,
    /// Generates the data instead of reading it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticConfig>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let a = AdamWConfig::default();
        OptimizerConfig {
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            weight_decay: a.weight_decay,
            batch_size: TrainConfig::default().batch_size,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub class_counts: Vec<usize>,
    pub modes: Vec<MappingMode>,
    pub ks: Vec<usize>,
    pub methods: Vec<Method>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            class_counts: Vec::new(),
            modes: MappingMode::ALL.to_vec(),
            ks: vec![5, 20],
            methods: Method::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default)]
    pub protocol: Protocol,
    #[serde(default = "default_mode")]
    pub mode: MappingMode,
    #[serde(default = "default_shots")]
    pub shots: Shots,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_min_freq")]
    pub min_freq: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub hyper: TcmHyper,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
}

fn default_method() -> Method {
    Method::Tcm
}

fn default_mode() -> MappingMode {
    ProtocolConfig::default().mode
}

fn default_shots() -> Shots {
    ProtocolConfig::default().shots
}

fn default_seeds() -> Vec<u64> {
    vec![1]
}

fn default_epochs() -> usize {
    TrainConfig::default().epochs
}

fn default_min_freq() -> usize {
    ProtocolConfig::default().min_freq
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

/// One violated constraint, located by its dotted field path.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FieldError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

fn field(path: impl Into<String>, message: impl fmt::Display) -> FieldError {
    FieldError {
        path: path.into(),
        message: message.to_string(),
    }
}

/// A config that passed validation, with its data loaded.
pub struct Validated {
    pub config: RunConfig,
    pub protocol: ProtocolConfig,
    pub dataset: Dataset,
    pub output_dir: PathBuf,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, Vec<FieldError>> {
        toml::from_str(text).map_err(|e| vec![field("config", e.message().trim_end())])
    }

    /// Reads `path`; relative dataset paths are taken relative to its directory.
    pub fn load(path: &Path) -> Result<Self, Vec<FieldError>> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| vec![field("config", format!("{}: {e}", path.display()))])?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.dataset.path, &mut cfg.dataset.mapping]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn protocol_config(&self) -> ProtocolConfig {
        let o = &self.optimizer;
        ProtocolConfig {
            encoder: self.encoder.clone(),
            hyper: self.hyper,
            train: TrainConfig {
                epochs: self.epochs,
                batch_size: o.batch_size,
                optim: AdamWConfig {
                    lr: o.lr,
                    beta1: o.beta1,
                    beta2: o.beta2,
                    eps: o.eps,
                    weight_decay: o.weight_decay,
                },
                seed: 0,
            },
            mode: self.mode,
            shots: self.shots,
            min_freq: self.min_freq,
        }
    }

    /// Where outputs go: `output_dir`, under the root from the environment
    /// when it is relative.
    pub fn resolved_output_dir(&self, env_root: Option<&Path>) -> PathBuf {
        match env_root {
            Some(root) if self.output_dir.is_relative() => root.join(&self.output_dir),
            _ => self.output_dir.clone(),
        }
    }

    /// Checks every field, loads the data and checks it against the
    /// protocol. All problems found are returned together.
    pub fn validate(self, env_root: Option<&Path>) -> Result<Validated, Vec<FieldError>> {
        let mut errs = Vec::new();
        self.check_fields(&mut errs);
        let dataset = self.load_dataset(&mut errs);
        if let Some(data) = &dataset {
            self.check_against_data(data, &mut errs);
        }
        match dataset {
            Some(dataset) if errs.is_empty() => Ok(Validated {
                protocol: self.protocol_config(),
                output_dir: self.resolved_output_dir(env_root),
                config: self,
                dataset,
            }),
            _ => Err(errs),
        }
    }

    fn check_fields(&self, errs: &mut Vec<FieldError>) {
        if let Err(e) = self.encoder.validate() {
            let msg = bare(&e);
            match msg.split_once(' ') {
                Some((path, rest)) if path.starts_with("encoder.") => errs.push(field(path, rest)),
                _ => errs.push(field("encoder", msg)),
            }
        }
        if let Err(Error::Hyper { name, message }) = self.hyper.validate() {
            errs.push(field(format!("hyper.{name}"), message));
        }
        let o = &self.optimizer;
        let adam = self.protocol_config().train.optim;
        if let Err(Error::Hyper { name, message }) = adam.validate() {
            errs.push(field(format!("optimizer.{name}"), message));
        }
        if o.batch_size == 0 {
            errs.push(field("optimizer.batch_size", "must be positive"));
        }
        if self.epochs == 0 {
            errs.push(field("epochs", "must be positive"));
        }
        if self.shots == Shots::K(0) {
            errs.push(field("shots", "must be positive or \"full\""));
        }
        if self.seeds.is_empty() {
            errs.push(field("seeds", "must not be empty"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            errs.push(field("seeds", "must not repeat"));
        }
        if self.min_freq == 0 {
            errs.push(field("min_freq", "must be at least 1"));
        }
        if self.encoder.vocab_size <= 4 {
            errs.push(field(
                "encoder.vocab_size",
                "must leave room beyond the 4 reserved tokens",
            ));
        }
        match self.protocol {
            Protocol::ClassNumberSweep if self.sweep.class_counts.is_empty() => {
                errs.push(field(
                    "sweep.class_counts",
                    "must not be empty for class_number_sweep",
                ));
            }
            Protocol::DescriptionSweep => {
                if self.sweep.modes.is_empty() {
                    errs.push(field(
                        "sweep.modes",
                        "must not be empty for description_sweep",
                    ));
                }
                if self.sweep.ks.is_empty() || self.sweep.ks.contains(&0) {
                    errs.push(field("sweep.ks", "must be nonempty and positive"));
                }
            }
            Protocol::Methods if self.sweep.methods.is_empty() => {
                errs.push(field("sweep.methods", "must not be empty for methods"));
            }
            _ => {}
        }
    }

    fn load_dataset(&self, errs: &mut Vec<FieldError>) -> Option<Dataset> {
        let d = &self.dataset;
        match (&d.path, &d.synthetic) {
            (Some(_), Some(_)) => {
                errs.push(field("dataset", "set either path or synthetic, not both"));
                None
            }
            (None, None) => {
                errs.push(field(
                    "dataset.path",
                    "required unless dataset.synthetic is set",
                ));
                None
            }
            (None, Some(syn)) => {
                if d.mapping.is_some() {
                    errs.push(field(
                        "dataset.mapping",
                        "synthetic data brings its own mapping",
                    ));
                    return None;
                }
                match generate_synthetic(syn) {
                    Ok(task) => Some(Dataset::from_synthetic(task)),
                    Err(e) => {
                        errs.push(field("dataset.synthetic", bare(&e)));
                        None
                    }
                }
            }
            (Some(path), None) => {
                let examples = if path.is_file() {
                    load_jsonl(path)
                        .map_err(|e| errs.push(field("dataset.path", bare(&e))))
                        .ok()
                } else {
                    errs.push(field("dataset.path", "file not found"));
                    None
                };
                let mapping = match &d.mapping {
                    None => {
                        errs.push(field("dataset.mapping", "required with dataset.path"));
                        None
                    }
                    Some(m) if !m.is_file() => {
                        errs.push(field("dataset.mapping", "file not found"));
                        None
                    }
                    Some(m) => LabelMapping::load(m)
                        .map_err(|e| errs.push(field("dataset.mapping", bare(&e))))
                        .ok(),
                };
                let data = Dataset::new(examples?, mapping?)
                    .map_err(|e| errs.push(field("dataset", bare(&e))))
                    .ok()?;
                if data.examples.is_empty() {
                    errs.push(field("dataset.path", "contains no examples"));
                    return None;
                }
                Some(data)
            }
        }
    }

    fn check_against_data(&self, data: &Dataset, errs: &mut Vec<FieldError>) {
        // Names and definitions must come from the mapping; samples may be
        // drawn from each episode instead.
        let modes: Vec<MappingMode> = match self.protocol {
            Protocol::DescriptionSweep => self.sweep.modes.clone(),
            _ => vec![self.mode],
        };
        for mode in modes.into_iter().filter(|&m| m != MappingMode::Sample) {
            if let Err(e) = LabelSet::from_mapping(&data.mapping, mode, None) {
                errs.push(field("dataset.mapping", bare(&e)));
                break;
            }
        }
        let ks: Vec<usize> = match (self.protocol, self.shots) {
            (Protocol::DescriptionSweep, _) => self.sweep.ks.clone(),
            (_, Shots::K(k)) => vec![k],
            (_, Shots::Full) => vec![],
        };
        let path = if self.protocol == Protocol::DescriptionSweep {
            "sweep.ks"
        } else {
            "shots"
        };
        if let Some(&k) = ks.iter().max() {
            let mut counts: Vec<(String, usize)> =
                data.labels().into_iter().map(|l| (l, 0)).collect();
            for e in &data.examples {
                if let Some(c) = counts.iter_mut().find(|(l, _)| *l == e.label) {
                    c.1 += 1;
                }
            }
            // One example per class must remain for the test split.
            if let Some((label, have)) = counts.iter().find(|(_, n)| *n <= 2 * k) {
                errs.push(field(
                    path,
                    format!(
                        "K = {k} needs more than {} examples per class; {label:?} has {have}",
                        2 * k
                    ),
                ));
            }
        }
        if self.protocol == Protocol::ClassNumberSweep {
            let total = data.mapping.len();
            if let Some(&bad) = self
                .sweep
                .class_counts
                .iter()
                .find(|&&c| c == 0 || c > total)
            {
                errs.push(field(
                    "sweep.class_counts",
                    format!("{bad} is not between 1 and the {total} available classes"),
                ));
            }
        }
    }
}

/// Error text without the kind prefix the field path already conveys.
fn bare(e: &Error) -> String {
    let s = e.to_string();
    for prefix in ["configuration error: ", "invalid input: "] {
        if let Some(rest) = s.strip_prefix(prefix) {
            return rest.to_string();
        }
    }
    s
}
