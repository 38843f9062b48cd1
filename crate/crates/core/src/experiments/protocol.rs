use std::collections::HashSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::report::SimilarityReport;
use crate::autodiff::Tensor;
use crate::baselines::{TaskHeadModel, TwoEncoderModel};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::metrics::{accuracy, macro_f1, micro_f1, Confusion};
use crate::objective::{
    evaluate, fit, Classifier, FreeLabelModel, History, LabelSet, MappingMode, TcmHyper, TcmModel,
    TrainConfig,
};
use crate::rng::{fnv1a, stream, Fingerprint};
use crate::text::{
    labels_in_order, sample_episode_with_rest, Episode, Example, LabelMapping, SyntheticTask, Vocab,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Siamese matching with the label regularizer.
    Tcm,
    /// Free label matrix initialized from encoded descriptions.
    TcmInit,
    /// `Tcm` with α = 0.
    TcmNoreg,
    TaskHead,
    TwoEncoder,
    /// Free label matrix with random initialization.
    FreeRandom,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Tcm,
        Method::TcmInit,
        Method::TcmNoreg,
        Method::TaskHead,
        Method::TwoEncoder,
        Method::FreeRandom,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Tcm => "tcm",
            Method::TcmInit => "tcm_init",
            Method::TcmNoreg => "tcm_noreg",
            Method::TaskHead => "task_head",
            Method::TwoEncoder => "two_encoder",
            Method::FreeRandom => "free_random",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Input(format!("unknown method {s:?}")))
    }
}

/// Examples per class for training and validation, or the full-data split.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shots {
    K(usize),
    Full,
}

impl Serialize for Shots {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Shots::K(k) => s.serialize_u64(*k as u64),
            Shots::Full => s.serialize_str("full"),
        }
    }
}

impl<'de> Deserialize<'de> for Shots {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            K(usize),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::K(k) => Ok(Shots::K(k)),
            Raw::Word(w) if w == "full" => Ok(Shots::Full),
            Raw::Word(w) => Err(serde::de::Error::custom(format!(
                "expected a positive integer or \"full\", got {w:?}"
            ))),
        }
    }
}

/// Everything a single training run needs besides the data and the seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    /// `vocab_size` caps the vocabulary built per run; the encoder uses the
    /// built size. `seed` is mixed with the run seed for initialization.
    pub encoder: EncoderConfig,
    pub hyper: TcmHyper,
    /// `seed` is replaced by the run seed.
    pub train: TrainConfig,
    pub mode: MappingMode,
    pub shots: Shots,
    pub min_freq: usize,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            encoder: EncoderConfig::default(),
            hyper: TcmHyper::default(),
            train: TrainConfig::default(),
            mode: MappingMode::Definition,
            shots: Shots::K(5),
            min_freq: 1,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        let mut enc = self.encoder.clone();
        enc.vocab_size = enc.vocab_size.max(1);
        enc.validate()?;
        self.hyper.validate()?;
        self.train.optim.validate()?;
        if self.train.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be positive".into()));
        }
        if self.shots == Shots::K(0) {
            return Err(Error::Config("shots must be positive".into()));
        }
        if self.encoder.vocab_size <= 4 {
            return Err(Error::Config(
                "encoder.vocab_size must leave room beyond the 4 reserved tokens".into(),
            ));
        }
        Ok(())
    }
}

/// Labeled examples plus the label mapping that describes their classes.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub mapping: LabelMapping,
}

impl Dataset {
    pub fn new(examples: Vec<Example>, mapping: LabelMapping) -> Result<Self> {
        let known: HashSet<&str> = mapping.labels().collect();
        if let Some((i, e)) = examples
            .iter()
            .enumerate()
            .find(|(_, e)| !known.contains(e.label.as_str()))
        {
            return Err(Error::Schema {
                line: i + 1,
                message: format!("label {:?} is missing from the label mapping", e.label),
            });
        }
        Ok(Dataset { examples, mapping })
    }

    pub fn from_synthetic(task: SyntheticTask) -> Self {
        Dataset {
            examples: task.examples,
            mapping: task.mapping,
        }
    }

    pub fn labels(&self) -> Vec<String> {
        self.mapping.labels().map(str::to_string).collect()
    }

    /// Keeps the listed labels and their examples.
    pub fn restrict(&self, labels: &[String]) -> Result<Self> {
        if let Some(bad) = labels.iter().find(|l| self.mapping.get(l).is_none()) {
            return Err(Error::LabelSchema {
                label: bad.clone(),
                message: "not in the label mapping".into(),
            });
        }
        let keep: HashSet<&str> = labels.iter().map(String::as_str).collect();
        Ok(Dataset {
            examples: self
                .examples
                .iter()
                .filter(|e| keep.contains(e.label.as_str()))
                .cloned()
                .collect(),
            mapping: self.mapping.restrict(labels),
        })
    }

    pub fn fingerprint(&self) -> u64 {
        let mut fp = Fingerprint::new().str(&self.mapping.to_json());
        for e in &self.examples {
            fp = fp.str(&e.text).str(&e.label);
        }
        fp.finish()
    }
}

/// Per class: 80% train, 10% valid, the rest test, from a fixed shuffle.
pub fn full_split(pool: &[Example]) -> (Vec<Example>, Vec<Example>, Vec<Example>) {
    let (mut train, mut valid, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for class in labels_in_order(pool) {
        let mut members: Vec<&Example> = pool.iter().filter(|e| e.label == class).collect();
        members.shuffle(&mut stream(fnv1a(class.as_bytes()), "full-split"));
        let n = members.len();
        let n_train = n * 8 / 10;
        let n_valid = n / 10;
        for (i, e) in members.into_iter().enumerate() {
            let dst = if i < n_train {
                &mut train
            } else if i < n_train + n_valid {
                &mut valid
            } else {
                &mut test
            };
            dst.push(e.clone());
        }
    }
    (train, valid, test)
}

/// A trained model of any method.
pub enum TrainedModel {
    Tcm(TcmModel),
    Free(FreeLabelModel),
    TaskHead(TaskHeadModel),
    TwoEncoder(TwoEncoderModel),
}

impl TrainedModel {
    pub fn classifier(&self) -> &dyn Classifier {
        match self {
            TrainedModel::Tcm(m) => m,
            TrainedModel::Free(m) => m,
            TrainedModel::TaskHead(m) => m,
            TrainedModel::TwoEncoder(m) => m,
        }
    }

    pub fn classifier_mut(&mut self) -> &mut dyn Classifier {
        match self {
            TrainedModel::Tcm(m) => m,
            TrainedModel::Free(m) => m,
            TrainedModel::TaskHead(m) => m,
            TrainedModel::TwoEncoder(m) => m,
        }
    }

    /// Label representations the model scores against; `None` for the task head.
    pub fn label_embeddings(&self) -> Result<Option<Tensor>> {
        Ok(match self {
            TrainedModel::Tcm(m) => Some(m.build_label_cache()?.matrix().clone()),
            TrainedModel::Free(m) => Some(m.label_matrix().clone()),
            TrainedModel::TwoEncoder(m) => Some(m.encode_labels()?),
            TrainedModel::TaskHead(_) => None,
        })
    }

    pub fn similarity_report(&self) -> Result<Option<SimilarityReport>> {
        let names = self.classifier().labels().names().to_vec();
        Ok(self
            .label_embeddings()?
            .map(|l| SimilarityReport::from_embeddings(names, &l)))
    }
}

/// Builds the untrained model for `method`.
pub fn build_model(
    method: Method,
    encoder: &EncoderConfig,
    vocab: Vocab,
    labels: LabelSet,
    hyper: TcmHyper,
    seed: u64,
) -> Result<TrainedModel> {
    Ok(match method {
        Method::Tcm => TrainedModel::Tcm(TcmModel::new(encoder, vocab, labels, hyper)?),
        Method::TcmNoreg => TrainedModel::Tcm(TcmModel::new(
            encoder,
            vocab,
            labels,
            TcmHyper {
                alpha: 0.0,
                ..hyper
            },
        )?),
        Method::TcmInit => TrainedModel::Free(FreeLabelModel::from_descriptions(TcmModel::new(
            encoder, vocab, labels, hyper,
        )?)?),
        Method::FreeRandom => TrainedModel::Free(FreeLabelModel::random(
            TcmModel::new(encoder, vocab, labels, hyper)?,
            seed,
        )?),
        Method::TaskHead => TrainedModel::TaskHead(TaskHeadModel::new(encoder, vocab, labels)?),
        Method::TwoEncoder => {
            TrainedModel::TwoEncoder(TwoEncoderModel::new(encoder, vocab, labels, hyper)?)
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub accuracy: f64,
}

impl Scores {
    pub fn from_confusion(m: &Confusion) -> Result<Self> {
        Ok(Scores {
            macro_f1: macro_f1(m)?,
            micro_f1: micro_f1(m)?,
            accuracy: accuracy(m)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    /// Label subset of this seed when it differs from the run's labels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
    #[serde(flatten)]
    pub scores: Scores,
    pub confusion: Confusion,
}

/// Everything produced by one seed of a protocol run.
pub struct SeedRun {
    pub result: SeedResult,
    pub history: History,
    pub model: TrainedModel,
    pub episode: Episode,
}

/// Seed for encoder initialization in run `seed`.
pub fn init_seed(cfg: &ProtocolConfig, seed: u64) -> u64 {
    Fingerprint::new().u64(cfg.encoder.seed).u64(seed).finish()
}

/// Samples the split for `seed`, trains `method` on it and scores the
/// held-out test examples.
pub fn run_seed(
    method: Method,
    data: &Dataset,
    cfg: &ProtocolConfig,
    seed: u64,
) -> Result<SeedRun> {
    cfg.validate()?;
    let (episode, test) = match cfg.shots {
        Shots::K(k) => sample_episode_with_rest(&data.examples, k, seed)?,
        Shots::Full => {
            let (train, valid, test) = full_split(&data.examples);
            (
                Episode {
                    k: 0,
                    seed,
                    train,
                    valid,
                },
                test,
            )
        }
    };
    let labels = LabelSet::from_mapping(&data.mapping, cfg.mode, Some(&episode))?;
    let corpus = episode
        .train
        .iter()
        .map(|e| e.text.as_str())
        .chain(labels.texts().iter().map(String::as_str));
    let vocab = Vocab::build(corpus, cfg.min_freq, cfg.encoder.vocab_size - 4)?;
    let encoder = EncoderConfig {
        vocab_size: vocab.len(),
        seed: init_seed(cfg, seed),
        ..cfg.encoder.clone()
    };
    let mut model = build_model(method, &encoder, vocab, labels, cfg.hyper, seed)?;
    let train_cfg = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let clf = model.classifier_mut();
    let train = clf.encode_split(&episode.train)?;
    let valid = clf.encode_split(&episode.valid)?;
    let test = clf.encode_split(&test)?;
    let history = fit(clf, &train, &valid, &train_cfg)?;
    let confusion = evaluate(model.classifier(), &test)?;
    Ok(SeedRun {
        result: SeedResult {
            seed,
            labels: None,
            scores: Scores::from_confusion(&confusion)?,
            confusion,
        },
        history,
        model,
        episode,
    })
}

/// Per-seed scores with their mean and sample standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub method: Method,
    pub labels: Vec<String>,
    pub config: ProtocolConfig,
    pub config_fingerprint: String,
    pub seeds: Vec<SeedResult>,
    pub mean: Scores,
    /// Absent with fewer than two seeds.
    pub std: Option<Scores>,
}

fn mean_std(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() >= 2)
        .then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (mean, std)
}

impl RunResult {
    /// Aggregates per-seed results, ordered by seed.
    pub fn aggregate(
        method: Method,
        labels: Vec<String>,
        config: ProtocolConfig,
        fingerprint: u64,
        mut seeds: Vec<SeedResult>,
    ) -> Result<Self> {
        if seeds.is_empty() {
            return Err(Error::Input("no seeds to aggregate".into()));
        }
        seeds.sort_by_key(|s| s.seed);
        let stat = |f: fn(&Scores) -> f64| {
            mean_std(&seeds.iter().map(|s| f(&s.scores)).collect::<Vec<_>>())
        };
        let (ma, ma_sd) = stat(|s| s.macro_f1);
        let (mi, mi_sd) = stat(|s| s.micro_f1);
        let (ac, ac_sd) = stat(|s| s.accuracy);
        let std = match (ma_sd, mi_sd, ac_sd) {
            (Some(macro_f1), Some(micro_f1), Some(accuracy)) => Some(Scores {
                macro_f1,
                micro_f1,
                accuracy,
            }),
            _ => None,
        };
        Ok(RunResult {
            method,
            labels,
            config,
            config_fingerprint: format!("{fingerprint:016x}"),
            seeds,
            mean: Scores {
                macro_f1: ma,
                micro_f1: mi,
                accuracy: ac,
            },
            std,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data") + "\n"
    }

    /// Confusion matrix of one seed as CSV with label headers.
    pub fn confusion_csv(&self, seed_index: usize) -> String {
        super::report::matrix_csv(&self.labels, &self.seeds[seed_index].confusion, |v| {
            v.to_string()
        })
    }
}

pub fn config_fingerprint(
    method: Method,
    data: &Dataset,
    cfg: &ProtocolConfig,
    seeds: &[u64],
) -> u64 {
    let cfg_json = serde_json::to_string(cfg).expect("plain config");
    let mut fp = Fingerprint::new()
        .str(method.as_str())
        .u64(data.fingerprint())
        .str(&cfg_json);
    for &s in seeds {
        fp = fp.u64(s);
    }
    fp.finish()
}

/// Runs `method` once per seed and aggregates. Seeds run one after another.
pub fn run_protocol_detailed(
    method: Method,
    data: &Dataset,
    cfg: &ProtocolConfig,
    seeds: &[u64],
) -> Result<(RunResult, Vec<SeedRun>)> {
    if seeds.is_empty() {
        return Err(Error::Input("seeds must be nonempty".into()));
    }
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let run = run_seed(method, data, cfg, seed).map_err(|e| Error::Seed {
            seed,
            source: Box::new(e),
        })?;
        runs.push(run);
    }
    let result = RunResult::aggregate(
        method,
        data.labels(),
        cfg.clone(),
        config_fingerprint(method, data, cfg, seeds),
        runs.iter().map(|r| r.result.clone()).collect(),
    )?;
    Ok((result, runs))
}

pub fn run_protocol(
    method: Method,
    data: &Dataset,
    cfg: &ProtocolConfig,
    seeds: &[u64],
) -> Result<RunResult> {
    run_protocol_detailed(method, data, cfg, seeds).map(|(r, _)| r)
}
