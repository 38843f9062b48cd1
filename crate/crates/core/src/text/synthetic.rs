//! Synthetic many-class corpora with controllable label information.
//!
//! Each class owns a disjoint set of signal words. An example mixes a few of
//! its class's signal words with shared noise words. The three label
//! descriptions mirror the usual mappings: the definition enumerates every
//! signal word, the name is a fresh word that never occurs in any example,
//! and the sample is one extra generated example kept out of the corpus.
//! Optionally, consecutive class pairs also share signal words, which makes
//! their definitions near-synonymous.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::dataset::Example;
use super::mapping::{LabelDescription, LabelMapping};
use crate::error::{Error, Result};
use crate::rng::stream;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub per_class: usize,
    /// Size of the pseudo-word pool that signal, name and noise words are drawn from.
    pub vocab_size: usize,
    pub signal_tokens_per_class: usize,
    pub noise_len: usize,
    pub seed: u64,
    /// Signal words drawn (without replacement) into each example.
    #[serde(default = "default_signal_per_example")]
    pub signal_per_example: usize,
    /// Extra signal words shared by classes `2i` and `2i + 1`.
    #[serde(default)]
    pub shared_signal: usize,
}

fn default_signal_per_example() -> usize {
    2
}

impl SyntheticConfig {
    pub fn new(
        classes: usize,
        per_class: usize,
        vocab_size: usize,
        signal_tokens_per_class: usize,
        noise_len: usize,
        seed: u64,
    ) -> Self {
        SyntheticConfig {
            classes,
            per_class,
            vocab_size,
            signal_tokens_per_class,
            noise_len,
            seed,
            signal_per_example: default_signal_per_example(),
            shared_signal: 0,
        }
    }

    fn words_needed(&self) -> usize {
        let pairs = self.classes.div_ceil(2);
        self.classes * (self.signal_tokens_per_class + 1)
            + pairs * self.shared_signal
            + usize::from(self.noise_len > 0)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("classes", self.classes),
            ("per_class", self.per_class),
            ("vocab_size", self.vocab_size),
            ("signal_tokens_per_class", self.signal_tokens_per_class),
            ("signal_per_example", self.signal_per_example),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("synthetic.{name} must be positive")));
        }
        if self.words_needed() > self.vocab_size {
            return Err(Error::Config(format!(
                "synthetic.vocab_size {} is too small: {} classes need {} distinct words",
                self.vocab_size,
                self.classes,
                self.words_needed()
            )));
        }
        Ok(())
    }
}

/// Generated corpus plus everything needed to build label sets and oracles.
#[derive(Clone, Debug)]
pub struct SyntheticTask {
    pub examples: Vec<Example>,
    pub mapping: LabelMapping,
    /// Per class, the signal words an example of that class may contain.
    pub signal: Vec<Vec<String>>,
    pub noise: Vec<String>,
}

impl SyntheticTask {
    pub fn labels(&self) -> Vec<String> {
        self.mapping.labels().map(str::to_string).collect()
    }
}

pub fn class_label(c: usize) -> String {
    format!("class{c:02}")
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticTask> {
    cfg.validate()?;
    let width = (cfg.vocab_size - 1).to_string().len();
    let mut words: Vec<String> = (0..cfg.vocab_size)
        .map(|i| format!("w{i:0width$}"))
        .collect();
    words.shuffle(&mut stream(cfg.seed, "synthetic/words"));
    let mut pool = words.into_iter();
    let mut take = |n: usize| -> Vec<String> { pool.by_ref().take(n).collect() };

    let own: Vec<Vec<String>> = (0..cfg.classes)
        .map(|_| take(cfg.signal_tokens_per_class))
        .collect();
    let names = take(cfg.classes);
    let shared: Vec<Vec<String>> = (0..cfg.classes.div_ceil(2))
        .map(|_| take(cfg.shared_signal))
        .collect();
    let noise: Vec<String> = pool.collect();

    let signal: Vec<Vec<String>> = (0..cfg.classes)
        .map(|c| own[c].iter().chain(&shared[c / 2]).cloned().collect())
        .collect();

    let mut rng = stream(cfg.seed, "synthetic/examples");
    let mut make = |c: usize| -> String {
        let m = cfg.signal_per_example.min(signal[c].len());
        let mut words: Vec<&str> = signal[c]
            .choose_multiple(&mut rng, m)
            .map(String::as_str)
            .collect();
        for _ in 0..cfg.noise_len {
            words.push(&noise[rng.random_range(0..noise.len())]);
        }
        words.shuffle(&mut rng);
        words.join(" ")
    };

    let mut examples = Vec::with_capacity(cfg.classes * cfg.per_class);
    let mut entries = Vec::with_capacity(cfg.classes);
    for c in 0..cfg.classes {
        let label = class_label(c);
        for _ in 0..cfg.per_class {
            examples.push(Example::new(make(c), label.clone()));
        }
        let sample = make(c);
        entries.push((
            label,
            LabelDescription {
                name: names[c].clone(),
                definition: Some(definition_text(&signal[c])),
                sample: Some(sample),
            },
        ));
    }
    Ok(SyntheticTask {
        examples,
        mapping: LabelMapping::new(entries)?,
        signal,
        noise,
    })
}

fn definition_text(words: &[String]) -> String {
    match words {
        [] => "a text".into(),
        [only] => format!("a text that mentions {only} ."),
        [init @ .., last] => format!("a text that mentions {} or {last} .", init.join(" , ")),
    }
}
