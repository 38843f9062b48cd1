use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Fingerprint};
use crate::text::{Episode, LabelMapping};

/// Which description stands in for a label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MappingMode {
    Name,
    Definition,
    Sample,
}

impl MappingMode {
    pub const ALL: [MappingMode; 3] = [
        MappingMode::Name,
        MappingMode::Definition,
        MappingMode::Sample,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MappingMode::Name => "name",
            MappingMode::Definition => "definition",
            MappingMode::Sample => "sample",
        }
    }
}

impl std::fmt::Display for MappingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for MappingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MappingMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                Error::Input(format!(
                    "unknown mapping mode {s:?} (expected name, definition or sample)"
                ))
            })
    }
}

/// Ordered labels with one text per label. The order fixes the column order
/// of every score matrix built against this set.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    names: Vec<String>,
    mode: MappingMode,
    texts: Vec<String>,
    /// Episode seed used to draw sample-mode texts from training data.
    sample_seed: Option<u64>,
}

impl LabelSet {
    pub fn new(names: Vec<String>, mode: MappingMode, texts: Vec<String>) -> Result<Self> {
        if names.len() != texts.len() {
            return Err(Error::Dimension {
                op: "label set",
                lhs: vec![names.len()],
                rhs: vec![texts.len()],
            });
        }
        let mut seen = std::collections::HashSet::new();
        for (name, text) in names.iter().zip(&texts) {
            if !seen.insert(name) {
                return Err(Error::LabelSchema {
                    label: name.clone(),
                    message: "duplicate label".into(),
                });
            }
            if text.trim().is_empty() {
                return Err(Error::LabelSchema {
                    label: name.clone(),
                    message: format!("empty {mode} text"),
                });
            }
        }
        Ok(LabelSet {
            names,
            mode,
            texts,
            sample_seed: None,
        })
    }

    /// Builds the label set for `mode` from a mapping, keeping mapping order.
    ///
    /// In sample mode a label uses the mapping's `sample` when present.
    /// Otherwise one training example of that class is drawn from `episode`
    /// with a stream keyed on the episode seed, so the choice is fixed for
    /// the run.
    pub fn from_mapping(
        mapping: &LabelMapping,
        mode: MappingMode,
        episode: Option<&Episode>,
    ) -> Result<Self> {
        let mut texts = Vec::with_capacity(mapping.len());
        let mut drew = false;
        for (label, desc) in mapping.iter() {
            let missing = |field: &str| Error::LabelSchema {
                label: label.to_string(),
                message: format!("missing {field}"),
            };
            let text = match mode {
                MappingMode::Name => desc.name.clone(),
                MappingMode::Definition => desc
                    .definition
                    .clone()
                    .ok_or_else(|| missing("definition"))?,
                MappingMode::Sample => match (&desc.sample, episode) {
                    (Some(s), _) => s.clone(),
                    (None, Some(ep)) => {
                        let pool: Vec<&str> = ep
                            .train
                            .iter()
                            .filter(|e| e.label == label)
                            .map(|e| e.text.as_str())
                            .collect();
                        let mut rng = stream(ep.seed, &format!("label-sample/{label}"));
                        drew = true;
                        pool.choose(&mut rng)
                            .ok_or_else(|| missing("sample"))?
                            .to_string()
                    }
                    (None, None) => return Err(missing("sample")),
                },
            };
            texts.push(text);
        }
        let mut set = Self::new(mapping.labels().map(str::to_string).collect(), mode, texts)?;
        if drew {
            set.sample_seed = episode.map(|e| e.seed);
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn texts(&self) -> &[String] {
        &self.texts
    }

    pub fn mode(&self) -> MappingMode {
        self.mode
    }

    pub fn sample_seed(&self) -> Option<u64> {
        self.sample_seed
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Keeps only the labels in `keep`, in this set's order.
    pub fn restrict(&self, keep: &[String]) -> Result<Self> {
        if let Some(unknown) = keep.iter().find(|k| self.index_of(k).is_none()) {
            return Err(Error::LabelSchema {
                label: unknown.clone(),
                message: "not in the label set".into(),
            });
        }
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| keep.contains(&self.names[i]))
            .collect();
        Ok(LabelSet {
            names: idx.iter().map(|&i| self.names[i].clone()).collect(),
            mode: self.mode,
            texts: idx.iter().map(|&i| self.texts[i].clone()).collect(),
            sample_seed: self.sample_seed,
        })
    }

    /// Class index for every label name, or an input error naming the first
    /// label that is not in the set.
    pub fn targets<'a>(&self, labels: impl IntoIterator<Item = &'a str>) -> Result<Vec<usize>> {
        labels
            .into_iter()
            .enumerate()
            .map(|(i, l)| {
                self.index_of(l).ok_or_else(|| {
                    Error::Input(format!(
                        "example {i} has label {l:?}, which is not in the label set"
                    ))
                })
            })
            .collect()
    }

    pub fn fingerprint(&self) -> u64 {
        let mut fp = Fingerprint::new()
            .str(self.mode.as_str())
            .u64(self.len() as u64);
        for (n, t) in self.names.iter().zip(&self.texts) {
            fp = fp.str(n).str(t);
        }
        fp.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::{Example, LabelDescription};

    fn mapping(sample: bool) -> LabelMapping {
        let d = |name: &str, def: &str| LabelDescription {
            name: name.into(),
            definition: Some(def.into()),
            sample: sample.then(|| format!("sample of {name}")),
        };
        LabelMapping::new(vec![
            ("joy".into(), d("joy", "feeling happy")),
            ("anger".into(), d("anger", "feeling mad")),
        ])
        .unwrap()
    }

    #[test]
    fn modes_pick_fields() {
        let m = mapping(true);
        let names = LabelSet::from_mapping(&m, MappingMode::Name, None).unwrap();
        assert_eq!(names.texts(), ["joy", "anger"]);
        let defs = LabelSet::from_mapping(&m, MappingMode::Definition, None).unwrap();
        assert_eq!(defs.texts(), ["feeling happy", "feeling mad"]);
        let samples = LabelSet::from_mapping(&m, MappingMode::Sample, None).unwrap();
        assert_eq!(samples.texts()[1], "sample of anger");
        assert_eq!(samples.sample_seed(), None);
        assert_ne!(names.fingerprint(), defs.fingerprint());
    }

    #[test]
    fn missing_definition_names_label() {
        let mut entries: Vec<_> = mapping(false)
            .iter()
            .map(|(l, d)| (l.to_string(), d.clone()))
            .collect();
        entries[1].1.definition = None;
        let m = LabelMapping::new(entries).unwrap();
        match LabelSet::from_mapping(&m, MappingMode::Definition, None) {
            Err(Error::LabelSchema { label, .. }) => assert_eq!(label, "anger"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sample_drawn_from_episode_is_fixed_by_seed() {
        let m = mapping(false);
        assert!(LabelSet::from_mapping(&m, MappingMode::Sample, None).is_err());
        let train: Vec<Example> = (0..6)
            .flat_map(|i| {
                [
                    Example::new(format!("j{i}"), "joy"),
                    Example::new(format!("a{i}"), "anger"),
                ]
            })
            .collect();
        let ep = |seed| Episode {
            k: 6,
            seed,
            train: train.clone(),
            valid: vec![],
        };
        let a = LabelSet::from_mapping(&m, MappingMode::Sample, Some(&ep(3))).unwrap();
        let b = LabelSet::from_mapping(&m, MappingMode::Sample, Some(&ep(3))).unwrap();
        assert_eq!(a, b);
        assert!(a.texts()[0].starts_with('j') && a.texts()[1].starts_with('a'));
        assert_eq!(a.sample_seed(), Some(3));
    }

    #[test]
    fn restrict_keeps_set_order() {
        let set = LabelSet::new(
            vec!["a".into(), "b".into(), "c".into()],
            MappingMode::Name,
            vec!["x".into(), "y".into(), "z".into()],
        )
        .unwrap();
        let sub = set.restrict(&["c".into(), "a".into()]).unwrap();
        assert_eq!(sub.names(), ["a", "c"]);
        assert_eq!(sub.texts(), ["x", "z"]);
        assert!(set.restrict(&["q".into()]).is_err());
        assert_eq!(set.targets(["c", "a"]).unwrap(), vec![2, 0]);
        assert!(set.targets(["q"]).is_err());
    }

    #[test]
    fn empty_text_rejected() {
        assert!(LabelSet::new(vec!["a".into()], MappingMode::Name, vec!["  ".into()]).is_err());
        assert_eq!(
            "definition".parse::<MappingMode>().unwrap(),
            MappingMode::Definition
        );
        assert!("title".parse::<MappingMode>().is_err());
    }
}
