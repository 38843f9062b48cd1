use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Natural-language descriptions available for one label.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelDescription {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub definition: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample: Option<String>,
}

/// Contents of a label mapping file: a JSON object from label to
/// description, kept in file order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LabelMapping {
    entries: Vec<(String, LabelDescription)>,
}

impl LabelMapping {
    pub fn new(entries: Vec<(String, LabelDescription)>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for (label, _) in &entries {
            if !seen.insert(label.as_str()) {
                return Err(Error::LabelSchema {
                    label: label.clone(),
                    message: "duplicate label".into(),
                });
            }
        }
        Ok(LabelMapping { entries })
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(l, _)| l.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, label: &str) -> Option<&LabelDescription> {
        self.entries
            .iter()
            .find(|(l, _)| l == label)
            .map(|(_, d)| d)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &LabelDescription)> {
        self.entries.iter().map(|(l, d)| (l.as_str(), d))
    }

    /// Keeps the entries whose label is in `keep`, in mapping order.
    pub fn restrict(&self, keep: &[String]) -> Self {
        LabelMapping {
            entries: self
                .entries
                .iter()
                .filter(|(l, _)| keep.contains(l))
                .cloned()
                .collect(),
        }
    }

    pub fn parse(json: &str) -> Result<Self> {
        let map: serde_json::Map<String, serde_json::Value> = serde_json::from_str(json)?;
        let entries = map
            .into_iter()
            .map(|(label, v)| {
                let desc: LabelDescription =
                    serde_json::from_value(v).map_err(|e| Error::LabelSchema {
                        label: label.clone(),
                        message: e.to_string(),
                    })?;
                Ok((label, desc))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(entries)
    }

    pub fn to_json(&self) -> String {
        let map: serde_json::Map<String, serde_json::Value> = self
            .entries
            .iter()
            .map(|(l, d)| (l.clone(), serde_json::to_value(d).expect("plain struct")))
            .collect();
        serde_json::to_string_pretty(&map).expect("plain map")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}
