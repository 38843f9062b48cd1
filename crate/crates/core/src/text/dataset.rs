use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One annotated input.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Example {
    pub text: String,
    pub label: String,
}

impl Example {
    pub fn new(text: impl Into<String>, label: impl Into<String>) -> Self {
        Example {
            text: text.into(),
            label: label.into(),
        }
    }
}

/// Parses JSON lines with string fields `text` and `label`. Blank lines are skipped.
pub fn parse_jsonl(content: &str) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let field = |name: &str| -> Result<String> {
            match value.get(name) {
                Some(serde_json::Value::String(s)) => Ok(s.clone()),
                Some(_) => Err(Error::Schema {
                    line: line_no,
                    message: format!("field {name:?} must be a string"),
                }),
                None => Err(Error::Schema {
                    line: line_no,
                    message: format!("missing field {name:?}"),
                }),
            }
        };
        out.push(Example {
            text: field("text")?,
            label: field("label")?,
        });
    }
    Ok(out)
}

pub fn load_jsonl(path: &Path) -> Result<Vec<Example>> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&content)
}

pub fn to_jsonl(examples: &[Example]) -> String {
    let mut out = String::new();
    for e in examples {
        out.push_str(&serde_json::to_string(e).expect("strings serialize"));
        out.push('\n');
    }
    out
}

pub fn save_jsonl(path: &Path, examples: &[Example]) -> Result<()> {
    fs::write(path, to_jsonl(examples)).map_err(|e| Error::io(path, e))
}

/// Label names in order of first appearance.
pub fn labels_in_order(examples: &[Example]) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    examples
        .iter()
        .filter(|e| seen.insert(e.label.as_str()))
        .map(|e| e.label.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_single_line() {
        let ex = parse_jsonl(r#"{"text":"hi","label":"joy"}"#).unwrap();
        assert_eq!(ex, vec![Example::new("hi", "joy")]);
    }

    #[test]
    fn empty_input_is_empty_list() {
        assert!(parse_jsonl("").unwrap().is_empty());
    }

    #[test]
    fn missing_label_names_line() {
        let err = parse_jsonl(r#"{"text":"hi"}"#).unwrap_err();
        assert!(matches!(err, Error::Schema { line: 1, .. }), "{err}");
        assert!(err.to_string().contains("label"));
    }

    #[test]
    fn malformed_line_reports_number() {
        let err = parse_jsonl("{\"text\":\"a\",\"label\":\"b\"}\n{oops\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn order_preserved_and_round_trips() {
        let ex = vec![Example::new("b", "y"), Example::new("a \"q\"", "x")];
        assert_eq!(parse_jsonl(&to_jsonl(&ex)).unwrap(), ex);
        assert_eq!(labels_in_order(&ex), vec!["y", "x"]);
    }

    #[test]
    fn load_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        save_jsonl(&path, &[Example::new("hi", "joy")]).unwrap();
        assert_eq!(load_jsonl(&path).unwrap().len(), 1);
        assert!(matches!(
            load_jsonl(&dir.path().join("missing")),
            Err(Error::Io { .. })
        ));
    }
}
