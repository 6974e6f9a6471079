//! The plain-text `key = value` format shared by configs and target files.
//!
//! Lines are trimmed; blank lines and lines starting with `#` are skipped.
//! `[section]` headers prefix the keys that follow with `section.`.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("line {line}: {message}")]
pub struct FormatError {
    pub line: usize,
    pub message: String,
}

impl FormatError {
    pub fn new(line: usize, message: impl Into<String>) -> Self {
        Self {
            line,
            message: message.into(),
        }
    }
}

/// One `key = value` entry with its 1-based source line.
#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

/// A non-`key = value` line (used for data rows such as sensor pairs).
#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub fields: Vec<String>,
    pub line: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Document {
    pub entries: Vec<Entry>,
    pub rows: Vec<Row>,
}

pub fn parse(text: &str) -> Result<Document, FormatError> {
    let mut doc = Document::default();
    let mut section = String::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(inner) = line.strip_prefix('[') {
            let name = inner
                .strip_suffix(']')
                .ok_or_else(|| FormatError::new(line_no, "unterminated section header"))?
                .trim();
            if name.is_empty() || name.contains(char::is_whitespace) {
                return Err(FormatError::new(line_no, format!("invalid section name '{name}'")));
            }
            section = name.to_string();
            continue;
        }
        if let Some((k, v)) = line.split_once('=') {
            let key = k.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(FormatError::new(line_no, format!("invalid key '{key}'")));
            }
            let full = if section.is_empty() {
                key.to_string()
            } else {
                format!("{section}.{key}")
            };
            doc.entries.push(Entry {
                key: full,
                value: v.trim().to_string(),
                line: line_no,
            });
        } else {
            doc.rows.push(Row {
                fields: line.split_whitespace().map(str::to_string).collect(),
                line: line_no,
            });
        }
    }
    Ok(doc)
}

pub fn parse_f64(value: &str, line: usize, key: &str) -> Result<f64, FormatError> {
    value
        .trim()
        .parse::<f64>()
        .map_err(|_| FormatError::new(line, format!("{key}: expected a number, got '{value}'")))
}

pub fn parse_usize(value: &str, line: usize, key: &str) -> Result<usize, FormatError> {
    value
        .trim()
        .parse::<usize>()
        .map_err(|_| FormatError::new(line, format!("{key}: expected a non-negative integer, got '{value}'")))
}

pub fn parse_u64(value: &str, line: usize, key: &str) -> Result<u64, FormatError> {
    value
        .trim()
        .parse::<u64>()
        .map_err(|_| FormatError::new(line, format!("{key}: expected a non-negative integer, got '{value}'")))
}

pub fn parse_bool(value: &str, line: usize, key: &str) -> Result<bool, FormatError> {
    match value.trim() {
        "true" | "yes" | "on" => Ok(true),
        "false" | "no" | "off" => Ok(false),
        other => Err(FormatError::new(line, format!("{key}: expected true/false, got '{other}'"))),
    }
}

/// Comma- or whitespace-separated list of numbers.
pub fn parse_f64_list(value: &str, line: usize, key: &str) -> Result<Vec<f64>, FormatError> {
    value
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| parse_f64(s, line, key))
        .collect()
}

pub fn format_f64_list(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| format!("{v}"))
        .collect::<Vec<_>>()
        .join(", ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_prefix_keys() {
        let doc = parse("seed = 3\n\n# note\n[wormhole]\nF = 0.1\n0 1 1 0.5\n").unwrap();
        assert_eq!(doc.entries[0].key, "seed");
        assert_eq!(doc.entries[1].key, "wormhole.F");
        assert_eq!(doc.entries[1].line, 5);
        assert_eq!(doc.rows[0].fields, vec!["0", "1", "1", "0.5"]);
    }

    #[test]
    fn bad_header_names_line() {
        let err = parse("a = 1\n[oops\n").unwrap_err();
        assert_eq!(err.line, 2);
    }

    #[test]
    fn number_lists() {
        assert_eq!(parse_f64_list("1, 2.5  -3", 1, "k").unwrap(), vec![1.0, 2.5, -3.0]);
        assert!(parse_f64_list("1, x", 4, "k").is_err());
    }
}
