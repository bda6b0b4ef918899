//! Flat `key = value` text format shared by scenario and config files.
//!
//! One entry per line, `#` starts a comment, blank lines are ignored.

use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct KvError {
    pub line: usize,
    pub field: Option<String>,
    pub message: String,
}

impl KvError {
    pub fn new(line: usize, field: Option<&str>, message: impl Into<String>) -> Self {
        KvError { line, field: field.map(str::to_string), message: message.into() }
    }
}

impl fmt::Display for KvError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.field {
            Some(field) => write!(f, "line {}: field `{}`: {}", self.line, field, self.message),
            None => write!(f, "line {}: {}", self.line, self.message),
        }
    }
}

pub fn parse(text: &str) -> Result<Vec<Entry>, KvError> {
    let mut entries: Vec<Entry> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let content = content.trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(KvError::new(line, None, format!("expected `key = value`, found `{content}`")));
        };
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() {
            return Err(KvError::new(line, None, "empty key"));
        }
        if entries.iter().any(|e| e.key == key) {
            return Err(KvError::new(line, Some(key), "duplicate key"));
        }
        entries.push(Entry { line, key: key.to_string(), value: value.to_string() });
    }
    Ok(entries)
}

pub fn parse_f64(entry: &Entry) -> Result<f64, KvError> {
    entry
        .value
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| KvError::new(entry.line, Some(&entry.key), format!("expected a number, found `{}`", entry.value)))
}

pub fn parse_u64(entry: &Entry) -> Result<u64, KvError> {
    entry
        .value
        .parse::<u64>()
        .map_err(|_| KvError::new(entry.line, Some(&entry.key), format!("expected an unsigned integer, found `{}`", entry.value)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_and_blank_lines() {
        let entries = parse("# header\n\nkind = deadlock  # trailing\nseed=4\n").unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[0].key, "kind");
        assert_eq!(entries[0].value, "deadlock");
        assert_eq!(entries[1].line, 4);
    }

    #[test]
    fn missing_equals_reports_line() {
        let err = parse("kind = normal\nbogus line\n").unwrap_err();
        assert_eq!(err.line, 2);
    }

    #[test]
    fn duplicate_key_is_rejected() {
        let err = parse("seed = 1\nseed = 2\n").unwrap_err();
        assert_eq!(err.field.as_deref(), Some("seed"));
    }
}
