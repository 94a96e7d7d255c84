//! Shared conventions for the delimited-text artifacts.
//!
//! Files are comma separated. Lines starting with `#` are comments; comments of
//! the form `# key: value` carry metadata (config hash, seed, direction...).
//! Floats are written with Rust's shortest round-trip formatting so that a
//! write/read cycle is bit exact.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::{Error, Result};

/// Ordered `# key: value` metadata written at the top of every artifact.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Metadata {
    entries: Vec<(String, String)>,
}

impl Metadata {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.set(key, value);
        self
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn write_to(&self, out: &mut String) {
        for (k, v) in &self.entries {
            let _ = writeln!(out, "# {k}: {v}");
        }
    }

    /// Collects every `# key: value` comment in `text`, in order.
    pub fn parse(text: &str) -> Self {
        let mut meta = Self::new();
        for line in text.lines() {
            if let Some(rest) = line.trim_start().strip_prefix('#') {
                if let Some((k, v)) = rest.split_once(':') {
                    let k = k.trim();
                    if !k.is_empty() && !k.contains(' ') {
                        meta.set(k, v.trim());
                    }
                }
            }
        }
        meta
    }
}

/// Non-empty, non-comment lines with their 1-based line numbers.
pub fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

pub fn split_fields(line: &str) -> Vec<&str> {
    line.split(',').map(str::trim).collect()
}

pub fn parse_f64(field: &str, row: usize, column: usize) -> Result<f64> {
    field.parse::<f64>().map_err(|_| Error::Parse {
        row,
        column,
        message: format!("expected a number, found {field:?}"),
    })
}

pub fn parse_usize(field: &str, row: usize, column: usize) -> Result<usize> {
    field.parse::<usize>().map_err(|_| Error::Parse {
        row,
        column,
        message: format!("expected a non-negative integer, found {field:?}"),
    })
}

pub fn join_f64(values: &[f64]) -> String {
    let mut s = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        let _ = write!(s, "{v}");
    }
    s
}

/// Key/value lookup over a parsed header that reports missing keys as format errors.
pub fn require<'a>(meta: &'a Metadata, key: &str) -> Result<&'a str> {
    meta.get(key)
        .ok_or_else(|| Error::format(0, format!("missing header field `{key}`")))
}

pub(crate) fn index_by_name(names: &[String]) -> BTreeMap<&str, usize> {
    names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn metadata_round_trip() {
        let meta = Metadata::new().with("seed", 42).with("direction", "forward");
        let mut s = String::new();
        meta.write_to(&mut s);
        s.push_str("a,b\n# just a comment\n");
        assert_eq!(Metadata::parse(&s), meta);
    }

    #[test]
    fn data_lines_skip_comments_and_blanks() {
        let text = "# x: 1\n\n1,2\n  # c\n3,4\n";
        let lines: Vec<_> = data_lines(text).collect();
        assert_eq!(lines, vec![(3, "1,2"), (5, "3,4")]);
    }

    #[test]
    fn parse_error_names_position() {
        match parse_f64("abc", 4, 2) {
            Err(Error::Parse { row: 4, column: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn float_text_is_bit_exact(v in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            let s = join_f64(&[v]);
            prop_assert_eq!(parse_f64(&s, 1, 1).unwrap().to_bits(), v.to_bits());
        }
    }
}
