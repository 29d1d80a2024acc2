//! Labeled corpus records and the TSV interchange format:
//! `text<TAB>attribute<TAB>domain`, UTF-8, attribute may be empty.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub text: String,
    /// Free-text attribute label; absent on domain-only records.
    pub attribute: Option<String>,
    /// Domain special token, e.g. `<dom:movie_review>`. Always present.
    pub domain: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledCorpus {
    pub records: Vec<CorpusRecord>,
    /// 1-based source line per record when loaded from a file (for error
    /// reporting); empty for synthetic corpora.
    lines: Vec<usize>,
}

impl LabeledCorpus {
    pub fn from_records(records: Vec<CorpusRecord>) -> Result<Self> {
        for (i, r) in records.iter().enumerate() {
            if r.text.is_empty() {
                return Err(Error::config(format!("record {i} has empty text")));
            }
            if r.domain.is_empty() {
                return Err(Error::config(format!("record {i} has no domain")));
            }
        }
        Ok(LabeledCorpus {
            records,
            lines: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Source line of record `i`, when known.
    pub fn source_line(&self, i: usize) -> Option<usize> {
        self.lines.get(i).copied()
    }

    pub fn texts(&self) -> Vec<String> {
        self.records.iter().map(|r| r.text.clone()).collect()
    }

    /// Distinct domain tags, sorted.
    pub fn domains(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.records.iter().map(|r| r.domain.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }

    /// Distinct attribute labels, sorted.
    pub fn attributes(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self
            .records
            .iter()
            .filter_map(|r| r.attribute.as_deref())
            .collect();
        set.into_iter().map(String::from).collect()
    }

    /// Domain of the first record carrying `attribute`.
    pub fn domain_of_attribute(&self, attribute: &str) -> Option<&str> {
        self.records
            .iter()
            .find(|r| r.attribute.as_deref() == Some(attribute))
            .map(|r| r.domain.as_str())
    }
}

/// Parse a TSV corpus. Errors carry the offending 1-based line number.
pub fn load_labeled_tsv(path: &Path) -> Result<LabeledCorpus> {
    let content = fs::read_to_string(path)?;
    parse_labeled_tsv(&content)
}

pub fn parse_labeled_tsv(content: &str) -> Result<LabeledCorpus> {
    let mut records = Vec::new();
    let mut lines = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        let lineno = idx + 1;
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(Error::Parse {
                line: lineno,
                reason: format!("expected 3 tab-separated columns, found {}", cols.len()),
            });
        }
        if cols[0].is_empty() {
            return Err(Error::Parse {
                line: lineno,
                reason: "empty text column".into(),
            });
        }
        if cols[2].is_empty() {
            return Err(Error::Parse {
                line: lineno,
                reason: "empty domain column".into(),
            });
        }
        records.push(CorpusRecord {
            text: cols[0].to_string(),
            attribute: if cols[1].is_empty() {
                None
            } else {
                Some(cols[1].to_string())
            },
            domain: cols[2].to_string(),
        });
        lines.push(lineno);
    }
    Ok(LabeledCorpus { records, lines })
}

/// Write a corpus in the TSV format; `load_labeled_tsv` round-trips it.
pub fn save_labeled_tsv(path: &Path, corpus: &LabeledCorpus) -> Result<()> {
    let mut out = String::new();
    for r in &corpus.records {
        out.push_str(&r.text);
        out.push('\t');
        if let Some(a) = &r.attribute {
            out.push_str(a);
        }
        out.push('\t');
        out.push_str(&r.domain);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_and_attributeless_records() {
        let corpus = parse_labeled_tsv(
            "great film\tpositive\t<dom:movie_review>\nsome text\t\t<dom:news>\n",
        )
        .unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(corpus.records[0].attribute.as_deref(), Some("positive"));
        assert_eq!(corpus.records[1].attribute, None);
        assert_eq!(corpus.records[1].domain, "<dom:news>");
        assert_eq!(corpus.source_line(1), Some(2));
    }

    #[test]
    fn two_column_line_errors_with_line_number() {
        let err = parse_labeled_tsv("ok\tpos\t<dom:a>\nbad line\tpos\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn round_trip_preserves_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.tsv");
        let corpus = LabeledCorpus::from_records(vec![
            CorpusRecord {
                text: "alpha beta".into(),
                attribute: Some("pos".into()),
                domain: "<dom:a>".into(),
            },
            CorpusRecord {
                text: "gamma".into(),
                attribute: None,
                domain: "<dom:b>".into(),
            },
        ])
        .unwrap();
        save_labeled_tsv(&path, &corpus).unwrap();
        let loaded = load_labeled_tsv(&path).unwrap();
        assert_eq!(loaded.records, corpus.records);
    }
}
