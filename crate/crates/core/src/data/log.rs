use std::fmt::Write as _;
use std::path::Path;

use crate::error::{PadError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Label {
    Click(bool),
    /// Explicit rating in `1..=5`.
    Rating(u8),
}

impl Label {
    /// Clicks count as given; ratings count when strictly above 3.
    pub fn is_positive(self) -> bool {
        match self {
            Label::Click(c) => c,
            Label::Rating(r) => r > 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Interaction {
    pub user: String,
    pub item: String,
    pub timestamp: u64,
    pub label: Label,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct InteractionLog {
    pub records: Vec<Interaction>,
}

impl InteractionLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

fn parse_label(s: &str) -> std::result::Result<Label, String> {
    match s {
        "1" => Ok(Label::Click(true)),
        "0" => Ok(Label::Click(false)),
        _ => {
            let r = s
                .strip_prefix("r:")
                .ok_or_else(|| format!("label must be 1, 0 or r:<1-5>, got {s:?}"))?;
            let v: u8 = r.parse().map_err(|_| format!("bad rating {r:?}"))?;
            if !(1..=5).contains(&v) {
                return Err(format!("rating {v} outside 1-5"));
            }
            Ok(Label::Rating(v))
        }
    }
}

/// Parse `user \t item \t timestamp \t label` lines. Blank lines are skipped.
pub fn parse_tsv(text: &str, source: &str) -> Result<InteractionLog> {
    let mut records = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| PadError::Parse {
            path: source.to_string(),
            line: n + 1,
            msg,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(err(format!("expected 4 tab-separated fields, got {}", fields.len())));
        }
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(err("empty user or item id".into()));
        }
        let timestamp: u64 = fields[2]
            .parse()
            .map_err(|_| err(format!("timestamp must be a non-negative integer, got {:?}", fields[2])))?;
        let label = parse_label(fields[3]).map_err(err)?;
        records.push(Interaction {
            user: fields[0].to_string(),
            item: fields[1].to_string(),
            timestamp,
            label,
        });
    }
    Ok(InteractionLog { records })
}

pub fn load_tsv(path: &Path) -> Result<InteractionLog> {
    let bytes = std::fs::read(path).map_err(|e| PadError::io(path, e))?;
    let text = String::from_utf8(bytes).map_err(|e| PadError::Parse {
        path: path.display().to_string(),
        line: 0,
        msg: format!("not valid UTF-8: {e}"),
    })?;
    parse_tsv(&text, &path.display().to_string())
}

pub fn write_tsv(path: &Path, log: &InteractionLog) -> Result<()> {
    let mut out = String::new();
    for r in &log.records {
        let label = match r.label {
            Label::Click(true) => "1".to_string(),
            Label::Click(false) => "0".to_string(),
            Label::Rating(v) => format!("r:{v}"),
        };
        writeln!(out, "{}\t{}\t{}\t{}", r.user, r.item, r.timestamp, label).expect("string write");
    }
    std::fs::write(path, out).map_err(|e| PadError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels() {
        let log = parse_tsv("u\ti\t5\tr:4\nu\tj\t6\tr:3\nu\tk\t7\t1\nu\tl\t8\t0\n", "t").unwrap();
        let pos: Vec<bool> = log.records.iter().map(|r| r.label.is_positive()).collect();
        assert_eq!(pos, vec![true, false, true, false]);
    }

    #[test]
    fn empty_is_fine() {
        assert!(parse_tsv("", "t").unwrap().is_empty());
    }

    #[test]
    fn located_errors() {
        let e = parse_tsv("u\ti\t1\t1\nu\ti\t-3\t1\n", "f.tsv").unwrap_err();
        assert!(matches!(e, PadError::Parse { line: 2, .. }), "{e}");
        let e = parse_tsv("u\ti\t1\tr:6\n", "f.tsv").unwrap_err();
        assert!(e.to_string().contains("outside 1-5"), "{e}");
        assert!(parse_tsv("u\ti\t1\n", "f").is_err());
        assert!(parse_tsv("u\ti\t1\tyes\n", "f").is_err());
    }
}
