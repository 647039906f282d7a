use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const BUNDLED: &str = include_str!("../../data/ranges.txt");

#[derive(Debug, Error)]
pub enum RangeTableError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("range table has no `piano` entry")]
    MissingPiano,
    #[error("reading range table: {0}")]
    Io(#[from] std::io::Error),
}

/// Playable MIDI range per instrument. Names are matched case-insensitively.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstrumentRangeTable {
    ranges: BTreeMap<String, (u8, u8)>,
}

impl Default for InstrumentRangeTable {
    fn default() -> Self {
        InstrumentRangeTable::parse(BUNDLED).expect("bundled range table is valid")
    }
}

impl InstrumentRangeTable {
    /// Parses `name,min_midi,max_midi` records; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, RangeTableError> {
        let mut ranges = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |message: String| RangeTableError::Malformed {
                line: i + 1,
                message,
            };
            let parts: Vec<&str> = line.split(',').map(str::trim).collect();
            let [name, lo, hi] = parts[..] else {
                return Err(bad(format!("expected 3 fields, found {}", parts.len())));
            };
            let lo: u8 = lo.parse().map_err(|_| bad(format!("bad min `{lo}`")))?;
            let hi: u8 = hi.parse().map_err(|_| bad(format!("bad max `{hi}`")))?;
            if !(lo < hi && hi <= 127) || name.is_empty() {
                return Err(bad(format!("invalid range {lo}..{hi} for `{name}`")));
            }
            ranges.insert(name.to_ascii_lowercase(), (lo, hi));
        }
        if !ranges.contains_key("piano") {
            return Err(RangeTableError::MissingPiano);
        }
        Ok(InstrumentRangeTable { ranges })
    }

    pub fn load(path: &Path) -> Result<Self, RangeTableError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, instrument: &str) -> Option<(u8, u8)> {
        self.ranges.get(&instrument.trim().to_ascii_lowercase()).copied()
    }

    pub fn piano(&self) -> (u8, u8) {
        self.ranges["piano"]
    }

    pub fn instruments(&self) -> impl Iterator<Item = &str> {
        self.ranges.keys().map(String::as_str)
    }
}
