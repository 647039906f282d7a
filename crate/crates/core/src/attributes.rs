//! The attribute vector that bridges a text request and a score.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abc::{Dynamics, Key, Meter, MAX_BPM, MIN_BPM};

pub const MAX_NOTE_DENSITY: f64 = 32.0;
pub const MAX_PITCH_CURVATURE: f64 = 24.0;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AttributeError {
    #[error("invalid attribute `{name}`: {reason}")]
    Invalid { name: String, reason: String },
    #[error("missing attribute `{0}`")]
    Missing(String),
}

fn invalid(name: &str, reason: impl Into<String>) -> AttributeError {
    AttributeError::Invalid {
        name: name.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MusicalAttributes {
    pub key: Key,
    pub meter: Meter,
    pub tempo_bpm: u32,
    pub instrument: String,
    pub velocity: Dynamics,
    /// Mean note onsets per measure.
    pub note_density: f64,
    /// Mean absolute melodic interval (semitones) per measure.
    pub pitch_curvature: f64,
    /// Number of two-measure sections.
    pub section_count: u32,
}

impl Default for MusicalAttributes {
    fn default() -> Self {
        MusicalAttributes {
            key: Key::C_MAJOR,
            meter: Meter::COMMON,
            tempo_bpm: 100,
            instrument: "piano".to_string(),
            velocity: Dynamics::Mf,
            note_density: 6.0,
            pitch_curvature: 2.0,
            section_count: 4,
        }
    }
}

/// Names in the order they appear in key-value documents.
pub const ATTRIBUTE_NAMES: [&str; 8] = [
    "key",
    "meter",
    "tempo",
    "instrument",
    "velocity",
    "note_density",
    "pitch_curvature",
    "section_count",
];

impl MusicalAttributes {
    pub fn validate(&self) -> Result<(), AttributeError> {
        if !(MIN_BPM..=MAX_BPM).contains(&self.tempo_bpm) {
            return Err(invalid("tempo", format!("{} outside {MIN_BPM}..={MAX_BPM}", self.tempo_bpm)));
        }
        if !self.note_density.is_finite() || !(0.0..=MAX_NOTE_DENSITY).contains(&self.note_density) {
            return Err(invalid("note_density", format!("{} outside 0..={MAX_NOTE_DENSITY}", self.note_density)));
        }
        if !self.pitch_curvature.is_finite()
            || !(0.0..=MAX_PITCH_CURVATURE).contains(&self.pitch_curvature)
        {
            return Err(invalid(
                "pitch_curvature",
                format!("{} outside 0..={MAX_PITCH_CURVATURE}", self.pitch_curvature),
            ));
        }
        if self.section_count == 0 {
            return Err(invalid("section_count", "must be at least 1"));
        }
        if self.instrument.trim().is_empty() {
            return Err(invalid("instrument", "empty"));
        }
        Ok(())
    }

    /// One `name: value` line per attribute.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "key: {}", self.key);
        let _ = writeln!(out, "meter: {}", self.meter);
        let _ = writeln!(out, "tempo: {}", self.tempo_bpm);
        let _ = writeln!(out, "instrument: {}", self.instrument);
        let _ = writeln!(out, "velocity: {}", self.velocity);
        let _ = writeln!(out, "note_density: {}", self.note_density);
        let _ = writeln!(out, "pitch_curvature: {}", self.pitch_curvature);
        let _ = writeln!(out, "section_count: {}", self.section_count);
        out
    }

    /// Parses `name: value` lines. Unknown names and blank lines are ignored;
    /// `section_count` defaults to 4, everything else is required.
    pub fn from_kv(text: &str) -> Result<Self, AttributeError> {
        let mut fields = BTreeMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some((name, value)) = line.split_once(':') {
                let name = name.trim().to_ascii_lowercase().replace([' ', '-'], "_");
                let name = match name.as_str() {
                    "tempo_bpm" | "bpm" => "tempo".to_string(),
                    "density" => "note_density".to_string(),
                    "curvature" => "pitch_curvature".to_string(),
                    "sections" => "section_count".to_string(),
                    _ => name,
                };
                fields.entry(name).or_insert_with(|| value.trim().to_string());
            }
        }
        let get = |name: &str| {
            fields
                .get(name)
                .map(String::as_str)
                .ok_or_else(|| AttributeError::Missing(name.to_string()))
        };
        let number = |name: &str| -> Result<f64, AttributeError> {
            get(name)?
                .parse::<f64>()
                .map_err(|_| invalid(name, "not a number"))
        };
        let attrs = MusicalAttributes {
            key: get("key")?.parse().map_err(|e: String| invalid("key", e))?,
            meter: get("meter")?.parse().map_err(|e: String| invalid("meter", e))?,
            tempo_bpm: get("tempo")?
                .trim_end_matches("bpm")
                .trim()
                .parse()
                .map_err(|_| invalid("tempo", "not an integer"))?,
            instrument: get("instrument")?.to_ascii_lowercase(),
            velocity: get("velocity")?
                .to_ascii_lowercase()
                .parse()
                .map_err(|e: String| invalid("velocity", e))?,
            note_density: number("note_density")?,
            pitch_curvature: number("pitch_curvature")?,
            section_count: match fields.get("section_count") {
                Some(v) => v.parse().map_err(|_| invalid("section_count", "not an integer"))?,
                None => 4,
            },
        };
        attrs.validate()?;
        Ok(attrs)
    }

    /// Short single-line summary for transcripts and titles.
    pub fn summary(&self) -> String {
        format!(
            "{} {} {} bpm, {}, {}, density {:.2}, curvature {:.2}",
            self.key, self.meter, self.tempo_bpm, self.instrument, self.velocity, self.note_density, self.pitch_curvature
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_round_trip() {
        let a = MusicalAttributes {
            key: "F#m".parse().unwrap(),
            meter: Meter::new(6, 8).unwrap(),
            tempo_bpm: 132,
            instrument: "violin".into(),
            velocity: Dynamics::F,
            note_density: 5.5,
            pitch_curvature: 3.25,
            section_count: 2,
        };
        assert_eq!(MusicalAttributes::from_kv(&a.to_kv()).unwrap(), a);
    }

    #[test]
    fn kv_errors() {
        let mut text = MusicalAttributes::default().to_kv();
        text = text.replace("tempo: 100", "tempo: 900");
        assert!(matches!(MusicalAttributes::from_kv(&text), Err(AttributeError::Invalid { .. })));
        let missing = "key: C\nmeter: 4/4\n";
        assert_eq!(
            MusicalAttributes::from_kv(missing),
            Err(AttributeError::Missing("tempo".into()))
        );
    }

    #[test]
    fn bounds() {
        let mut a = MusicalAttributes {
            note_density: 33.0,
            ..Default::default()
        };
        assert!(a.validate().is_err());
        a.note_density = 32.0;
        a.pitch_curvature = 24.5;
        assert!(a.validate().is_err());
        a.pitch_curvature = f64::NAN;
        assert!(a.validate().is_err());
    }
}
