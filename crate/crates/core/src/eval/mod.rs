//! Objective evaluation: time-signature, instrument-range and header
//! completeness checks, attribute extraction and attribute accuracy.
//!
//! Corpus rates are score-level: a score counts once toward TSER if any of
//! its measures has a wrong beat count, and likewise for IRER.

mod range;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abc::{AbcScore, Dynamics, Rational};
use crate::attributes::MusicalAttributes;

pub use range::{InstrumentRangeTable, RangeTableError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum EvalFailure {
    #[error("score contains no notes")]
    NoNotes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EvalErrorKind {
    BeatCountMismatch,
    NoteOutOfRange,
    MissingHeaderField,
    AttributeMismatch,
}

impl fmt::Display for EvalErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Location {
    pub voice: Option<usize>,
    pub measure: Option<usize>,
    pub event: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EvalError {
    pub kind: EvalErrorKind,
    pub location: Location,
    pub expected: String,
    pub actual: String,
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.kind)?;
        if let Some(v) = self.location.voice {
            write!(f, " voice {v}")?;
        }
        if let Some(m) = self.location.measure {
            write!(f, " measure {m}")?;
        }
        if let Some(e) = self.location.event {
            write!(f, " event {e}")?;
        }
        write!(f, ": expected {}, found {}", self.expected, self.actual)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub errors: Vec<EvalError>,
    #[serde(default)]
    pub warnings: Vec<String>,
    pub tser_flag: bool,
    pub irer_flag: bool,
    pub sicr_complete: bool,
    pub sicr_fraction: f64,
    pub aaa: Option<f64>,
    pub extracted: MusicalAttributes,
    /// Attributes the score was checked against, when any.
    pub target: Option<MusicalAttributes>,
}

impl EvalReport {
    pub fn is_clean(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn count(&self, kind: EvalErrorKind) -> usize {
        self.errors.iter().filter(|e| e.kind == kind).count()
    }

    /// Compact flag summary, e.g. `TSER ok, IRER err, SICR 5/6, AAA 0.86`.
    pub fn summary(&self) -> String {
        let flag = |bad: bool| if bad { "err" } else { "ok" };
        let mut s = format!(
            "{} objective errors; TSER {}, IRER {}, SICR {:.0}/6",
            self.errors.len(),
            flag(self.tser_flag),
            flag(self.irer_flag),
            self.sicr_fraction * 6.0
        );
        if let Some(aaa) = self.aaa {
            s.push_str(&format!(", AAA {aaa:.2}"));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusMetrics {
    pub tser: f64,
    pub irer: f64,
    pub sicr: f64,
    /// Mean over the reports that carry a target; `None` when none do.
    pub aaa: Option<f64>,
    pub n_scores: usize,
}

/// `a/b` expressed over the meter denominator when that is exact.
fn format_span(span: Rational, denominator: u32) -> String {
    let over = span * Rational::from_integer(denominator as i64);
    if over.is_integer() {
        format!("{}/{}", over.to_integer(), denominator)
    } else {
        format!("{}/{}", span.numer(), span.denom())
    }
}

/// Beat-count check. Every measure must fill the meter exactly, except that a
/// voice's first measure may be shorter (anacrusis) and its last measure may
/// be shorter too. Neither may be longer.
pub fn check_time_signature(score: &AbcScore) -> Vec<EvalError> {
    let meter = score.headers.meter_or_default();
    let unit = score.headers.unit_or_default();
    let expected = meter.span();
    let mut errors = Vec::new();
    for (v, voice) in score.voices.iter().enumerate() {
        let last = voice.measures.len().saturating_sub(1);
        for (i, m) in voice.measures.iter().enumerate() {
            let span = m.beats() * unit;
            let exempt_short = i == 0 || i == last;
            if span == expected || (span < expected && exempt_short) {
                continue;
            }
            errors.push(EvalError {
                kind: EvalErrorKind::BeatCountMismatch,
                location: Location {
                    voice: Some(v),
                    measure: Some(m.index),
                    event: None,
                },
                expected: meter.to_string(),
                actual: format_span(span, meter.denominator),
            });
        }
    }
    errors
}

/// Resolves the score's instrument in the table, falling back to piano.
/// The second value is a warning when the fallback was needed.
pub fn resolve_range(score: &AbcScore, table: &InstrumentRangeTable) -> ((u8, u8), Option<String>) {
    match score.instrument() {
        None => (table.piano(), None),
        Some(name) => match table.get(&name) {
            Some(r) => (r, None),
            None => (
                table.piano(),
                Some(format!("instrument `{name}` not in range table; using piano")),
            ),
        },
    }
}

/// One error per sounding pitch outside the instrument's range.
pub fn check_instrument_range(score: &AbcScore, table: &InstrumentRangeTable) -> Vec<EvalError> {
    let ((lo, hi), _) = resolve_range(score, table);
    let mut errors = Vec::new();
    for (v, voice) in score.voices.iter().enumerate() {
        for m in &voice.measures {
            for (e, event) in m.events.iter().enumerate() {
                for p in &event.pitches {
                    let midi = p.midi();
                    if midi < lo as i32 || midi > hi as i32 {
                        errors.push(EvalError {
                            kind: EvalErrorKind::NoteOutOfRange,
                            location: Location {
                                voice: Some(v),
                                measure: Some(m.index),
                                event: Some(e),
                            },
                            expected: format!("{lo}-{hi}"),
                            actual: midi.to_string(),
                        });
                    }
                }
            }
        }
    }
    errors
}

/// Header fields a complete score must carry, in report order.
pub const REQUIRED_FIELDS: [&str; 6] = ["X", "T", "M", "L", "K", "Q"];

/// Completeness over the fields present in the source (defaults do not count).
pub fn check_completeness(score: &AbcScore) -> (bool, f64, Vec<EvalError>) {
    let h = &score.headers;
    let present = [
        h.reference_number.is_some(),
        h.title.is_some(),
        h.meter.is_some(),
        h.unit_note_length.is_some(),
        h.key.is_some(),
        h.tempo.is_some(),
    ];
    let errors: Vec<EvalError> = REQUIRED_FIELDS
        .iter()
        .zip(present)
        .filter(|(_, p)| !p)
        .map(|(field, _)| EvalError {
            kind: EvalErrorKind::MissingHeaderField,
            location: Location::default(),
            expected: (*field).to_string(),
            actual: "missing".to_string(),
        })
        .collect();
    let fraction = (REQUIRED_FIELDS.len() - errors.len()) as f64 / REQUIRED_FIELDS.len() as f64;
    (errors.is_empty(), fraction, errors)
}

/// Mean absolute interval between consecutive melodic pitches of a measure;
/// zero with fewer than two pitches.
pub fn measure_curvature(pitches: &[i32]) -> f64 {
    if pitches.len() < 2 {
        return 0.0;
    }
    let total: i32 = pitches.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    total as f64 / (pitches.len() - 1) as f64
}

/// Reads the attribute vector back out of a score. Density and curvature
/// describe the first (lead) voice.
pub fn extract_attributes(score: &AbcScore) -> Result<MusicalAttributes, EvalFailure> {
    let has_notes = score
        .voices
        .iter()
        .flat_map(|v| &v.measures)
        .flat_map(|m| &m.events)
        .any(|e| e.is_onset());
    if !has_notes {
        return Err(EvalFailure::NoNotes);
    }
    let h = &score.headers;
    let lead = &score.voices[0];
    let n = lead.measures.len().max(1) as f64;

    let mut counts: Vec<(Dynamics, usize)> = Vec::new();
    let mut current = h.velocity.unwrap_or(Dynamics::Mf);
    for event in lead.measures.iter().flat_map(|m| &m.events) {
        if let Some(d) = event.dynamics {
            current = d;
        }
        if event.is_onset() {
            match counts.iter_mut().find(|(d, _)| *d == current) {
                Some((_, c)) => *c += 1,
                None => counts.push((current, 1)),
            }
        }
    }
    // first class to reach the maximum wins ties
    let velocity = counts
        .iter()
        .fold(None::<(Dynamics, usize)>, |best, &(d, c)| match best {
            Some((_, bc)) if bc >= c => best,
            _ => Some((d, c)),
        })
        .map_or(h.velocity.unwrap_or(Dynamics::Mf), |(d, _)| d);

    let onsets: usize = lead
        .measures
        .iter()
        .map(|m| m.events.iter().filter(|e| e.is_onset()).count())
        .sum();
    let curvature: f64 = lead
        .measures
        .iter()
        .map(|m| measure_curvature(&m.melodic_midi()))
        .sum();

    Ok(MusicalAttributes {
        key: h.key_or_default(),
        meter: h.meter_or_default(),
        tempo_bpm: h.tempo.map_or(100, |t| t.bpm),
        instrument: score.instrument().unwrap_or_else(|| "piano".to_string()),
        velocity,
        note_density: onsets as f64 / n,
        pitch_curvature: curvature / n,
        section_count: lead.measures.len().div_ceil(2).max(1) as u32,
    })
}

/// Absolute tolerance on density and curvature.
pub const CONTINUOUS_TOLERANCE: f64 = 1.0;
const EPS: f64 = 1e-9;

/// Per-attribute match under the fixed tolerances and the mean match rate.
pub fn compute_aaa(
    target: &MusicalAttributes,
    extracted: &MusicalAttributes,
) -> (f64, BTreeMap<String, bool>) {
    let tempo_ok = 10 * (target.tempo_bpm as i64 - extracted.tempo_bpm as i64).abs()
        <= target.tempo_bpm as i64;
    let checks = [
        ("key", target.key == extracted.key),
        ("meter", target.meter == extracted.meter),
        ("tempo", tempo_ok),
        (
            "instrument",
            target.instrument.eq_ignore_ascii_case(&extracted.instrument),
        ),
        ("velocity", target.velocity == extracted.velocity),
        (
            "note_density",
            (target.note_density - extracted.note_density).abs() <= CONTINUOUS_TOLERANCE + EPS,
        ),
        (
            "pitch_curvature",
            (target.pitch_curvature - extracted.pitch_curvature).abs()
                <= CONTINUOUS_TOLERANCE + EPS,
        ),
    ];
    let matched = checks.iter().filter(|(_, ok)| *ok).count();
    let map = checks
        .iter()
        .map(|(name, ok)| (name.to_string(), *ok))
        .collect();
    (matched as f64 / checks.len() as f64, map)
}

fn attribute_value(attrs: &MusicalAttributes, name: &str) -> String {
    match name {
        "key" => attrs.key.to_string(),
        "meter" => attrs.meter.to_string(),
        "tempo" => attrs.tempo_bpm.to_string(),
        "instrument" => attrs.instrument.clone(),
        "velocity" => attrs.velocity.to_string(),
        "note_density" => format!("{:.3}", attrs.note_density),
        "pitch_curvature" => format!("{:.3}", attrs.pitch_curvature),
        _ => String::new(),
    }
}

/// Runs every check and assembles the report.
pub fn evaluate(
    score: &AbcScore,
    table: &InstrumentRangeTable,
    target: Option<&MusicalAttributes>,
) -> Result<EvalReport, EvalFailure> {
    let extracted = extract_attributes(score)?;
    let mut errors = check_time_signature(score);
    let tser_flag = !errors.is_empty();

    let (_, warning) = resolve_range(score, table);
    let range_errors = check_instrument_range(score, table);
    let irer_flag = !range_errors.is_empty();
    errors.extend(range_errors);

    let (sicr_complete, sicr_fraction, missing) = check_completeness(score);
    errors.extend(missing);

    let aaa = target.map(|t| {
        let (aaa, per) = compute_aaa(t, &extracted);
        for (name, ok) in per {
            if !ok {
                errors.push(EvalError {
                    kind: EvalErrorKind::AttributeMismatch,
                    location: Location::default(),
                    expected: format!("{name}={}", attribute_value(t, &name)),
                    actual: format!("{name}={}", attribute_value(&extracted, &name)),
                });
            }
        }
        aaa
    });

    Ok(EvalReport {
        errors,
        warnings: warning.into_iter().collect(),
        tser_flag,
        irer_flag,
        sicr_complete,
        sicr_fraction,
        aaa,
        extracted,
        target: target.cloned(),
    })
}

/// Score-level rates over a corpus. Returns `None` for an empty corpus.
pub fn corpus_metrics(reports: &[EvalReport]) -> Option<CorpusMetrics> {
    if reports.is_empty() {
        return None;
    }
    let n = reports.len() as f64;
    let rate = |f: fn(&EvalReport) -> bool| reports.iter().filter(|r| f(r)).count() as f64 / n;
    let aaas: Vec<f64> = reports.iter().filter_map(|r| r.aaa).collect();
    Some(CorpusMetrics {
        tser: rate(|r| r.tser_flag),
        irer: rate(|r| r.irer_flag),
        sicr: rate(|r| r.sicr_complete),
        aaa: (!aaas.is_empty()).then(|| aaas.iter().sum::<f64>() / aaas.len() as f64),
        n_scores: reports.len(),
    })
}
