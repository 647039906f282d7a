//! ABC notation: the score model shared by every stage of the pipeline.
//!
//! Only a subset of ABC is understood. Tuplets, grace notes, slurs, repeat
//! endings, inline header changes and lyrics are rejected with
//! [`ParseError::UnsupportedFeature`] rather than silently dropped. Plain
//! repeat barlines (`|:`, `:|`, `::`) are read as ordinary barlines.
//!
//! Accidentals are literal: the key signature does not alter the pitch of an
//! unmarked note. Scores produced by the generator always spell accidentals
//! explicitly, so they sound the same under either reading.

mod gm;
mod parse;
mod pitch;
mod serialize;

use std::fmt;
use std::str::FromStr;

use num_rational::Rational64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use gm::{instrument_name_for_program, program_for_instrument};
pub use parse::parse_abc;
pub use pitch::{midi_pitch, Pitch, Step};
pub use serialize::{format_duration, serialize_abc};

/// Exact rational used for all durations and meters.
pub type Rational = Rational64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    SyntaxError {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported feature `{feature}` at line {line}")]
    UnsupportedFeature { feature: String, line: usize },
    #[error("no measures in tune body")]
    EmptyBody,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("pitch {0} is outside the MIDI range 0..=127")]
pub struct OutOfMidiRange(pub i32);

/// Dynamics class, softest first. Also the carrier for the velocity attribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dynamics {
    Pp,
    P,
    Mp,
    Mf,
    F,
    Ff,
}

impl Dynamics {
    pub const ALL: [Dynamics; 6] = [
        Dynamics::Pp,
        Dynamics::P,
        Dynamics::Mp,
        Dynamics::Mf,
        Dynamics::F,
        Dynamics::Ff,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Dynamics::Pp => "pp",
            Dynamics::P => "p",
            Dynamics::Mp => "mp",
            Dynamics::Mf => "mf",
            Dynamics::F => "f",
            Dynamics::Ff => "ff",
        }
    }
}

impl fmt::Display for Dynamics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Dynamics {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Dynamics::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| format!("unknown dynamics class `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    Note,
    Rest,
    Chord,
}

/// A timed event inside a measure. `duration` is in units of the unit note length.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub kind: EventKind,
    pub pitches: Vec<Pitch>,
    pub duration: Rational,
    pub tied: bool,
    pub dynamics: Option<Dynamics>,
}

impl Event {
    pub fn note(pitch: Pitch, duration: Rational) -> Self {
        Event {
            kind: EventKind::Note,
            pitches: vec![pitch],
            duration,
            tied: false,
            dynamics: None,
        }
    }

    pub fn rest(duration: Rational) -> Self {
        Event {
            kind: EventKind::Rest,
            pitches: Vec::new(),
            duration,
            tied: false,
            dynamics: None,
        }
    }

    /// Builds a chord, collapsing to a note when only one pitch is given.
    pub fn chord(pitches: Vec<Pitch>, duration: Rational) -> Self {
        let kind = if pitches.len() == 1 {
            EventKind::Note
        } else {
            EventKind::Chord
        };
        Event {
            kind,
            pitches,
            duration,
            tied: false,
            dynamics: None,
        }
    }

    pub fn is_onset(&self) -> bool {
        !matches!(self.kind, EventKind::Rest)
    }

    /// The pitch that represents this event in a melodic line: the note
    /// itself, or the highest pitch of a chord.
    pub fn melodic_pitch(&self) -> Option<Pitch> {
        self.pitches.iter().copied().max_by_key(|p| p.midi())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Measure {
    pub events: Vec<Event>,
    pub index: usize,
}

impl Measure {
    /// Sum of event durations in unit-note-length units. Exact.
    pub fn beats(&self) -> Rational {
        self.events
            .iter()
            .fold(Rational::from_integer(0), |acc, e| acc + e.duration)
    }

    /// Melodic pitch sequence of this measure (rests skipped).
    pub fn melodic_midi(&self) -> Vec<i32> {
        self.events
            .iter()
            .filter_map(Event::melodic_pitch)
            .map(|p| p.midi())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Meter {
    pub numerator: u32,
    pub denominator: u32,
}

impl Meter {
    pub const COMMON: Meter = Meter {
        numerator: 4,
        denominator: 4,
    };

    pub fn new(numerator: u32, denominator: u32) -> Result<Self, String> {
        if numerator == 0 || numerator > 64 {
            return Err(format!("meter numerator {numerator} out of range"));
        }
        if ![1, 2, 4, 8, 16].contains(&denominator) {
            return Err(format!("meter denominator {denominator} not in {{1,2,4,8,16}}"));
        }
        Ok(Meter {
            numerator,
            denominator,
        })
    }

    /// Measure length as a fraction of a whole note.
    pub fn span(&self) -> Rational {
        Rational::new(self.numerator as i64, self.denominator as i64)
    }
}

impl fmt::Display for Meter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.numerator, self.denominator)
    }
}

impl FromStr for Meter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "C" => return Ok(Meter::COMMON),
            "C|" => return Meter::new(2, 2),
            _ => {}
        }
        let (n, d) = s
            .trim()
            .split_once('/')
            .ok_or_else(|| format!("malformed meter `{s}`"))?;
        let n = n.trim().parse().map_err(|_| format!("malformed meter `{s}`"))?;
        let d = d.trim().parse().map_err(|_| format!("malformed meter `{s}`"))?;
        Meter::new(n, d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Major,
    Minor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Key {
    pub tonic: Step,
    pub accidental: i8,
    pub mode: Mode,
}

impl Key {
    pub const C_MAJOR: Key = Key {
        tonic: Step::C,
        accidental: 0,
        mode: Mode::Major,
    };
    pub const A_MINOR: Key = Key {
        tonic: Step::A,
        accidental: 0,
        mode: Mode::Minor,
    };

    /// Pitch class (0..12) of the tonic.
    pub fn tonic_pitch_class(&self) -> i32 {
        (self.tonic.semitone() + self.accidental as i32).rem_euclid(12)
    }

    /// Spelling of the seven scale degrees as (letter, accidental), tonic first.
    /// Fails for keys that would need double accidentals.
    pub fn scale(&self) -> Result<[(Step, i8); 7], String> {
        const MAJOR: [i32; 7] = [0, 2, 4, 5, 7, 9, 11];
        const MINOR: [i32; 7] = [0, 2, 3, 5, 7, 8, 10];
        let pattern = match self.mode {
            Mode::Major => MAJOR,
            Mode::Minor => MINOR,
        };
        let tonic_pc = self.tonic.semitone() + self.accidental as i32;
        let mut out = [(Step::C, 0i8); 7];
        for (degree, offset) in pattern.iter().enumerate() {
            let letter = self.tonic.nth(degree);
            let target = tonic_pc + offset;
            // signed distance from the natural letter, in -6..=6
            let acc = (target - letter.semitone() + 6).rem_euclid(12) - 6;
            if acc.abs() > 1 {
                return Err(format!("key {self} needs double accidentals"));
            }
            out[degree] = (letter, acc as i8);
        }
        Ok(out)
    }
}

impl fmt::Display for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.tonic)?;
        match self.accidental {
            1 => f.write_str("#")?,
            -1 => f.write_str("b")?,
            _ => {}
        }
        if self.mode == Mode::Minor {
            f.write_str("m")?;
        }
        Ok(())
    }
}

impl FromStr for Key {
    type Err = String;

    /// Accepts `C`, `F#m`, `Bb`, `Dmin`, `E minor`, `Gmaj`; trailing clef
    /// or `key=value` tokens are ignored. Modes other than major/minor fail.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut tokens = s.split_whitespace();
        let first = tokens.next().ok_or_else(|| "empty key".to_string())?;
        let mut chars = first.chars();
        let tonic = chars
            .next()
            .and_then(|c| Step::from_letter(c.to_ascii_uppercase()))
            .ok_or_else(|| format!("malformed key `{s}`"))?;
        let rest: String = chars.collect();
        let (accidental, mode_text) = match rest.chars().next() {
            Some('#') => (1, rest[1..].to_string()),
            Some('b') => (-1, rest[1..].to_string()),
            _ => (0, rest),
        };
        let mode_text = if mode_text.is_empty() {
            match tokens.next() {
                Some(t) if !t.contains('=') => t.to_string(),
                _ => String::new(),
            }
        } else {
            mode_text
        };
        let lower = mode_text.to_ascii_lowercase();
        let mode = match lower.as_str() {
            "" | "maj" | "major" | "ion" | "ionian" => Mode::Major,
            "m" | "min" | "minor" | "aeo" | "aeolian" => Mode::Minor,
            other => return Err(format!("mode `{other}`")),
        };
        Ok(Key {
            tonic,
            accidental,
            mode,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Tempo {
    /// Beat unit as a fraction of a whole note.
    pub beat: Rational,
    pub bpm: u32,
}

pub const MIN_BPM: u32 = 20;
pub const MAX_BPM: u32 = 400;

/// Header fields as written in the source. Absent fields stay `None` so that
/// completeness checks see what the author actually wrote; use the `*_or_default`
/// accessors for the effective values.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Headers {
    pub reference_number: Option<u32>,
    pub title: Option<String>,
    pub composer: Option<String>,
    pub meter: Option<Meter>,
    pub unit_note_length: Option<Rational>,
    pub tempo: Option<Tempo>,
    pub key: Option<Key>,
    /// `%%MIDI program <n>` directive.
    pub midi_program: Option<u8>,
    /// `%%velocity <class>` directive.
    pub velocity: Option<Dynamics>,
}

impl Headers {
    pub fn meter_or_default(&self) -> Meter {
        self.meter.unwrap_or(Meter::COMMON)
    }

    pub fn unit_or_default(&self) -> Rational {
        self.unit_note_length.unwrap_or_else(|| Rational::new(1, 8))
    }

    pub fn key_or_default(&self) -> Key {
        self.key.unwrap_or(Key::C_MAJOR)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Voice {
    pub id: String,
    pub name: Option<String>,
    pub measures: Vec<Measure>,
}

impl Voice {
    pub fn new(measures: Vec<Measure>) -> Self {
        Voice {
            id: "1".to_string(),
            name: None,
            measures,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AbcScore {
    pub headers: Headers,
    pub voices: Vec<Voice>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_text: Option<String>,
}

/// Structural equality; `source_text` is ignored.
impl PartialEq for AbcScore {
    fn eq(&self, other: &Self) -> bool {
        self.headers == other.headers && self.voices == other.voices
    }
}

impl Eq for AbcScore {}

impl AbcScore {
    /// Instrument name: the `%%MIDI program` directive if present, otherwise
    /// the first voice's name.
    pub fn instrument(&self) -> Option<String> {
        if let Some(program) = self.headers.midi_program {
            return Some(instrument_name_for_program(program));
        }
        self.voices
            .first()
            .and_then(|v| v.name.clone())
            .map(|n| n.to_ascii_lowercase())
    }

    pub fn measure_count(&self) -> usize {
        self.voices.first().map_or(0, |v| v.measures.len())
    }

    /// Renumbers measures so indices are contiguous from zero in every voice.
    pub fn reindex(&mut self) {
        for voice in &mut self.voices {
            for (i, m) in voice.measures.iter_mut().enumerate() {
                m.index = i;
            }
        }
    }

    /// Checks the structural invariants a valid score must satisfy.
    pub fn validate(&self) -> Result<(), String> {
        if self.voices.is_empty() {
            return Err("score has no voices".into());
        }
        let count = self.voices[0].measures.len();
        for voice in &self.voices {
            if voice.measures.is_empty() {
                return Err(format!("voice {} has no measures", voice.id));
            }
            if voice.measures.len() != count {
                return Err("voices have unequal measure counts".into());
            }
            for (i, m) in voice.measures.iter().enumerate() {
                if m.index != i {
                    return Err(format!("measure index {} at position {i}", m.index));
                }
                for e in &m.events {
                    if e.duration <= Rational::from_integer(0) {
                        return Err("non-positive duration".into());
                    }
                    match e.kind {
                        EventKind::Rest if !e.pitches.is_empty() => {
                            return Err("rest with pitches".into())
                        }
                        EventKind::Note if e.pitches.len() != 1 => {
                            return Err("note without exactly one pitch".into())
                        }
                        EventKind::Chord => {
                            if e.pitches.len() < 2 {
                                return Err("chord with fewer than two pitches".into());
                            }
                            for (j, p) in e.pitches.iter().enumerate() {
                                if e.pitches[..j].contains(p) {
                                    return Err("chord with duplicate pitches".into());
                                }
                            }
                        }
                        _ => {}
                    }
                    for p in &e.pitches {
                        midi_pitch(*p).map_err(|e| e.to_string())?;
                    }
                }
            }
        }
        if let Some(t) = self.headers.tempo {
            if !(MIN_BPM..=MAX_BPM).contains(&t.bpm) {
                return Err(format!("tempo {} outside {MIN_BPM}..={MAX_BPM}", t.bpm));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn meter_symbols() {
        assert_eq!("C".parse::<Meter>().unwrap(), Meter::COMMON);
        assert_eq!("C|".parse::<Meter>().unwrap(), Meter::new(2, 2).unwrap());
        assert!("4/3".parse::<Meter>().is_err());
        assert!("0/4".parse::<Meter>().is_err());
    }

    #[test]
    fn key_forms() {
        let k: Key = "F#m".parse().unwrap();
        assert_eq!((k.tonic, k.accidental, k.mode), (Step::F, 1, Mode::Minor));
        let k: Key = "Bb".parse().unwrap();
        assert_eq!(k.to_string(), "Bb");
        let k: Key = "D minor".parse().unwrap();
        assert_eq!(k.mode, Mode::Minor);
        let k: Key = "G clef=treble".parse().unwrap();
        assert_eq!(k, Key { tonic: Step::G, accidental: 0, mode: Mode::Major });
        assert!("Ddor".parse::<Key>().is_err());
    }

    #[test]
    fn scale_spelling() {
        let g: Key = "G".parse().unwrap();
        let scale = g.scale().unwrap();
        assert_eq!(scale[6], (Step::F, 1));
        let bb: Key = "Bb".parse().unwrap();
        assert_eq!(bb.scale().unwrap()[3], (Step::E, -1));
        let am = Key::A_MINOR.scale().unwrap();
        assert!(am.iter().all(|&(_, a)| a == 0));
        let gs = Key { tonic: Step::G, accidental: 1, mode: Mode::Major };
        assert!(gs.scale().is_err());
    }
}
