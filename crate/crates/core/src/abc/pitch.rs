use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::OutOfMidiRange;

/// Note letter, ordered from C as in scientific pitch notation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Step {
    C,
    D,
    E,
    F,
    G,
    A,
    B,
}

impl Step {
    pub const ALL: [Step; 7] = [Step::C, Step::D, Step::E, Step::F, Step::G, Step::A, Step::B];

    /// Semitones above C within the octave.
    pub fn semitone(self) -> i32 {
        match self {
            Step::C => 0,
            Step::D => 2,
            Step::E => 4,
            Step::F => 5,
            Step::G => 7,
            Step::A => 9,
            Step::B => 11,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// The letter `n` diatonic steps above this one (wrapping).
    pub fn nth(self, n: usize) -> Step {
        Step::ALL[(self.index() + n) % 7]
    }

    pub fn from_letter(c: char) -> Option<Step> {
        match c {
            'C' => Some(Step::C),
            'D' => Some(Step::D),
            'E' => Some(Step::E),
            'F' => Some(Step::F),
            'G' => Some(Step::G),
            'A' => Some(Step::A),
            'B' => Some(Step::B),
            _ => None,
        }
    }

    pub fn letter(self) -> char {
        match self {
            Step::C => 'C',
            Step::D => 'D',
            Step::E => 'E',
            Step::F => 'F',
            Step::G => 'G',
            Step::A => 'A',
            Step::B => 'B',
        }
    }
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

/// A spelled pitch. Octave 4 contains middle C.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pitch {
    pub step: Step,
    /// -1 flat, 0 natural, +1 sharp.
    pub accidental: i8,
    pub octave: i8,
}

impl Pitch {
    pub fn new(step: Step, accidental: i8, octave: i8) -> Self {
        Pitch {
            step,
            accidental,
            octave,
        }
    }

    /// Unchecked MIDI number; may fall outside 0..=127 for extreme octaves.
    pub fn midi(&self) -> i32 {
        12 * (self.octave as i32 + 1) + self.step.semitone() + self.accidental as i32
    }

    /// Same letter and accidental moved by whole octaves.
    pub fn transpose_octaves(&self, octaves: i8) -> Pitch {
        Pitch {
            octave: self.octave + octaves,
            ..*self
        }
    }
}

/// Lexicographic on (octave, letter, accidental).
impl Ord for Pitch {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.octave, self.step, self.accidental).cmp(&(other.octave, other.step, other.accidental))
    }
}

impl PartialOrd for Pitch {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// MIDI note number of a pitch; `C` (octave 4) is 60.
pub fn midi_pitch(p: Pitch) -> Result<u8, OutOfMidiRange> {
    let m = p.midi();
    u8::try_from(m)
        .ok()
        .filter(|&m| m <= 127)
        .ok_or(OutOfMidiRange(m))
}

/// ABC spelling: `^F`, `_B,`, `c'`.
impl fmt::Display for Pitch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.accidental {
            a if a > 0 => f.write_str(&"^".repeat(a as usize))?,
            a if a < 0 => f.write_str(&"_".repeat((-a) as usize))?,
            _ => {}
        }
        if self.octave >= 5 {
            write!(f, "{}", self.step.letter().to_ascii_lowercase())?;
            f.write_str(&"'".repeat((self.octave - 5) as usize))
        } else {
            write!(f, "{}", self.step.letter())?;
            f.write_str(&",".repeat((4 - self.octave) as usize))
        }
    }
}
