#![allow(dead_code)]

use bytecomposer_core::abc::{Dynamics, Key, Meter};
use bytecomposer_core::attributes::MusicalAttributes;
use proptest::prelude::*;

pub const KEYS: [&str; 24] = [
    "C", "G", "D", "A", "E", "B", "F#", "F", "Bb", "Eb", "Ab", "Db", "Am", "Em", "Bm", "F#m", "C#m", "G#m",
    "Dm", "Gm", "Cm", "Fm", "Bbm", "Ebm",
];
pub const METERS: [(u32, u32); 9] = [(2, 4), (3, 4), (4, 4), (6, 8), (3, 8), (2, 2), (5, 4), (9, 8), (12, 8)];
pub const INSTRUMENTS: [&str; 6] = ["piano", "violin", "viola", "cello", "flute", "guitar"];

/// Largest density worth asking for in a meter: one note per sixteenth, capped.
pub fn density_cap(m: Meter) -> f64 {
    let sixteenths = 16 * m.numerator / m.denominator;
    (sixteenths as f64).min(12.0)
}

pub fn attributes() -> impl Strategy<Value = MusicalAttributes> {
    (
        0..KEYS.len(),
        0..METERS.len(),
        20u32..=400,
        0..INSTRUMENTS.len(),
        0..Dynamics::ALL.len(),
        0.0f64..1.0,
        0.0f64..6.0,
        1u32..=6,
    )
        .prop_map(|(k, m, tempo, i, v, d, c, sections)| {
            let meter = Meter::new(METERS[m].0, METERS[m].1).unwrap();
            MusicalAttributes {
                key: KEYS[k].parse::<Key>().unwrap(),
                meter,
                tempo_bpm: tempo,
                instrument: INSTRUMENTS[i].to_string(),
                velocity: Dynamics::ALL[v],
                note_density: 1.0 + d * (density_cap(meter) - 1.0),
                pitch_curvature: c,
                section_count: sections,
            }
        })
}
