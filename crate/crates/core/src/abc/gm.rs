//! General MIDI program names.

use std::sync::OnceLock;

const GM_TABLE: &str = include_str!("../../data/gm_programs.txt");

/// Short names used by the range table, mapped to their GM program.
const ALIASES: &[(&str, u8)] = &[
    ("piano", 0),
    ("guitar", 24),
    ("violin", 40),
    ("viola", 41),
    ("cello", 42),
    ("contrabass", 43),
    ("trumpet", 56),
    ("clarinet", 71),
    ("flute", 73),
    ("oboe", 68),
];

fn gm_names() -> &'static [String] {
    static NAMES: OnceLock<Vec<String>> = OnceLock::new();
    NAMES.get_or_init(|| {
        GM_TABLE
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_ascii_lowercase)
            .collect()
    })
}

/// Canonical lowercase instrument name for a zero-based GM program.
pub fn instrument_name_for_program(program: u8) -> String {
    if let Some((alias, _)) = ALIASES.iter().find(|(_, p)| *p == program) {
        return (*alias).to_string();
    }
    gm_names()
        .get(program as usize)
        .cloned()
        .unwrap_or_else(|| format!("program {program}"))
}

/// GM program for a short alias or full GM name (case-insensitive).
pub fn program_for_instrument(name: &str) -> Option<u8> {
    let lower = name.trim().to_ascii_lowercase();
    ALIASES
        .iter()
        .find(|(a, _)| *a == lower)
        .map(|(_, p)| *p)
        .or_else(|| gm_names().iter().position(|n| *n == lower).map(|i| i as u8))
}
