use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;

use crate::abc::{Key, Mode, Step};
use crate::attributes::MusicalAttributes;

use super::{BackendError, ExpertBackend};

const BUNDLED_KEYWORDS: &str = include_str!("../../data/mock_keywords.txt");

/// Word-to-attribute table that drives [`MockBackend`].
#[derive(Debug, Clone, PartialEq)]
pub struct KeywordTable {
    buckets: BTreeMap<String, (u32, u32)>,
    words: BTreeMap<String, Vec<(String, String)>>,
}

const SETTABLE: [&str; 7] = [
    "mode",
    "meter",
    "tempo",
    "velocity",
    "density",
    "curvature",
    "instrument",
];

impl Default for KeywordTable {
    fn default() -> Self {
        KeywordTable::parse(BUNDLED_KEYWORDS).expect("bundled keyword table is valid")
    }
}

impl KeywordTable {
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut buckets = BTreeMap::new();
        let mut words = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let head = parts.next().unwrap_or_default();
            if head == "bucket" {
                let fields: Vec<&str> = parts.collect();
                let [name, lo, hi] = fields[..] else {
                    return Err(format!("line {}: bucket needs name, low and high", i + 1));
                };
                let lo: u32 = lo.parse().map_err(|_| format!("line {}: bad low", i + 1))?;
                let hi: u32 = hi.parse().map_err(|_| format!("line {}: bad high", i + 1))?;
                if lo > hi {
                    return Err(format!("line {}: empty bucket", i + 1));
                }
                buckets.insert(name.to_string(), (lo, hi));
                continue;
            }
            let mut entries = Vec::new();
            for p in parts {
                let (k, v) = p
                    .split_once('=')
                    .ok_or_else(|| format!("line {}: expected attribute=value, got `{p}`", i + 1))?;
                if !SETTABLE.contains(&k) {
                    return Err(format!("line {}: unknown attribute `{k}`", i + 1));
                }
                entries.push((k.to_string(), v.to_string()));
            }
            words.insert(head.to_lowercase(), entries);
        }
        for entries in words.values() {
            for (k, v) in entries {
                if k == "tempo" && v.parse::<u32>().is_err() && !buckets.contains_key(v) {
                    return Err(format!("unknown tempo bucket `{v}`"));
                }
            }
        }
        Ok(KeywordTable { buckets, words })
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        Self::parse(&std::fs::read_to_string(path).map_err(|e| e.to_string())?)
    }

    /// Midpoint of a named tempo bucket.
    pub fn bucket_tempo(&self, name: &str) -> Option<u32> {
        self.buckets.get(name).map(|(lo, hi)| (lo + hi) / 2)
    }

    /// Attributes for a query plus one rationale clause per decision.
    pub fn interpret(&self, query: &str, perturbation: u32) -> (MusicalAttributes, Vec<String>) {
        let mut a = MusicalAttributes::default();
        let mut reasons = Vec::new();
        let mut mode = Mode::Major;
        let mut explicit_key: Option<Key> = None;
        let lower = query.to_lowercase();
        let tokens: Vec<&str> = lower
            .split(|c: char| !(c.is_ascii_alphanumeric() || c == '#'))
            .filter(|t| !t.is_empty())
            .collect();
        for (i, tok) in tokens.iter().enumerate() {
            if let Some(entries) = self.words.get(*tok) {
                for (k, v) in entries {
                    let applied = match k.as_str() {
                        "mode" => {
                            mode = if v == "minor" { Mode::Minor } else { Mode::Major };
                            true
                        }
                        "meter" => v.parse().map(|m| a.meter = m).is_ok(),
                        "tempo" => match self.bucket_tempo(v).or_else(|| v.parse().ok()) {
                            Some(t) => {
                                a.tempo_bpm = t;
                                true
                            }
                            None => false,
                        },
                        "velocity" => v.parse().map(|d| a.velocity = d).is_ok(),
                        "density" => v.parse().map(|d| a.note_density = d).is_ok(),
                        "curvature" => v.parse().map(|c| a.pitch_curvature = c).is_ok(),
                        "instrument" => {
                            a.instrument = v.clone();
                            true
                        }
                        _ => false,
                    };
                    if applied {
                        reasons.push(format!("\"{tok}\" sets {k} to {v}"));
                    }
                }
            }
            if *tok == "bpm" && i > 0 {
                if let Ok(t) = tokens[i - 1].parse::<u32>() {
                    a.tempo_bpm = t.clamp(crate::abc::MIN_BPM, crate::abc::MAX_BPM);
                    reasons.push(format!("the request asks for {t} bpm"));
                }
            }
            if *tok == "in" {
                if let Some(key) = tokens.get(i + 1).and_then(|n| parse_key_words(n, tokens.get(i + 2).copied())) {
                    explicit_key = Some(key);
                    reasons.push(format!("the request names the key {key}"));
                }
            }
        }
        a.key = explicit_key.unwrap_or(match mode {
            Mode::Major => Key::C_MAJOR,
            Mode::Minor => Key::A_MINOR,
        });
        if perturbation > 0 {
            let shift = if perturbation % 2 == 1 { 1.0 } else { -1.0 };
            a.note_density = (a.note_density + shift).clamp(1.0, crate::attributes::MAX_NOTE_DENSITY);
            reasons.push(format!("revision {perturbation} moves note density to {}", a.note_density));
        }
        if reasons.is_empty() {
            reasons.push("no specific cues, so the defaults apply".into());
        }
        (a, reasons)
    }
}

fn parse_key_words(letter: &str, quality: Option<&str>) -> Option<Key> {
    let mut chars = letter.chars();
    let tonic = Step::from_letter(chars.next()?.to_ascii_uppercase())?;
    let accidental = match chars.as_str() {
        "" => 0,
        "#" => 1,
        "b" => -1,
        _ => return None,
    };
    let mode = match quality {
        Some("minor") => Mode::Minor,
        _ => Mode::Major,
    };
    let key = Key {
        tonic,
        accidental,
        mode,
    };
    key.scale().ok().map(|_| key)
}

fn field<'a>(prompt: &'a str, name: &str) -> Option<&'a str> {
    prompt
        .lines()
        .find_map(|l| l.strip_prefix(name).and_then(|r| r.strip_prefix(':')))
        .map(str::trim)
}

/// Offline backend. Recognizes the bundled prompts by their `TASK:` line and
/// answers from the keyword table, so replies depend only on the prompt.
#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    table: KeywordTable,
}

impl MockBackend {
    pub fn new(table: KeywordTable) -> Self {
        MockBackend { table }
    }

    pub fn table(&self) -> &KeywordTable {
        &self.table
    }

    fn conception_reply(&self, prompt: &str) -> String {
        let query = field(prompt, "QUERY").unwrap_or("");
        let perturbation = field(prompt, "PERTURBATION")
            .and_then(|p| p.split_whitespace().next())
            .and_then(|p| p.parse().ok())
            .unwrap_or(0);
        let (attrs, reasons) = self.table.interpret(query, perturbation);
        format!("```\n{}```\nrationale: {}.\n", attrs.to_kv(), reasons.join("; "))
    }
}

impl ExpertBackend for MockBackend {
    fn complete(&self, prompt: &str, max_length: usize) -> Result<String, BackendError> {
        let reply = match field(prompt, "TASK").unwrap_or("") {
            "conception" | "format-reminder" => self.conception_reply(prompt),
            "critique" => {
                let errors = field(prompt, "ERRORS").unwrap_or("0");
                let extracted = field(prompt, "EXTRACTED").unwrap_or("");
                let verdict = if errors == "0" {
                    "The draft is metrically and idiomatically sound."
                } else {
                    "The listed findings should be repaired before voting."
                };
                format!("Evaluation: {errors} objective errors. Observed attributes: {extracted}. {verdict}")
            }
            "routing" => {
                let action = field(prompt, "ACTION").unwrap_or("Advance");
                let errors = field(prompt, "ERRORS").unwrap_or("0");
                match action {
                    "Advance" => "The current stage is complete, so the session moves on.".to_string(),
                    "Retry" => format!("{errors} objective errors remain and repair budget is left, so the draft is repaired."),
                    "Backtrack" => format!("{errors} objective errors survived every repair, so the conception is revisited."),
                    _ => "The session cannot make further progress and stops here.".to_string(),
                }
            }
            _ => "Acknowledged.".to_string(),
        };
        Ok(reply.chars().take(max_length).collect())
    }

    fn name(&self) -> &str {
        "mock"
    }

    fn deterministic(&self) -> bool {
        true
    }
}

/// Replays fixed replies in order, repeating the last one. `Err` entries
/// simulate transport failures.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    replies: Vec<Result<String, String>>,
    next: Mutex<usize>,
    prompts: Mutex<Vec<String>>,
}

impl ScriptedBackend {
    pub fn new(replies: Vec<Result<String, String>>) -> Self {
        ScriptedBackend {
            replies,
            ..Default::default()
        }
    }

    /// Prompts received so far.
    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().map(|p| p.clone()).unwrap_or_default()
    }
}

impl ExpertBackend for ScriptedBackend {
    fn complete(&self, prompt: &str, _max_length: usize) -> Result<String, BackendError> {
        if let Ok(mut p) = self.prompts.lock() {
            p.push(prompt.to_string());
        }
        let mut next = self.next.lock().map_err(|_| BackendError("poisoned".into()))?;
        let i = (*next).min(self.replies.len().saturating_sub(1));
        *next += 1;
        match self.replies.get(i) {
            Some(Ok(r)) => Ok(r.clone()),
            Some(Err(e)) => Err(BackendError(e.clone())),
            None => Err(BackendError("no scripted replies".into())),
        }
    }

    fn name(&self) -> &str {
        "scripted"
    }

    fn deterministic(&self) -> bool {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abc::{Dynamics, Meter};

    #[test]
    fn sad_slow_lullaby() {
        let (a, reasons) = KeywordTable::default().interpret("a sad slow lullaby", 0);
        assert_eq!(a.key, Key::A_MINOR);
        assert_eq!(a.meter, Meter::new(3, 4).unwrap());
        assert_eq!(a.tempo_bpm, 66);
        assert_eq!(a.velocity, Dynamics::P);
        assert!(!reasons.is_empty());
    }

    #[test]
    fn no_keywords_gives_defaults() {
        let (a, _) = KeywordTable::default().interpret("something about tuesday", 0);
        assert_eq!(a, MusicalAttributes::default());
    }

    #[test]
    fn bucket_midpoints() {
        let t = KeywordTable::default();
        assert_eq!(t.bucket_tempo("slow"), Some(66));
        assert_eq!(t.bucket_tempo("moderate"), Some(100));
        assert_eq!(t.bucket_tempo("lively"), Some(124));
        assert_eq!(t.bucket_tempo("fast"), Some(152));
    }

    #[test]
    fn explicit_key_and_tempo() {
        let (a, _) = KeywordTable::default().interpret("a march in D minor at 90 bpm for flute", 0);
        assert_eq!(a.key, "Dm".parse().unwrap());
        assert_eq!(a.tempo_bpm, 90);
        assert_eq!(a.meter, Meter::new(2, 4).unwrap());
        assert_eq!(a.instrument, "flute");
        let (b, _) = KeywordTable::default().interpret("in f# please", 0);
        assert_eq!(b.key, "F#".parse().unwrap());
    }

    #[test]
    fn perturbation_shifts_density() {
        let t = KeywordTable::default();
        assert_eq!(t.interpret("x", 1).0.note_density, 7.0);
        assert_eq!(t.interpret("x", 2).0.note_density, 5.0);
    }

    #[test]
    fn bad_tables() {
        assert!(KeywordTable::parse("sad colour=blue").is_err());
        assert!(KeywordTable::parse("sad tempo=glacial").is_err());
        assert!(KeywordTable::parse("bucket slow 80 60").is_err());
    }

    #[test]
    fn scripted_repeats_last() {
        let b = ScriptedBackend::new(vec![Ok("a".into()), Err("down".into())]);
        assert_eq!(b.complete("p", 10).unwrap(), "a");
        assert!(b.complete("p", 10).is_err());
        assert!(b.complete("p", 10).is_err());
        assert_eq!(b.prompts().len(), 3);
    }
}
