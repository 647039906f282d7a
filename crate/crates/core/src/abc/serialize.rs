use std::fmt::Write;

use super::{AbcScore, Event, EventKind, Rational, Voice};

const MEASURES_PER_LINE: usize = 4;

/// Shortest ABC length suffix: `""` for 1, `2`, `/`, `/4`, `3/2`.
pub fn format_duration(d: Rational) -> String {
    let (n, m) = (*d.numer(), *d.denom());
    match (n, m) {
        (1, 1) => String::new(),
        (n, 1) => n.to_string(),
        (1, 2) => "/".to_string(),
        (1, m) => format!("/{m}"),
        (n, m) => format!("{n}/{m}"),
    }
}

fn format_fraction(r: Rational) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

fn write_event(out: &mut String, e: &Event) {
    if let Some(d) = e.dynamics {
        let _ = write!(out, "!{d}!");
    }
    match e.kind {
        EventKind::Rest => out.push('z'),
        EventKind::Note => {
            let _ = write!(out, "{}", e.pitches[0]);
        }
        EventKind::Chord => {
            out.push('[');
            for p in &e.pitches {
                let _ = write!(out, "{p}");
            }
            out.push(']');
        }
    }
    out.push_str(&format_duration(e.duration));
    if e.tied {
        out.push('-');
    }
}

fn write_voice_body(out: &mut String, voice: &Voice) {
    let last = voice.measures.len().saturating_sub(1);
    for (i, m) in voice.measures.iter().enumerate() {
        let events: Vec<String> = m
            .events
            .iter()
            .map(|e| {
                let mut s = String::new();
                write_event(&mut s, e);
                s
            })
            .collect();
        out.push_str(&events.join(" "));
        if i == last {
            out.push_str(" |]\n");
        } else if (i + 1) % MEASURES_PER_LINE == 0 {
            out.push_str(" |\n");
        } else {
            out.push_str(" | ");
        }
    }
}

/// Canonical ABC text: headers X,T,C,M,L,Q,K, then directives, then the body
/// with four measures per line and a final `|]`.
pub fn serialize_abc(score: &AbcScore) -> String {
    let h = &score.headers;
    let mut out = String::new();
    if let Some(x) = h.reference_number {
        let _ = writeln!(out, "X:{x}");
    }
    if let Some(t) = &h.title {
        let _ = writeln!(out, "T:{t}");
    }
    if let Some(c) = &h.composer {
        let _ = writeln!(out, "C:{c}");
    }
    if let Some(m) = h.meter {
        let _ = writeln!(out, "M:{m}");
    }
    if let Some(l) = h.unit_note_length {
        let _ = writeln!(out, "L:{}", format_fraction(l));
    }
    if let Some(q) = h.tempo {
        let _ = writeln!(out, "Q:{}={}", format_fraction(q.beat), q.bpm);
    }
    if let Some(k) = h.key {
        let _ = writeln!(out, "K:{k}");
    }
    if let Some(p) = h.midi_program {
        let _ = writeln!(out, "%%MIDI program {p}");
    }
    if let Some(v) = h.velocity {
        let _ = writeln!(out, "%%velocity {v}");
    }
    let explicit_voices = score.voices.len() > 1
        || score.voices.iter().any(|v| v.id != "1" || v.name.is_some());
    for voice in &score.voices {
        if explicit_voices {
            match &voice.name {
                Some(name) => {
                    let _ = writeln!(out, "V:{} name=\"{}\"", voice.id, name);
                }
                None => {
                    let _ = writeln!(out, "V:{}", voice.id);
                }
            }
        }
        write_voice_body(&mut out, voice);
    }
    out
}
