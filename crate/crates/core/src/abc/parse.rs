use super::{
    midi_pitch, AbcScore, Dynamics, Event, Headers, Key, Measure, Meter,
    ParseError, Pitch, Rational, Step, Tempo, Voice, MAX_BPM, MIN_BPM,
};

/// Parses one ABC tune into a score.
///
/// Header lines run until `K:` (or the first line that is not a header).
/// After that every line is body, except `V:` voice switches and `%%`
/// directives, which may appear anywhere.
pub fn parse_abc(text: &str) -> Result<AbcScore, ParseError> {
    let mut parser = Parser::default();
    for (i, raw) in text.lines().enumerate() {
        parser.line(i + 1, raw)?;
    }
    parser.finish(text)
}

#[derive(Default)]
struct VoiceState {
    id: String,
    name: Option<String>,
    measures: Vec<Measure>,
    current: Vec<Event>,
    pending_dynamics: Option<Dynamics>,
}

impl VoiceState {
    fn new(id: String, name: Option<String>) -> Self {
        VoiceState {
            id,
            name,
            ..Default::default()
        }
    }

    fn close_measure(&mut self) {
        if !self.current.is_empty() {
            let index = self.measures.len();
            self.measures.push(Measure {
                events: std::mem::take(&mut self.current),
                index,
            });
        }
    }
}

#[derive(Default)]
struct Parser {
    headers: Headers,
    in_body: bool,
    voices: Vec<VoiceState>,
    current_voice: Option<usize>,
    last_line: usize,
}

fn syntax(line: usize, column: usize, message: impl Into<String>) -> ParseError {
    ParseError::SyntaxError {
        line,
        column,
        message: message.into(),
    }
}

fn unsupported(line: usize, feature: &str) -> ParseError {
    ParseError::UnsupportedFeature {
        feature: feature.to_string(),
        line,
    }
}

/// Strips a `%` comment, leaving `%%` directive lines alone.
fn strip_comment(line: &str) -> &str {
    if line.trim_start().starts_with("%%") {
        return line;
    }
    match line.find('%') {
        Some(i) => &line[..i],
        None => line,
    }
}

fn header_field(line: &str) -> Option<(char, &str)> {
    let mut chars = line.chars();
    let letter = chars.next()?;
    if letter.is_ascii_alphabetic() && chars.next() == Some(':') {
        Some((letter, line[2..].trim()))
    } else {
        None
    }
}

fn parse_fraction(s: &str) -> Option<Rational> {
    let (n, d) = s.trim().split_once('/')?;
    let n: i64 = n.trim().parse().ok()?;
    let d: i64 = d.trim().parse().ok()?;
    (n > 0 && d > 0).then(|| Rational::new(n, d))
}

fn parse_tempo(value: &str) -> Option<Tempo> {
    // drop quoted text such as "Allegro"
    let mut cleaned = String::new();
    let mut in_quote = false;
    for c in value.chars() {
        if c == '"' {
            in_quote = !in_quote;
        } else if !in_quote {
            cleaned.push(c);
        }
    }
    let cleaned = cleaned.trim();
    if let Some((beat, bpm)) = cleaned.split_once('=') {
        let beat = parse_fraction(beat)?;
        let bpm = bpm.trim().parse().ok()?;
        Some(Tempo { beat, bpm })
    } else {
        let bpm = cleaned.parse().ok()?;
        Some(Tempo {
            beat: Rational::new(1, 4),
            bpm,
        })
    }
}

/// Parses `V:<id> [name="..."]`.
fn parse_voice_field(value: &str) -> (String, Option<String>) {
    let value = value.trim();
    let (id, rest) = match value.find(char::is_whitespace) {
        Some(i) => (&value[..i], value[i..].trim()),
        None => (value, ""),
    };
    let mut name = None;
    for key in ["name=", "nm="] {
        if let Some(pos) = rest.find(key) {
            let after = &rest[pos + key.len()..];
            let parsed = if let Some(stripped) = after.strip_prefix('"') {
                stripped.split('"').next().unwrap_or("")
            } else {
                after.split_whitespace().next().unwrap_or("")
            };
            if !parsed.is_empty() {
                name = Some(parsed.to_string());
            }
            break;
        }
    }
    (id.to_string(), name)
}

impl Parser {
    fn line(&mut self, lineno: usize, raw: &str) -> Result<(), ParseError> {
        let line = strip_comment(raw);
        let trimmed = line.trim();
        if trimmed.is_empty() {
            return Ok(());
        }
        if let Some(directive) = trimmed.strip_prefix("%%") {
            return self.directive(lineno, directive);
        }
        if let Some((letter, value)) = header_field(trimmed) {
            if !self.in_body {
                return self.header(lineno, letter, value);
            }
            return match letter {
                'V' => {
                    let (id, name) = parse_voice_field(value);
                    self.select_voice(id, name);
                    Ok(())
                }
                'w' | 'W' => Err(unsupported(lineno, "lyrics")),
                _ => Err(unsupported(lineno, "inline header change")),
            };
        }
        self.in_body = true;
        self.last_line = lineno;
        self.body(lineno, line)
    }

    fn directive(&mut self, lineno: usize, directive: &str) -> Result<(), ParseError> {
        let mut words = directive.split_whitespace();
        match words.next() {
            Some("MIDI") if words.next() == Some("program") => {
                let program = words
                    .last()
                    .and_then(|w| w.parse::<u8>().ok())
                    .filter(|p| *p <= 127)
                    .ok_or_else(|| syntax(lineno, 1, "malformed %%MIDI program directive"))?;
                self.headers.midi_program = Some(program);
            }
            Some("velocity") => {
                let class = words
                    .next()
                    .ok_or_else(|| syntax(lineno, 1, "missing velocity class"))?;
                let v = class.parse().map_err(|e: String| syntax(lineno, 1, e))?;
                self.headers.velocity = Some(v);
            }
            _ => {}
        }
        Ok(())
    }

    fn header(&mut self, lineno: usize, letter: char, value: &str) -> Result<(), ParseError> {
        let bad = |msg: String| syntax(lineno, 3, msg);
        match letter {
            'X' => {
                let n = value
                    .parse()
                    .map_err(|_| bad(format!("malformed reference number `{value}`")))?;
                self.headers.reference_number = Some(n);
            }
            'T' => {
                if self.headers.title.is_none() {
                    self.headers.title = Some(value.to_string());
                }
            }
            'C' => {
                if self.headers.composer.is_none() {
                    self.headers.composer = Some(value.to_string());
                }
            }
            'M' => {
                if value.eq_ignore_ascii_case("none") {
                    return Err(unsupported(lineno, "free meter"));
                }
                self.headers.meter = Some(value.parse::<Meter>().map_err(bad)?);
            }
            'L' => {
                let unit = parse_fraction(value)
                    .filter(|u| {
                        *u.numer() == 1 && u.denom().count_ones() == 1 && *u.denom() <= 64
                    })
                    .ok_or_else(|| bad(format!("malformed unit note length `{value}`")))?;
                self.headers.unit_note_length = Some(unit);
            }
            'Q' => {
                let tempo =
                    parse_tempo(value).ok_or_else(|| bad(format!("malformed tempo `{value}`")))?;
                if !(MIN_BPM..=MAX_BPM).contains(&tempo.bpm) {
                    return Err(bad(format!(
                        "tempo {} outside {MIN_BPM}..={MAX_BPM}",
                        tempo.bpm
                    )));
                }
                self.headers.tempo = Some(tempo);
            }
            'K' => {
                let lower = value.to_ascii_lowercase();
                if lower == "none" || lower.starts_with("hp") {
                    return Err(unsupported(lineno, "key without tonic"));
                }
                let key = value.parse::<Key>().map_err(|e| {
                    if e.starts_with("mode") {
                        unsupported(lineno, &e)
                    } else {
                        bad(e)
                    }
                })?;
                self.headers.key = Some(key);
                self.in_body = true;
            }
            'V' => {
                let (id, name) = parse_voice_field(value);
                self.select_voice(id, name);
            }
            'w' | 'W' => return Err(unsupported(lineno, "lyrics")),
            // informational fields that carry no musical structure
            _ => {}
        }
        Ok(())
    }

    fn select_voice(&mut self, id: String, name: Option<String>) {
        let idx = match self.voices.iter().position(|v| v.id == id) {
            Some(i) => {
                if name.is_some() {
                    self.voices[i].name = name;
                }
                i
            }
            None => {
                self.voices.push(VoiceState::new(id, name));
                self.voices.len() - 1
            }
        };
        self.current_voice = Some(idx);
    }

    fn voice(&mut self) -> &mut VoiceState {
        let idx = match self.current_voice {
            Some(i) => i,
            None => {
                self.voices.push(VoiceState::new("1".into(), None));
                self.current_voice = Some(0);
                0
            }
        };
        &mut self.voices[idx]
    }

    fn body(&mut self, lineno: usize, line: &str) -> Result<(), ParseError> {
        let chars: Vec<char> = line.chars().collect();
        let mut cur = Cursor {
            chars: &chars,
            pos: 0,
            line: lineno,
        };
        while let Some(c) = cur.peek() {
            match c {
                c if c.is_whitespace() => cur.pos += 1,
                '\\' | '`' | 'y' | '.' | '~' => cur.pos += 1,
                '|' => {
                    cur.pos += 1;
                    while matches!(cur.peek(), Some('|' | ']' | ':')) {
                        cur.pos += 1;
                    }
                    if cur.peek().is_some_and(|c| c.is_ascii_digit()) {
                        return Err(unsupported(lineno, "repeat ending"));
                    }
                    if cur.peek() == Some('[') && cur.peek_at(1).is_some_and(|c| c.is_ascii_digit()) {
                        return Err(unsupported(lineno, "repeat ending"));
                    }
                    self.voice().close_measure();
                }
                ':' => {
                    let col = cur.column();
                    let start = cur.pos;
                    while cur.peek() == Some(':') {
                        cur.pos += 1;
                    }
                    if cur.peek() == Some('|') {
                        continue;
                    }
                    // `::` is a double repeat barline on its own
                    if cur.pos - start >= 2 {
                        self.voice().close_measure();
                        continue;
                    }
                    return Err(syntax(lineno, col, "stray `:`"));
                }
                '!' | '+' => {
                    let col = cur.column();
                    cur.pos += 1;
                    let start = cur.pos;
                    while cur.peek().is_some_and(|x| x != c) {
                        cur.pos += 1;
                    }
                    if cur.peek() != Some(c) {
                        return Err(syntax(lineno, col, "unterminated decoration"));
                    }
                    let name: String = chars[start..cur.pos].iter().collect();
                    cur.pos += 1;
                    if let Ok(d) = name.parse::<Dynamics>() {
                        self.voice().pending_dynamics = Some(d);
                    }
                }
                '"' => return Err(unsupported(lineno, "chord symbol")),
                '(' => {
                    if cur.peek_at(1).is_some_and(|c| c.is_ascii_digit()) {
                        return Err(unsupported(lineno, "tuplet"));
                    }
                    return Err(unsupported(lineno, "slur"));
                }
                ')' => return Err(unsupported(lineno, "slur")),
                '{' => return Err(unsupported(lineno, "grace notes")),
                '>' | '<' => return Err(unsupported(lineno, "broken rhythm")),
                'Z' => return Err(unsupported(lineno, "multi-measure rest")),
                'z' | 'x' => {
                    cur.pos += 1;
                    let duration = cur.duration()?;
                    if cur.peek() == Some('-') {
                        return Err(syntax(lineno, cur.column(), "tie on a rest"));
                    }
                    self.voice().current.push(Event::rest(duration));
                }
                '[' => {
                    match cur.peek_at(1) {
                        Some('|') => {
                            cur.pos += 2;
                            self.voice().close_measure();
                            continue;
                        }
                        Some(d) if d.is_ascii_digit() => {
                            return Err(unsupported(lineno, "repeat ending"))
                        }
                        Some(l) if l.is_ascii_alphabetic() && cur.peek_at(2) == Some(':') => {
                            return Err(unsupported(lineno, "inline header change"))
                        }
                        _ => {}
                    }
                    let event = cur.chord()?;
                    self.push_sounding(event);
                }
                '^' | '_' | '=' | 'A'..='G' | 'a'..='g' => {
                    let (pitch, duration, tied) = cur.note()?;
                    let mut event = Event::note(pitch, duration.unwrap_or(Rational::from_integer(1)));
                    event.tied = tied;
                    self.push_sounding(event);
                }
                other => {
                    return Err(syntax(
                        lineno,
                        cur.column(),
                        format!("unexpected character `{other}`"),
                    ))
                }
            }
        }
        Ok(())
    }

    fn push_sounding(&mut self, mut event: Event) {
        let voice = self.voice();
        event.dynamics = voice.pending_dynamics.take();
        voice.current.push(event);
    }

    fn finish(mut self, text: &str) -> Result<AbcScore, ParseError> {
        for v in &mut self.voices {
            v.close_measure();
        }
        let voices: Vec<Voice> = self
            .voices
            .into_iter()
            .filter(|v| !v.measures.is_empty())
            .map(|v| Voice {
                id: v.id,
                name: v.name,
                measures: v.measures,
            })
            .collect();
        if voices.is_empty() {
            return Err(ParseError::EmptyBody);
        }
        let count = voices[0].measures.len();
        if voices.iter().any(|v| v.measures.len() != count) {
            return Err(syntax(self.last_line, 1, "voices have unequal measure counts"));
        }
        let score = AbcScore {
            headers: self.headers,
            voices,
            source_text: Some(text.to_string()),
        };
        debug_assert!(score.validate().is_ok());
        Ok(score)
    }
}

struct Cursor<'a> {
    chars: &'a [char],
    pos: usize,
    line: usize,
}

impl Cursor<'_> {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn peek_at(&self, offset: usize) -> Option<char> {
        self.chars.get(self.pos + offset).copied()
    }

    fn column(&self) -> usize {
        self.pos + 1
    }

    fn integer(&mut self) -> Option<i64> {
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        if start == self.pos {
            return None;
        }
        self.chars[start..self.pos].iter().collect::<String>().parse().ok()
    }

    /// `n`, `/`, `//`, `/d`, `n/`, `n/d`; absent means 1.
    fn duration(&mut self) -> Result<Rational, ParseError> {
        Ok(self.optional_duration()?.unwrap_or(Rational::from_integer(1)))
    }

    fn optional_duration(&mut self) -> Result<Option<Rational>, ParseError> {
        let col = self.column();
        let numer = self.integer();
        let mut denom: i64 = 1;
        let mut seen_slash = false;
        if self.peek() == Some('/') {
            seen_slash = true;
            self.pos += 1;
            if let Some(d) = self.integer() {
                denom = d;
            } else {
                denom = 2;
                while self.peek() == Some('/') {
                    self.pos += 1;
                    denom *= 2;
                }
            }
        }
        if numer.is_none() && !seen_slash {
            return Ok(None);
        }
        let numer = numer.unwrap_or(1);
        if numer == 0 || denom == 0 {
            return Err(syntax(self.line, col, "zero in note length"));
        }
        Ok(Some(Rational::new(numer, denom)))
    }

    fn pitch(&mut self) -> Result<Pitch, ParseError> {
        let col = self.column();
        let mut accidental: i8 = 0;
        let mut marks = 0;
        let mut natural = false;
        while let Some(c) = self.peek() {
            match c {
                '^' => accidental += 1,
                '_' => accidental -= 1,
                '=' => natural = true,
                _ => break,
            }
            marks += 1;
            self.pos += 1;
        }
        if accidental.abs() > 1 || (marks > 1 && !natural) {
            return Err(unsupported(self.line, "double accidental"));
        }
        if natural && marks > 1 {
            return Err(syntax(self.line, col, "conflicting accidentals"));
        }
        let letter = self
            .peek()
            .ok_or_else(|| syntax(self.line, self.column(), "expected note letter"))?;
        let (step, mut octave) = match Step::from_letter(letter.to_ascii_uppercase()) {
            Some(s) if letter.is_ascii_uppercase() => (s, 4i8),
            Some(s) => (s, 5i8),
            None => {
                return Err(syntax(
                    self.line,
                    self.column(),
                    format!("expected note letter, found `{letter}`"),
                ))
            }
        };
        self.pos += 1;
        while let Some(c) = self.peek() {
            match c {
                '\'' => octave += 1,
                ',' => octave -= 1,
                _ => break,
            }
            self.pos += 1;
        }
        let pitch = Pitch::new(step, accidental, octave);
        midi_pitch(pitch).map_err(|e| syntax(self.line, col, e.to_string()))?;
        Ok(pitch)
    }

    fn note(&mut self) -> Result<(Pitch, Option<Rational>, bool), ParseError> {
        let pitch = self.pitch()?;
        let duration = self.optional_duration()?;
        let tied = self.peek() == Some('-');
        if tied {
            self.pos += 1;
        }
        Ok((pitch, duration, tied))
    }

    fn chord(&mut self) -> Result<Event, ParseError> {
        let col = self.column();
        self.pos += 1; // '['
        let mut pitches = Vec::new();
        let mut inner: Option<Option<Rational>> = None;
        let mut tied = false;
        loop {
            match self.peek() {
                Some(']') => {
                    self.pos += 1;
                    break;
                }
                Some(c) if c.is_whitespace() => self.pos += 1,
                Some(_) => {
                    let (pitch, duration, t) = self.note()?;
                    if pitches.contains(&pitch) {
                        return Err(syntax(self.line, col, "duplicate pitch in chord"));
                    }
                    match inner {
                        None => inner = Some(duration),
                        Some(prev) if prev != duration => {
                            return Err(unsupported(self.line, "chord with mixed note lengths"))
                        }
                        _ => {}
                    }
                    tied |= t;
                    pitches.push(pitch);
                }
                None => return Err(syntax(self.line, col, "unterminated chord")),
            }
        }
        if pitches.is_empty() {
            return Err(syntax(self.line, col, "empty chord"));
        }
        let inner = inner.flatten().unwrap_or(Rational::from_integer(1));
        let outer = self.duration()?;
        if self.peek() == Some('-') {
            self.pos += 1;
            tied = true;
        }
        let mut event = Event::chord(pitches, inner * outer);
        event.tied = tied;
        Ok(event)
    }
}
