//! Attribute-to-music generation and bar-level regeneration.
//!
//! [`ConstraintGenerator`] is a seeded constraint generator. Work happens in
//! two-measure sections. For each section it picks onset counts near the
//! density target, splits every measure on a fixed duration grid, then walks
//! the key's diatonic scale with interval sizes steered toward the curvature
//! target. Each section is checked against both targets before it is
//! accepted, so any mix of original and regenerated sections stays within
//! tolerance.
//!
//! Other generators (a trained model, say) plug in through [`MelodyGenerator`].

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abc::{
    program_for_instrument, AbcScore, Event, Headers, Key, Measure, Pitch, Rational, Tempo,
    Voice,
};
use crate::attributes::{AttributeError, MusicalAttributes};
use crate::eval::{
    evaluate, measure_curvature, EvalErrorKind, EvalFailure, EvalReport, InstrumentRangeTable,
    CONTINUOUS_TOLERANCE,
};

/// Durations available to the rhythm filler, in sixteenth notes.
const GRID: [u32; 8] = [1, 2, 3, 4, 6, 8, 12, 16];
const MAX_ONSETS: u32 = 34;
const SECTION_ATTEMPTS: usize = 64;
/// Largest allowed jump from the previous measure's last pitch into new material.
pub const BOUNDARY_SEMITONES: i32 = 5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GenerationError {
    #[error("infeasible attributes: {0}")]
    InfeasibleAttributes(String),
    #[error("instrument `{0}` is not in the range table")]
    UnknownInstrument(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    InvalidAttributes(#[from] AttributeError),
    #[error("repair removed no errors ({before} before, {after} after)")]
    RepairStalled { before: usize, after: usize },
    #[error(transparent)]
    Eval(#[from] EvalFailure),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub attributes: MusicalAttributes,
    pub seed: u64,
    /// Defaults to `section_count * 2`. Must be even and at least 2.
    pub measures: Option<usize>,
}

impl GenerationRequest {
    pub fn new(attributes: MusicalAttributes, seed: u64) -> Self {
        GenerationRequest {
            attributes,
            seed,
            measures: None,
        }
    }

    pub fn measure_count(&self) -> usize {
        self.measures
            .unwrap_or(self.attributes.section_count as usize * 2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegenerationRequest {
    pub score: AbcScore,
    /// Section `i` covers measures `2i` and `2i + 1`.
    pub section_index: usize,
    pub attributes: MusicalAttributes,
    pub seed: u64,
    #[serde(default)]
    pub voice: usize,
}

/// Something that can write and rewrite melodies under attribute control.
pub trait MelodyGenerator {
    fn generate(&self, req: &GenerationRequest) -> Result<AbcScore, GenerationError>;
    fn regenerate_section(&self, req: &RegenerationRequest) -> Result<AbcScore, GenerationError>;
}

#[derive(Debug, Clone, Default)]
pub struct ConstraintGenerator {
    table: InstrumentRangeTable,
}

/// Which compositions of a measure into grid durations exist.
struct RhythmTable {
    span: u32,
    // feasible[k][s]: s sixteenths can be written as k grid durations
    feasible: Vec<Vec<bool>>,
}

impl RhythmTable {
    fn new(span: u32) -> Self {
        let kmax = MAX_ONSETS.min(span) as usize;
        let s = span as usize;
        let mut feasible = vec![vec![false; s + 1]; kmax + 1];
        feasible[0][0] = true;
        for k in 1..=kmax {
            for total in 1..=s {
                feasible[k][total] = GRID
                    .iter()
                    .any(|&v| v as usize <= total && feasible[k - 1][total - v as usize]);
            }
        }
        RhythmTable { span, feasible }
    }

    fn max_onsets(&self) -> u32 {
        (self.feasible.len() - 1) as u32
    }

    fn min_onsets(&self) -> Option<u32> {
        (1..self.feasible.len())
            .find(|&k| self.feasible[k][self.span as usize])
            .map(|k| k as u32)
    }

    fn possible(&self, k: u32) -> bool {
        (k as usize) < self.feasible.len() && self.feasible[k as usize][self.span as usize]
    }

    /// Random split of the measure into exactly `k` grid durations.
    fn sample(&self, k: u32, rng: &mut ChaCha8Rng) -> Vec<u32> {
        let mut left = self.span as usize;
        let mut out = Vec::with_capacity(k as usize);
        for j in 0..k as usize {
            let remaining_after = k as usize - j - 1;
            let ideal = left as f64 / (k as usize - j) as f64;
            let options: Vec<(u32, f64)> = GRID
                .iter()
                .copied()
                .filter(|&v| v as usize <= left && self.feasible[remaining_after][left - v as usize])
                .map(|v| (v, 1.0 / (1.0 + (v as f64 - ideal).abs()).powi(2)))
                .collect();
            let v = weighted_pick(&options, rng);
            out.push(v);
            left -= v as usize;
        }
        out
    }
}

fn weighted_pick<T: Copy>(options: &[(T, f64)], rng: &mut ChaCha8Rng) -> T {
    let total: f64 = options.iter().map(|(_, w)| w).sum();
    let mut x = rng.random::<f64>() * total;
    for &(v, w) in options {
        if x < w {
            return v;
        }
        x -= w;
    }
    options[options.len() - 1].0
}

/// Diatonic pitches available to a melody, sorted by MIDI number.
struct Palette {
    pitches: Vec<Pitch>,
    midi: Vec<i32>,
    tonic_pc: i32,
    center: i32,
}

impl Palette {
    fn new(key: Key, range: (u8, u8)) -> Result<Self, GenerationError> {
        let scale = key
            .scale()
            .map_err(GenerationError::InfeasibleAttributes)?;
        let (lo, hi) = (range.0 as i32, range.1 as i32);
        let mut pitches: Vec<Pitch> = (-1i8..=9)
            .flat_map(|octave| scale.iter().map(move |&(s, a)| Pitch::new(s, a, octave)))
            .filter(|p| (lo..=hi).contains(&p.midi()))
            .collect();
        pitches.sort_by_key(Pitch::midi);
        pitches.dedup_by_key(|p| p.midi());
        if pitches.len() < 2 {
            return Err(GenerationError::InfeasibleAttributes(format!(
                "range {lo}..{hi} holds fewer than two scale pitches"
            )));
        }
        let midi: Vec<i32> = pitches.iter().map(Pitch::midi).collect();
        Ok(Palette {
            pitches,
            midi,
            tonic_pc: key.tonic_pitch_class(),
            center: (lo + hi) / 2,
        })
    }

    fn span(&self) -> i32 {
        self.midi[self.midi.len() - 1] - self.midi[0]
    }

    fn is_tonic(&self, i: usize) -> bool {
        self.midi[i].rem_euclid(12) == self.tonic_pc
    }

    fn nearest_tonic(&self, to: i32) -> usize {
        (0..self.midi.len())
            .filter(|&i| self.is_tonic(i))
            .min_by_key(|&i| ((self.midi[i] - to).abs(), self.midi[i]))
            .unwrap_or_else(|| self.nearest(to))
    }

    fn nearest(&self, to: i32) -> usize {
        (0..self.midi.len())
            .min_by_key(|&i| ((self.midi[i] - to).abs(), self.midi[i]))
            .unwrap_or(0)
    }

    fn nearest_index_of_midi(&self, midi: i32) -> usize {
        self.nearest(midi)
    }
}

/// Fixed musical context for composing measures of one voice.
struct Frame {
    palette: Palette,
    rhythm: RhythmTable,
    /// Unit note length of the target score.
    unit: Rational,
}

impl Frame {
    fn new(key: Key, meter_span: Rational, unit: Rational, range: (u8, u8)) -> Result<Self, GenerationError> {
        let sixteenths = meter_span * Rational::from_integer(16);
        if !sixteenths.is_integer() || sixteenths.to_integer() < 1 {
            return Err(GenerationError::InfeasibleAttributes(format!(
                "meter span {meter_span} is not a whole number of sixteenths"
            )));
        }
        let span = sixteenths.to_integer() as u32;
        Ok(Frame {
            palette: Palette::new(key, range)?,
            rhythm: RhythmTable::new(span),
            unit,
        })
    }

    /// Rejects targets no section could meet within tolerance.
    fn check_feasible(&self, density: f64, curvature: f64) -> Result<(), GenerationError> {
        let min = self.rhythm.min_onsets().ok_or_else(|| {
            GenerationError::InfeasibleAttributes("measure cannot be filled from the duration grid".into())
        })?;
        let max = self.rhythm.max_onsets();
        if density > max as f64 + CONTINUOUS_TOLERANCE || density < min as f64 - CONTINUOUS_TOLERANCE {
            return Err(GenerationError::InfeasibleAttributes(format!(
                "note density {density} outside reachable {min}..={max} onsets per measure"
            )));
        }
        if curvature > self.palette.span() as f64 + CONTINUOUS_TOLERANCE {
            return Err(GenerationError::InfeasibleAttributes(format!(
                "pitch curvature {curvature} exceeds the {}-semitone range",
                self.palette.span()
            )));
        }
        Ok(())
    }

    /// Onset counts for a section of `len` measures whose mean sits near `density`.
    fn section_counts(&self, len: usize, density: f64, curvature: f64, rng: &mut ChaCha8Rng) -> Vec<u32> {
        let min = self.rhythm.min_onsets().unwrap_or(1);
        let max = self.rhythm.max_onsets();
        let candidates: Vec<u32> = (min..=max).filter(|&k| self.rhythm.possible(k)).collect();
        let mut combos: Vec<(Vec<u32>, f64)> = Vec::new();
        let mut push = |counts: Vec<u32>| {
            let mean = counts.iter().sum::<u32>() as f64 / counts.len() as f64;
            let dev = (mean - density).abs();
            if dev <= CONTINUOUS_TOLERANCE {
                combos.push((counts, dev));
            }
        };
        if len == 1 {
            for &a in &candidates {
                push(vec![a]);
            }
        } else {
            for &a in &candidates {
                for &b in &candidates {
                    push(vec![a, b]);
                }
            }
        }
        if combos.is_empty() {
            let nearest = candidates
                .iter()
                .copied()
                .min_by(|a, b| {
                    (*a as f64 - density)
                        .abs()
                        .total_cmp(&(*b as f64 - density).abs())
                })
                .unwrap_or(min);
            return vec![nearest; len];
        }
        // melodic targets need at least two notes in a measure
        if curvature >= 0.5 {
            let melodic: Vec<(Vec<u32>, f64)> = combos
                .iter()
                .filter(|(c, _)| c.iter().all(|&k| k >= 2))
                .cloned()
                .collect();
            if !melodic.is_empty() {
                combos = melodic;
            }
        }
        let weighted: Vec<(usize, f64)> = combos
            .iter()
            .enumerate()
            .map(|(i, (_, dev))| (i, (-6.0 * dev).exp()))
            .collect();
        combos[weighted_pick(&weighted, rng)].0.clone()
    }

    /// Chooses palette indices for one measure of `k` notes.
    fn walk(
        &self,
        k: usize,
        anchor: Option<i32>,
        target_interval: f64,
        cadence: bool,
        rng: &mut ChaCha8Rng,
    ) -> Vec<usize> {
        let p = &self.palette;
        let mut out = Vec::with_capacity(k);
        let first = match anchor {
            Some(prev) => {
                let near: Vec<usize> = (0..p.midi.len())
                    .filter(|&i| (p.midi[i] - prev).abs() <= BOUNDARY_SEMITONES)
                    .filter(|&i| !(cadence && k == 1) || p.is_tonic(i))
                    .collect();
                if near.is_empty() {
                    if cadence && k == 1 {
                        p.nearest_tonic(prev)
                    } else {
                        p.nearest_index_of_midi(prev)
                    }
                } else {
                    near[rng.random_range(0..near.len())]
                }
            }
            None => p.nearest_tonic(p.center),
        };
        out.push(first);
        let budget = target_interval * (k.saturating_sub(1)) as f64;
        let mut used = 0.0;
        for j in 1..k {
            let cur = out[j - 1];
            let last = j == k - 1;
            let desired = ((budget - used) / (k - j) as f64).max(0.0);
            let here = p.midi[cur];
            let best = (0..p.midi.len())
                .filter(|&i| !(last && cadence) || p.is_tonic(i))
                .map(|i| {
                    let delta = p.midi[i] - here;
                    let size = delta.abs() as f64;
                    let mut cost = (size - desired).powi(2) + rng.random::<f64>() * 0.6;
                    let landing = p.midi[i] - p.center;
                    if landing.abs() > 9 && landing.signum() == delta.signum() {
                        cost += 2.0;
                    }
                    (i, cost)
                })
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(i, _)| i)
                .unwrap_or(cur);
            used += (p.midi[best] - here).abs() as f64;
            out.push(best);
        }
        out
    }

    /// Composes `len` consecutive measures that meet both targets.
    fn compose_section(
        &self,
        len: usize,
        density: f64,
        curvature: f64,
        mut anchor: Option<i32>,
        cadence: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Vec<Event>>, GenerationError> {
        let start_anchor = anchor;
        for _ in 0..SECTION_ATTEMPTS {
            anchor = start_anchor;
            let counts = self.section_counts(len, density, curvature, rng);
            let active = counts.iter().filter(|&&k| k >= 2).count();
            let per_measure = if active == 0 {
                0.0
            } else {
                curvature * len as f64 / active as f64
            };
            let mut measures = Vec::with_capacity(len);
            let mut previous_rhythm: Option<Vec<u32>> = None;
            let mut curvatures = Vec::with_capacity(len);
            for (m, &k) in counts.iter().enumerate() {
                // the second measure echoes the first one's rhythm when it can
                let rhythm = match &previous_rhythm {
                    Some(r) if r.len() == k as usize && rng.random_bool(0.5) => r.clone(),
                    _ => self.rhythm.sample(k, rng),
                };
                let is_cadence = cadence && m == len - 1;
                let notes = self.walk(k as usize, anchor, per_measure, is_cadence, rng);
                let midi: Vec<i32> = notes.iter().map(|&i| self.palette.midi[i]).collect();
                curvatures.push(measure_curvature(&midi));
                anchor = midi.last().copied();
                let events = rhythm
                    .iter()
                    .zip(&notes)
                    .map(|(&v, &i)| {
                        Event::note(
                            self.palette.pitches[i],
                            Rational::new(v as i64, 16) / self.unit,
                        )
                    })
                    .collect();
                measures.push(events);
                previous_rhythm = Some(rhythm);
            }
            let mean_density = counts.iter().sum::<u32>() as f64 / len as f64;
            let mean_curvature = curvatures.iter().sum::<f64>() / len as f64;
            if (mean_density - density).abs() <= CONTINUOUS_TOLERANCE
                && (mean_curvature - curvature).abs() <= CONTINUOUS_TOLERANCE
            {
                return Ok(measures);
            }
        }
        Err(GenerationError::InfeasibleAttributes(format!(
            "no section met density {density} and curvature {curvature} within tolerance"
        )))
    }
}

fn section_rng(seed: u64, voice: usize, section: usize) -> ChaCha8Rng {
    // splitmix-style mixing so neighbouring sections get unrelated streams
    let mut z = seed
        ^ (voice as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (section as u64 + 1).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

fn title_for(attrs: &MusicalAttributes) -> String {
    let mut instrument = attrs.instrument.clone();
    if let Some(first) = instrument.get_mut(0..1) {
        first.make_ascii_uppercase();
    }
    format!("{instrument} melody in {} ({})", attrs.key, attrs.meter)
}

fn last_pitch_before(voice: &Voice, measure: usize) -> Option<i32> {
    voice.measures[..measure]
        .iter()
        .rev()
        .find_map(|m| m.melodic_midi().last().copied())
}

impl ConstraintGenerator {
    pub fn new(table: InstrumentRangeTable) -> Self {
        ConstraintGenerator { table }
    }

    pub fn table(&self) -> &InstrumentRangeTable {
        &self.table
    }

    fn range_for(&self, instrument: &str) -> Result<(u8, u8), GenerationError> {
        self.table
            .get(instrument)
            .ok_or_else(|| GenerationError::UnknownInstrument(instrument.to_string()))
    }

    /// Rewrites measures `start..end` of one voice in place.
    fn rewrite_measures(
        &self,
        score: &mut AbcScore,
        voice: usize,
        start: usize,
        end: usize,
        attrs: &MusicalAttributes,
        seed: u64,
    ) -> Result<(), GenerationError> {
        let instrument = score
            .instrument()
            .unwrap_or_else(|| attrs.instrument.clone());
        let range = self
            .range_for(&instrument)
            .or_else(|_| self.range_for(&attrs.instrument))?;
        let h = &score.headers;
        let frame = Frame::new(
            h.key_or_default(),
            h.meter_or_default().span(),
            h.unit_or_default(),
            range,
        )?;
        frame.check_feasible(attrs.note_density, attrs.pitch_curvature)?;
        let v = &mut score.voices[voice];
        let anchor = last_pitch_before(v, start);
        let cadence = end == v.measures.len();
        let mut rng = section_rng(seed, voice, start / 2);
        let measures = frame.compose_section(
            end - start,
            attrs.note_density,
            attrs.pitch_curvature,
            anchor,
            cadence,
            &mut rng,
        )?;
        for (offset, events) in measures.into_iter().enumerate() {
            v.measures[start + offset] = Measure {
                events,
                index: start + offset,
            };
        }
        Ok(())
    }

    /// Fixes the errors in `report` and re-evaluates. Header gaps are filled,
    /// out-of-range pitches are moved by octaves, and measures with a wrong
    /// beat count (or unfixable pitches) have their section regenerated.
    /// Attribute mismatches against the report's target are fixed through
    /// headers where possible, otherwise by regenerating the lead voice.
    pub fn repair(
        &self,
        score: &AbcScore,
        report: &EvalReport,
        seed: u64,
    ) -> Result<(AbcScore, EvalReport), GenerationError> {
        if report.errors.is_empty() {
            return Ok((score.clone(), report.clone()));
        }
        let target = report.target.as_ref();
        let mut attrs = target.cloned().unwrap_or_else(|| report.extracted.clone());
        let mut s = score.clone();
        s.source_text = None;
        let mut sections: BTreeSet<(usize, usize)> = BTreeSet::new();

        for err in &report.errors {
            match err.kind {
                EvalErrorKind::MissingHeaderField => self.fill_header(&mut s, &err.expected, target),
                EvalErrorKind::BeatCountMismatch => {
                    if let (Some(v), Some(m)) = (err.location.voice, err.location.measure) {
                        sections.insert((v, m / 2));
                    }
                }
                EvalErrorKind::NoteOutOfRange => {
                    let loc = err.location;
                    if let (Some(v), Some(m), Some(e)) = (loc.voice, loc.measure, loc.event) {
                        if !self.fold_into_range(&mut s, v, m, e) {
                            sections.insert((v, m / 2));
                        }
                    }
                }
                EvalErrorKind::AttributeMismatch => {
                    let name = err.expected.split('=').next().unwrap_or("");
                    if let Some(t) = target {
                        match name {
                            "key" => s.headers.key = Some(t.key),
                            "tempo" => {
                                s.headers.tempo = Some(Tempo {
                                    beat: Rational::new(1, 4),
                                    bpm: t.tempo_bpm,
                                })
                            }
                            "instrument" => set_instrument(&mut s, &t.instrument),
                            "velocity" => {
                                s.headers.velocity = Some(t.velocity);
                                for e in s.voices.iter_mut().flat_map(|v| &mut v.measures).flat_map(|m| &mut m.events) {
                                    e.dynamics = None;
                                }
                            }
                            "meter" => {
                                s.headers.meter = Some(t.meter);
                                for (v, voice) in s.voices.iter().enumerate() {
                                    for sec in 0..voice.measures.len().div_ceil(2) {
                                        sections.insert((v, sec));
                                    }
                                }
                            }
                            "note_density" | "pitch_curvature" => {
                                for sec in 0..s.voices[0].measures.len().div_ceil(2) {
                                    sections.insert((0, sec));
                                }
                            }
                            _ => {}
                        }
                    }
                }
            }
        }

        if !sections.is_empty() {
            // keep regeneration targets reachable under this score's meter and range
            let instrument = s.instrument().unwrap_or_else(|| attrs.instrument.clone());
            if let Ok(range) = self.range_for(&instrument).or_else(|_| self.range_for(&attrs.instrument)) {
                let h = &s.headers;
                if let Ok(frame) = Frame::new(h.key_or_default(), h.meter_or_default().span(), h.unit_or_default(), range) {
                    let min = frame.rhythm.min_onsets().unwrap_or(1) as f64;
                    let max = frame.rhythm.max_onsets() as f64;
                    attrs.note_density = attrs.note_density.clamp(min, max);
                    attrs.pitch_curvature = attrs.pitch_curvature.min(frame.palette.span() as f64);
                }
            }
        }
        for &(voice, section) in &sections {
            let len = s.voices[voice].measures.len();
            let start = section * 2;
            let end = (start + 2).min(len);
            self.rewrite_measures(&mut s, voice, start, end, &attrs, seed ^ (section as u64) << 8)?;
        }

        let after = evaluate(&s, &self.table, target)?;
        if after.errors.len() < report.errors.len() {
            Ok((s, after))
        } else {
            Err(GenerationError::RepairStalled {
                before: report.errors.len(),
                after: after.errors.len(),
            })
        }
    }

    fn fill_header(&self, s: &mut AbcScore, field: &str, target: Option<&MusicalAttributes>) {
        let h = &mut s.headers;
        match field {
            "X" => h.reference_number = Some(1),
            "T" => h.title = Some("Untitled".to_string()),
            "M" => h.meter = Some(h.meter_or_default()),
            "L" => h.unit_note_length = Some(h.unit_or_default()),
            "K" => h.key = Some(target.map_or(h.key_or_default(), |t| t.key)),
            "Q" => {
                h.tempo = Some(Tempo {
                    beat: Rational::new(1, 4),
                    bpm: target.map_or(100, |t| t.tempo_bpm),
                })
            }
            _ => {}
        }
    }

    /// Moves one event's out-of-range pitches by whole octaves. Returns false
    /// when some pitch cannot be brought into range that way.
    fn fold_into_range(&self, s: &mut AbcScore, voice: usize, measure: usize, event: usize) -> bool {
        let instrument = s.instrument().unwrap_or_else(|| "piano".to_string());
        let (lo, hi) = self.table.get(&instrument).unwrap_or(self.table.piano());
        let (lo, hi) = (lo as i32, hi as i32);
        let Some(ev) = s
            .voices
            .get_mut(voice)
            .and_then(|v| v.measures.get_mut(measure))
            .and_then(|m| m.events.get_mut(event))
        else {
            return false;
        };
        let mut ok = true;
        let mut pitches: Vec<Pitch> = Vec::new();
        for p in &ev.pitches {
            let mut q = *p;
            while q.midi() < lo {
                q = q.transpose_octaves(1);
            }
            while q.midi() > hi {
                q = q.transpose_octaves(-1);
            }
            if q.midi() < lo {
                ok = false;
                q = *p;
            }
            if !pitches.contains(&q) {
                pitches.push(q);
            }
        }
        let mut replacement = Event::chord(pitches, ev.duration);
        replacement.tied = ev.tied;
        replacement.dynamics = ev.dynamics;
        *ev = replacement;
        ok
    }
}

fn set_instrument(s: &mut AbcScore, instrument: &str) {
    match program_for_instrument(instrument) {
        Some(p) => s.headers.midi_program = Some(p),
        None => {
            s.headers.midi_program = None;
            if let Some(v) = s.voices.first_mut() {
                v.name = Some(instrument.to_string());
            }
        }
    }
}

impl MelodyGenerator for ConstraintGenerator {
    fn generate(&self, req: &GenerationRequest) -> Result<AbcScore, GenerationError> {
        let attrs = &req.attributes;
        attrs.validate()?;
        let measures = req.measure_count();
        if measures < 2 || !measures.is_multiple_of(2) {
            return Err(GenerationError::InvalidRequest(format!(
                "measure count {measures} must be even and at least 2"
            )));
        }
        let range = self.range_for(&attrs.instrument)?;
        let unit = Rational::new(1, 8);
        let frame = Frame::new(attrs.key, attrs.meter.span(), unit, range)?;
        frame.check_feasible(attrs.note_density, attrs.pitch_curvature)?;

        let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
        let mut body = Vec::with_capacity(measures);
        let mut anchor = None;
        for section in 0..measures / 2 {
            let cadence = section == measures / 2 - 1;
            let events = frame.compose_section(
                2,
                attrs.note_density,
                attrs.pitch_curvature,
                anchor,
                cadence,
                &mut rng,
            )?;
            for ev in events {
                anchor = ev.iter().rev().find_map(Event::melodic_pitch).map(|p| p.midi());
                body.push(Measure {
                    index: body.len(),
                    events: ev,
                });
            }
        }

        let mut score = AbcScore {
            headers: Headers {
                reference_number: Some(1),
                title: Some(title_for(attrs)),
                composer: None,
                meter: Some(attrs.meter),
                unit_note_length: Some(unit),
                tempo: Some(Tempo {
                    beat: Rational::new(1, 4),
                    bpm: attrs.tempo_bpm,
                }),
                key: Some(attrs.key),
                midi_program: None,
                velocity: Some(attrs.velocity),
            },
            voices: vec![Voice::new(body)],
            source_text: None,
        };
        set_instrument(&mut score, &attrs.instrument);
        Ok(score)
    }

    fn regenerate_section(&self, req: &RegenerationRequest) -> Result<AbcScore, GenerationError> {
        req.attributes.validate()?;
        let voice = req.score.voices.get(req.voice).ok_or_else(|| {
            GenerationError::InvalidRequest(format!("voice {} does not exist", req.voice))
        })?;
        let sections = voice.measures.len() / 2;
        if req.section_index >= sections {
            return Err(GenerationError::InvalidRequest(format!(
                "section {} out of range (score has {sections} sections)",
                req.section_index
            )));
        }
        let mut score = req.score.clone();
        score.source_text = None;
        let start = req.section_index * 2;
        self.rewrite_measures(&mut score, req.voice, start, start + 2, &req.attributes, req.seed)?;
        Ok(score)
    }
}
