//! Aesthetic ranking of candidate scores.
//!
//! Candidates are ordered first by objective error count, then by a weighted
//! feature score. Any scorer that yields [`CandidateFeatures`] and a total
//! preorder can replace this one behind [`featurize`] and [`compare`].

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abc::{AbcScore, Rational};
use crate::eval::{EvalFailure, EvalReport};

const BUNDLED_WEIGHTS: &str = include_str!("../data/voter_weights.txt");

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VoteError {
    #[error("need at least 2 candidates, got {0}")]
    TooFewCandidates(usize),
    #[error(transparent)]
    Eval(#[from] EvalFailure),
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("voter weights line {line}: {message}")]
pub struct WeightsError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoterWeights {
    pub smoothness: f64,
    pub variety: f64,
    pub coherence: f64,
    pub range: f64,
    /// Span (semitones) at which the range term reaches 1.
    pub range_cap: f64,
    /// Intervals beyond this many semitones count against smoothness.
    pub leap_threshold: f64,
}

impl Default for VoterWeights {
    fn default() -> Self {
        BUNDLED_WEIGHTS.parse().expect("bundled voter weights are valid")
    }
}

impl FromStr for VoterWeights {
    type Err = WeightsError;

    /// `name value` per line; `#` comments. Every field must be present.
    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| WeightsError { line: i + 1, message };
            let mut parts = line.split_whitespace();
            let (Some(name), Some(value), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(err(format!("expected `name value`, got `{line}`")));
            };
            let value: f64 = value
                .parse()
                .map_err(|_| err(format!("`{value}` is not a number")))?;
            if !value.is_finite() || value < 0.0 {
                return Err(err(format!("`{name}` must be finite and non-negative")));
            }
            values.insert(name.to_string(), value);
        }
        let get = |name: &str| {
            values.get(name).copied().ok_or_else(|| WeightsError {
                line: 0,
                message: format!("missing `{name}`"),
            })
        };
        let w = VoterWeights {
            smoothness: get("smoothness")?,
            variety: get("variety")?,
            coherence: get("coherence")?,
            range: get("range")?,
            range_cap: get("range_cap")?,
            leap_threshold: get("leap_threshold")?,
        };
        if w.range_cap == 0.0 {
            return Err(WeightsError {
                line: 0,
                message: "`range_cap` must be positive".into(),
            });
        }
        Ok(w)
    }
}

impl VoterWeights {
    pub fn load(path: &Path) -> Result<Self, WeightsError> {
        std::fs::read_to_string(path)
            .map_err(|e| WeightsError {
                line: 0,
                message: e.to_string(),
            })?
            .parse()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateFeatures {
    pub error_count: usize,
    pub pitch_range: u32,
    pub contour_smoothness: f64,
    pub rhythmic_variety: f64,
    pub phrase_coherence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteResult {
    /// Candidate indices, best first.
    pub ranking: Vec<usize>,
    /// Weighted feature score per candidate, in input order.
    pub scores: Vec<f64>,
    pub features: Vec<CandidateFeatures>,
    /// `(i, j, preferred)` for every `i < j`.
    pub pairwise: Vec<(usize, usize, usize)>,
}

impl VoteResult {
    pub fn winner(&self) -> usize {
        self.ranking[0]
    }
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Contour correlation of the first and second half of a line, mapped to [0, 1].
fn coherence(line: &[i32]) -> f64 {
    let half = line.len() / 2;
    if half < 2 {
        return 0.5;
    }
    let first: Vec<f64> = line[..half].iter().map(|&p| p as f64).collect();
    let second: Vec<f64> = line[line.len() - half..].iter().map(|&p| p as f64).collect();
    match pearson(&first, &second) {
        Some(r) => (r + 1.0) / 2.0,
        None if first.iter().all(|&p| p == first[0]) && second.iter().all(|&p| p == second[0]) => 1.0,
        None => 0.5,
    }
}

/// Features of the lead voice plus the report's error count.
pub fn featurize_with(
    score: &AbcScore,
    report: &EvalReport,
    weights: &VoterWeights,
) -> Result<CandidateFeatures, EvalFailure> {
    let voice = score.voices.first().ok_or(EvalFailure::NoNotes)?;
    let line: Vec<i32> = voice.measures.iter().flat_map(|m| m.melodic_midi()).collect();
    if line.is_empty() {
        return Err(EvalFailure::NoNotes);
    }
    let events: Vec<Rational> = voice
        .measures
        .iter()
        .flat_map(|m| m.events.iter().map(|e| e.duration))
        .collect();
    let mut distinct = events.clone();
    distinct.sort();
    distinct.dedup();

    let excess = if line.len() < 2 {
        0.0
    } else {
        line.windows(2)
            .map(|w| ((w[1] - w[0]).abs() as f64 - weights.leap_threshold).max(0.0))
            .sum::<f64>()
            / (line.len() - 1) as f64
    };
    let lo = *line.iter().min().unwrap_or(&0);
    let hi = *line.iter().max().unwrap_or(&0);
    Ok(CandidateFeatures {
        error_count: report.errors.len(),
        pitch_range: (hi - lo) as u32,
        contour_smoothness: 1.0 / (1.0 + excess),
        rhythmic_variety: distinct.len() as f64 / events.len() as f64,
        phrase_coherence: coherence(&line),
    })
}

pub fn featurize(score: &AbcScore, report: &EvalReport) -> Result<CandidateFeatures, EvalFailure> {
    featurize_with(score, report, &VoterWeights::default())
}

/// Weighted feature score, ignoring errors.
pub fn score(f: &CandidateFeatures, w: &VoterWeights) -> f64 {
    w.smoothness * f.contour_smoothness
        + w.variety * f.rhythmic_variety
        + w.coherence * f.phrase_coherence
        + w.range * (f.pitch_range as f64).min(w.range_cap) / w.range_cap
}

/// Fewer errors wins; then the higher score; exact ties go to `a`.
pub fn compare_with(a: &CandidateFeatures, b: &CandidateFeatures, w: &VoterWeights) -> Side {
    if a.error_count != b.error_count {
        return if a.error_count < b.error_count { Side::A } else { Side::B };
    }
    if score(b, w) > score(a, w) {
        Side::B
    } else {
        Side::A
    }
}

pub fn compare(a: &CandidateFeatures, b: &CandidateFeatures) -> Side {
    compare_with(a, b, &VoterWeights::default())
}

/// Ranks precomputed features. Equal candidates keep their input order.
pub fn vote_features(features: Vec<CandidateFeatures>, w: &VoterWeights) -> Result<VoteResult, VoteError> {
    if features.len() < 2 {
        return Err(VoteError::TooFewCandidates(features.len()));
    }
    let scores: Vec<f64> = features.iter().map(|f| score(f, w)).collect();
    let mut ranking: Vec<usize> = (0..features.len()).collect();
    ranking.sort_by(|&i, &j| {
        features[i]
            .error_count
            .cmp(&features[j].error_count)
            .then(scores[j].total_cmp(&scores[i]))
    });
    let mut pairwise = Vec::new();
    for i in 0..features.len() {
        for j in i + 1..features.len() {
            let preferred = match compare_with(&features[i], &features[j], w) {
                Side::A => i,
                Side::B => j,
            };
            pairwise.push((i, j, preferred));
        }
    }
    Ok(VoteResult {
        ranking,
        scores,
        features,
        pairwise,
    })
}

pub fn vote_with(candidates: &[(AbcScore, EvalReport)], w: &VoterWeights) -> Result<VoteResult, VoteError> {
    if candidates.len() < 2 {
        return Err(VoteError::TooFewCandidates(candidates.len()));
    }
    let features = candidates
        .iter()
        .map(|(s, r)| featurize_with(s, r, w))
        .collect::<Result<Vec<_>, _>>()?;
    vote_features(features, w)
}

pub fn vote(candidates: &[(AbcScore, EvalReport)]) -> Result<VoteResult, VoteError> {
    vote_with(candidates, &VoterWeights::default())
}

/// Share of labelled pairs on which [`compare`] picks the labelled side.
/// Returns 0 for an empty list.
pub fn voting_accuracy(pairs: &[(CandidateFeatures, CandidateFeatures, Side)]) -> f64 {
    voting_accuracy_with(pairs, &VoterWeights::default())
}

pub fn voting_accuracy_with(pairs: &[(CandidateFeatures, CandidateFeatures, Side)], w: &VoterWeights) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let agree = pairs
        .iter()
        .filter(|(a, b, label)| compare_with(a, b, w) == *label)
        .count();
    agree as f64 / pairs.len() as f64
}
