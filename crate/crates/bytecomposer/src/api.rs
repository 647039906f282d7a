//! JSON shapes served over HTTP. Each is a pure function of a [`Session`],
//! so a scenario driven through the library and one driven over HTTP can be
//! compared value for value.

use bytecomposer_core::abc::{AbcScore, EventKind, Rational};
use bytecomposer_core::attributes::MusicalAttributes;
use bytecomposer_core::eval::EvalReport;
use bytecomposer_core::memory::{EdgeKind, Role, Stage};
use bytecomposer_core::pipeline::{PipelineConfig, Session, SessionStatus};
use serde::{Deserialize, Serialize};

/// Dialog records included in an [`ApiSession`].
pub const DIALOG_TAIL: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    pub query: String,
    #[serde(default)]
    pub config: Option<PipelineConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSummary {
    pub index: usize,
    pub clean: bool,
    pub error_count: usize,
    pub tser_flag: bool,
    pub irer_flag: bool,
    pub sicr_complete: bool,
    pub aaa: Option<f64>,
    pub vote_score: Option<f64>,
    pub repairs: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiConception {
    pub attributes: MusicalAttributes,
    pub summary: String,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiDialogRecord {
    pub role: Role,
    pub text: String,
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiSession {
    pub id: String,
    pub query: String,
    pub status: SessionStatus,
    pub stage: Stage,
    pub config: PipelineConfig,
    pub conception: Option<ApiConception>,
    pub candidates: Vec<CandidateSummary>,
    /// Candidate indices best first, once a vote has run.
    pub ranking: Option<Vec<usize>>,
    pub selected: Option<usize>,
    pub backtracks: u32,
    pub steps: u64,
    pub node_count: usize,
    pub abort_reason: Option<String>,
    pub dialog_tail: Vec<ApiDialogRecord>,
}

impl ApiSession {
    pub fn from_session(s: &Session) -> Self {
        let vote_score = |k: usize| s.vote.as_ref().and_then(|v| v.scores.get(k).copied());
        let records = s.dialog.records();
        ApiSession {
            id: s.id.clone(),
            query: s.query.clone(),
            status: s.status,
            stage: s.stage,
            config: s.config.clone(),
            conception: s.conception.as_ref().map(|c| ApiConception {
                attributes: c.attributes.clone(),
                summary: c.attributes.summary(),
                rationale: c.rationale.clone(),
            }),
            candidates: s
                .candidates
                .iter()
                .enumerate()
                .map(|(k, c)| {
                    let r = c.report.as_ref();
                    CandidateSummary {
                        index: k,
                        clean: c.is_clean(),
                        error_count: r.map_or(0, |r| r.errors.len()),
                        tser_flag: r.is_some_and(|r| r.tser_flag),
                        irer_flag: r.is_some_and(|r| r.irer_flag),
                        sicr_complete: r.is_some_and(|r| r.sicr_complete),
                        aaa: r.and_then(|r| r.aaa),
                        vote_score: vote_score(k),
                        repairs: c.repairs,
                    }
                })
                .collect(),
            ranking: s.vote.as_ref().map(|v| v.ranking.clone()),
            selected: s.selected,
            backtracks: s.backtracks,
            steps: s.steps,
            node_count: s.tree.len(),
            abort_reason: s.abort_reason.clone(),
            dialog_tail: records[records.len().saturating_sub(DIALOG_TAIL)..]
                .iter()
                .map(|r| ApiDialogRecord {
                    role: r.role,
                    text: r.text.clone(),
                    timestamp: r.timestamp,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiNode {
    pub id: usize,
    pub stage: Stage,
    pub context: String,
    pub score_text: Option<String>,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub created_at: u64,
    pub edge_kind: EdgeKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiEdge {
    pub from: usize,
    pub to: usize,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiTree {
    pub nodes: Vec<ApiNode>,
    pub edges: Vec<ApiEdge>,
}

impl ApiTree {
    pub fn from_session(s: &Session) -> Self {
        let nodes: Vec<ApiNode> = s
            .tree
            .nodes()
            .iter()
            .map(|n| ApiNode {
                id: n.id,
                stage: n.stage,
                context: n.context.clone(),
                score_text: n.score_text.clone(),
                parent: n.parent,
                children: n.children.clone(),
                created_at: n.created_at,
                edge_kind: n.edge_kind,
            })
            .collect();
        let edges = nodes
            .iter()
            .filter_map(|n| {
                n.parent.map(|p| ApiEdge {
                    from: p,
                    to: n.id,
                    kind: n.edge_kind,
                })
            })
            .collect();
        ApiTree { nodes, edges }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiCandidate {
    pub index: usize,
    pub abc: String,
    pub report: Option<EvalReport>,
    pub vote_score: Option<f64>,
}

impl ApiCandidate {
    pub fn from_session(s: &Session, k: usize) -> Option<Self> {
        let c = s.candidates.get(k)?;
        Some(ApiCandidate {
            index: k,
            abc: c.abc(),
            report: c.report.clone(),
            vote_score: s.vote.as_ref().and_then(|v| v.scores.get(k).copied()),
        })
    }
}

/// One sounding event for a piano-roll view. Times are in quarter notes from
/// the start of the voice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoteEvent {
    pub voice: usize,
    pub measure: usize,
    pub start: f64,
    pub duration: f64,
    pub midi: Vec<i32>,
    pub tied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiNotes {
    pub index: usize,
    pub notes: Vec<NoteEvent>,
}

pub fn note_events(score: &AbcScore) -> Vec<NoteEvent> {
    let quarters = score.headers.unit_or_default() * Rational::from_integer(4);
    let as_f64 = |r: Rational| *r.numer() as f64 / *r.denom() as f64;
    let mut out = Vec::new();
    for (v, voice) in score.voices.iter().enumerate() {
        let mut t = Rational::from_integer(0);
        for (m, measure) in voice.measures.iter().enumerate() {
            for e in &measure.events {
                let length = e.duration * quarters;
                if e.kind != EventKind::Rest {
                    out.push(NoteEvent {
                        voice: v,
                        measure: m,
                        start: as_f64(t),
                        duration: as_f64(length),
                        midi: e.pitches.iter().map(|p| p.midi()).collect(),
                        tied: e.tied,
                    });
                }
                t += length;
            }
        }
    }
    out
}

impl ApiNotes {
    pub fn from_session(s: &Session, k: usize) -> Option<Self> {
        let c = s.candidates.get(k)?;
        Some(ApiNotes {
            index: k,
            notes: note_events(&c.score),
        })
    }
}

/// The selected score, available once the session is done.
pub fn final_score(s: &Session) -> Option<String> {
    (s.status == SessionStatus::Done)
        .then(|| s.selected_abc())
        .flatten()
}

#[cfg(test)]
mod tests {
    use super::*;
    use bytecomposer_core::abc::parse_abc;
    use bytecomposer_core::pipeline::Pipeline;

    #[test]
    fn notes_follow_the_unit_length() {
        let s = parse_abc("X:1\nM:2/4\nL:1/8\nK:C\nC2 z [EG] | c4 |]").unwrap();
        let notes = note_events(&s);
        assert_eq!(notes.len(), 3);
        assert_eq!((notes[0].start, notes[0].duration), (0.0, 1.0));
        assert_eq!((notes[1].start, notes[1].midi.clone()), (1.5, vec![64, 67]));
        assert_eq!((notes[2].start, notes[2].duration, notes[2].measure), (2.0, 2.0, 1));
    }

    #[test]
    fn session_view_tracks_the_pipeline() {
        let p = Pipeline::mock();
        let mut s = p.start("v", "cheerful dance", PipelineConfig::default()).unwrap();
        let view = ApiSession::from_session(&s);
        assert_eq!(view.status, SessionStatus::AwaitingUser);
        assert_eq!(view.stage, Stage::ConceptionAnalysis);
        assert!(view.conception.is_some() && view.candidates.is_empty());
        assert_eq!(final_score(&s), None);
        while !s.is_closed() {
            p.step(&mut s, None).unwrap();
        }
        let view = ApiSession::from_session(&s);
        assert_eq!(view.candidates.len(), 4);
        assert!(view.candidates.iter().all(|c| c.vote_score.is_some()));
        assert_eq!(final_score(&s), s.selected_abc());
        let tree = ApiTree::from_session(&s);
        assert_eq!(tree.edges.len(), tree.nodes.len() - 1);
        assert_eq!(ApiCandidate::from_session(&s, 9), None);
    }
}
