//! The four-stage composition workflow as a resumable state machine.
//!
//! A [`Session`] holds only data, so it can be persisted between steps. The
//! [`Pipeline`] holds the collaborators (expert, generator, range table,
//! voter weights) and advances sessions one stage at a time.

use std::fmt::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abc::{serialize_abc, AbcScore};
use crate::attributes::MusicalAttributes;
use crate::eval::{evaluate, EvalReport, InstrumentRangeTable};
use crate::expert::{Conception, Expert, RouteAction, RouteContext};
use crate::generator::{
    ConstraintGenerator, GenerationError, GenerationRequest, MelodyGenerator, RegenerationRequest,
};
use crate::memory::{DialogLog, EdgeKind, MemoryTree, Role, SessionStore, Stage, StoreError, StoredSession};
use crate::voter::{vote_with, VoteResult, VoterWeights};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub candidate_count: usize,
    pub repair_budget: u32,
    pub backtrack_budget: u32,
    pub measures: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            candidate_count: 4,
            repair_budget: 3,
            backtrack_budget: 2,
            measures: 8,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.candidate_count < 2 {
            return Err(PipelineError::InvalidConfig("candidate_count must be at least 2".into()));
        }
        if self.candidate_count > 64 {
            return Err(PipelineError::InvalidConfig("candidate_count must be at most 64".into()));
        }
        if self.measures < 2 || !self.measures.is_multiple_of(2) || self.measures > 256 {
            return Err(PipelineError::InvalidConfig("measures must be even, between 2 and 256".into()));
        }
        if self.repair_budget > 32 || self.backtrack_budget > 32 {
            return Err(PipelineError::InvalidConfig("budgets must be at most 32".into()));
        }
        Ok(())
    }

    /// Upper bound on evaluate/repair iterations in one session.
    pub fn step_bound(&self) -> u64 {
        self.candidate_count as u64 * (self.repair_budget as u64 + 1) * (self.backtrack_budget as u64 + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SessionStatus {
    Running,
    AwaitingUser,
    Done,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("query is empty")]
    EmptyQuery,
    #[error("invalid command: {0}")]
    InvalidCommand(String),
    #[error("session is {0:?}")]
    SessionClosed(SessionStatus),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub score: AbcScore,
    pub report: Option<EvalReport>,
    /// Newest memory node for this candidate.
    pub node: usize,
    pub seed: u64,
    pub repairs: u32,
    pub stalled: bool,
}

impl Candidate {
    pub fn abc(&self) -> String {
        serialize_abc(&self.score)
    }

    pub fn is_clean(&self) -> bool {
        self.report.as_ref().is_some_and(EvalReport::is_clean)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub query: String,
    pub config: PipelineConfig,
    pub tree: MemoryTree,
    pub dialog: DialogLog,
    pub stage: Stage,
    pub status: SessionStatus,
    pub conception: Option<Conception>,
    pub conception_node: Option<usize>,
    pub candidates: Vec<Candidate>,
    pub vote: Option<VoteResult>,
    pub selected: Option<usize>,
    pub backtracks: u32,
    /// Evaluate/repair iterations so far.
    pub steps: u64,
    pub abort_reason: Option<String>,
}

impl Session {
    pub fn new(id: impl Into<String>, query: impl Into<String>, config: PipelineConfig) -> Self {
        let query = query.into();
        Session {
            id: id.into(),
            tree: MemoryTree::new(format!("query: {query}")),
            query,
            config,
            dialog: DialogLog::new(),
            stage: Stage::SessionStart,
            status: SessionStatus::Running,
            conception: None,
            conception_node: None,
            candidates: Vec::new(),
            vote: None,
            selected: None,
            backtracks: 0,
            steps: 0,
            abort_reason: None,
        }
    }

    pub fn selected_abc(&self) -> Option<String> {
        self.selected
            .and_then(|k| self.candidates.get(k))
            .map(Candidate::abc)
    }

    /// Candidate that revisions apply to: the vote winner once there is one.
    pub fn focus(&self) -> usize {
        self.selected
            .or_else(|| self.vote.as_ref().map(VoteResult::winner))
            .unwrap_or(0)
    }

    pub fn is_closed(&self) -> bool {
        matches!(self.status, SessionStatus::Done | SessionStatus::Aborted)
    }
}

/// Everything in a [`Session`] except the tree and dialog, which the store
/// keeps in their own documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub query: String,
    pub config: PipelineConfig,
    pub stage: Stage,
    pub status: SessionStatus,
    pub conception: Option<Conception>,
    pub conception_node: Option<usize>,
    pub candidates: Vec<Candidate>,
    pub vote: Option<VoteResult>,
    pub selected: Option<usize>,
    pub backtracks: u32,
    pub steps: u64,
    pub abort_reason: Option<String>,
}

pub fn save_session(store: &SessionStore, s: &Session) -> Result<(), StoreError> {
    let state = SessionState {
        query: s.query.clone(),
        config: s.config.clone(),
        stage: s.stage,
        status: s.status,
        conception: s.conception.clone(),
        conception_node: s.conception_node,
        candidates: s.candidates.clone(),
        vote: s.vote.clone(),
        selected: s.selected,
        backtracks: s.backtracks,
        steps: s.steps,
        abort_reason: s.abort_reason.clone(),
    };
    store.save(
        &s.id,
        &StoredSession {
            tree: s.tree.clone(),
            dialog: s.dialog.clone(),
            state,
        },
    )
}

pub fn load_session(store: &SessionStore, id: &str) -> Result<Session, StoreError> {
    let StoredSession { tree, dialog, state } = store.load::<SessionState>(id)?;
    let corrupt = |reason: &str| StoreError::CorruptSession {
        id: id.to_string(),
        reason: reason.to_string(),
    };
    if state.candidates.iter().any(|c| c.node >= tree.len()) {
        return Err(corrupt("candidate refers to a missing node"));
    }
    if state.selected.is_some_and(|k| k >= state.candidates.len()) {
        return Err(corrupt("selection refers to a missing candidate"));
    }
    Ok(Session {
        id: id.to_string(),
        query: state.query,
        config: state.config,
        tree,
        dialog,
        stage: state.stage,
        status: state.status,
        conception: state.conception,
        conception_node: state.conception_node,
        candidates: state.candidates,
        vote: state.vote,
        selected: state.selected,
        backtracks: state.backtracks,
        steps: state.steps,
        abort_reason: state.abort_reason,
    })
}

/// Parsed user message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    Continue,
    Select(usize),
    Revise { section: usize, text: String },
    /// Free text, only meaningful while the conception is still open.
    Refine(String),
}

impl Command {
    pub fn parse(text: &str) -> Result<Command, PipelineError> {
        let t = text.trim();
        let lower = t.to_ascii_lowercase();
        let words: Vec<&str> = t.split_whitespace().collect();
        if lower == "continue" || lower.is_empty() {
            return Ok(Command::Continue);
        }
        if lower.starts_with("select") {
            return match words.as_slice() {
                [_, k] => k
                    .parse()
                    .map(Command::Select)
                    .map_err(|_| PipelineError::InvalidCommand(format!("`{k}` is not a candidate index"))),
                _ => Err(PipelineError::InvalidCommand("usage: select <k>".into())),
            };
        }
        if lower.starts_with("revise") {
            return match words.as_slice() {
                [_, s, i, rest @ ..] if s.eq_ignore_ascii_case("section") && !rest.is_empty() => {
                    let section = i.parse().map_err(|_| {
                        PipelineError::InvalidCommand(format!("`{i}` is not a section index"))
                    })?;
                    Ok(Command::Revise {
                        section,
                        text: rest.join(" "),
                    })
                }
                _ => Err(PipelineError::InvalidCommand("usage: revise section <i> <request>".into())),
            };
        }
        Ok(Command::Refine(t.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct Pipeline {
    pub expert: Expert,
    pub generator: ConstraintGenerator,
    pub table: InstrumentRangeTable,
    pub weights: VoterWeights,
}

fn excerpt(text: &str, max: usize) -> String {
    let one_line = text.split_whitespace().collect::<Vec<_>>().join(" ");
    if one_line.chars().count() <= max {
        one_line
    } else {
        format!("{}...", one_line.chars().take(max).collect::<String>())
    }
}

impl Pipeline {
    pub fn new(expert: Expert, table: InstrumentRangeTable) -> Self {
        Pipeline {
            expert,
            generator: ConstraintGenerator::new(table.clone()),
            table,
            weights: VoterWeights::default(),
        }
    }

    pub fn mock() -> Self {
        Pipeline::new(Expert::mock(), InstrumentRangeTable::default())
    }

    /// Non-interactive run to completion.
    pub fn run(&self, query: &str, config: PipelineConfig) -> Result<Session, PipelineError> {
        let mut s = self.start(uuid::Uuid::new_v4().to_string(), query, config)?;
        while !s.is_closed() {
            self.advance(&mut s);
        }
        Ok(s)
    }

    /// Opens a session and runs conception; the session then waits for the user.
    pub fn start(&self, id: impl Into<String>, query: &str, config: PipelineConfig) -> Result<Session, PipelineError> {
        config.validate()?;
        if query.trim().is_empty() {
            return Err(PipelineError::EmptyQuery);
        }
        let mut s = Session::new(id, query.trim(), config);
        let id = s.id.clone();
        s.dialog.push(&id, Role::User, query.trim());
        self.advance(&mut s);
        Ok(s)
    }

    /// Handles one user message. `None` means "continue".
    pub fn step(&self, s: &mut Session, message: Option<&str>) -> Result<(), PipelineError> {
        if s.is_closed() {
            return Err(PipelineError::SessionClosed(s.status));
        }
        let text = message.unwrap_or("continue");
        let id = s.id.clone();
        s.dialog.push(&id, Role::User, text);
        let outcome = Command::parse(text).and_then(|cmd| self.apply(s, cmd));
        if let Err(e) = &outcome {
            s.dialog.push(&id, Role::Agent, e.to_string());
        }
        outcome
    }

    fn apply(&self, s: &mut Session, cmd: Command) -> Result<(), PipelineError> {
        match cmd {
            Command::Continue => {
                self.advance(s);
                Ok(())
            }
            Command::Select(k) => {
                if k >= s.candidates.len() {
                    return Err(PipelineError::InvalidCommand(format!(
                        "no candidate {k} (have {})",
                        s.candidates.len()
                    )));
                }
                self.finish_with(s, k, "selected by the user");
                Ok(())
            }
            Command::Revise { section, text } => self.revise(s, section, &text),
            Command::Refine(text) => {
                if s.stage != Stage::ConceptionAnalysis {
                    return Err(PipelineError::InvalidCommand(format!(
                        "unrecognized command `{text}` (use continue, select <k> or revise section <i> <request>)"
                    )));
                }
                s.query = format!("{} {}", s.query, text);
                self.conceive(s, EdgeKind::Advance, None);
                Ok(())
            }
        }
    }

    /// Runs the next stage.
    pub fn advance(&self, s: &mut Session) {
        if s.is_closed() {
            return;
        }
        s.status = SessionStatus::Running;
        match s.stage {
            Stage::SessionStart => self.conceive(s, EdgeKind::Advance, None),
            Stage::ConceptionAnalysis => self.draft(s),
            Stage::DraftComposition => self.self_evaluate(s),
            Stage::SelfEvaluation => self.select(s),
            Stage::AestheticSelection => {
                let k = s.focus();
                self.finish_with(s, k, "vote winner confirmed");
            }
        }
        if s.status == SessionStatus::Running {
            s.status = SessionStatus::AwaitingUser;
        }
    }

    fn abort(&self, s: &mut Session, reason: String) {
        let id = s.id.clone();
        s.dialog.push(&id, Role::Agent, format!("aborted: {reason}"));
        s.abort_reason = Some(reason);
        s.status = SessionStatus::Aborted;
        s.selected = None;
    }

    fn conceive(&self, s: &mut Session, edge: EdgeKind, backtrack_reason: Option<&str>) {
        let (parent, edge) = match (edge, s.conception_node) {
            (EdgeKind::Backtrack, _) => (
                s.tree.backtrack_point(Stage::ConceptionAnalysis).unwrap_or(0),
                EdgeKind::Backtrack,
            ),
            (_, Some(n)) => (n, EdgeKind::Advance),
            (_, None) => (0, EdgeKind::Advance),
        };
        match self.expert.conceive(&s.query, s.backtracks) {
            Ok(c) => {
                let mut context = format!(
                    "attributes: {}\nrationale: {}",
                    c.attributes.to_kv().trim_end().replace('\n', "; "),
                    c.rationale
                );
                if let Some(reason) = backtrack_reason {
                    context = format!("backtrack: {reason}\n{context}");
                }
                let node = s
                    .tree
                    .add_node(parent, Stage::ConceptionAnalysis, context, None, edge)
                    .expect("parent exists");
                let id = s.id.clone();
                s.dialog.push(&id, Role::Agent, format!("Plan: {}. {}", c.attributes.summary(), c.rationale));
                s.conception = Some(c);
                s.conception_node = Some(node);
                s.candidates.clear();
                s.vote = None;
                s.stage = Stage::ConceptionAnalysis;
            }
            Err(e) => self.abort(s, format!("conception failed: {e}")),
        }
    }

    fn attributes(&self, s: &Session) -> MusicalAttributes {
        let mut a = s.conception.as_ref().map(|c| c.attributes.clone()).unwrap_or_default();
        a.section_count = (s.config.measures / 2) as u32;
        a
    }

    fn draft(&self, s: &mut Session) {
        let attrs = self.attributes(s);
        let parent = s.conception_node.unwrap_or(0);
        s.candidates.clear();
        s.vote = None;
        let mut failures = Vec::new();
        for k in 0..s.config.candidate_count {
            let seed = s.config.seed.wrapping_add(k as u64);
            let req = GenerationRequest {
                attributes: attrs.clone(),
                seed,
                measures: Some(s.config.measures),
            };
            match self.generator.generate(&req) {
                Ok(score) => {
                    let text = serialize_abc(&score);
                    let node = s
                        .tree
                        .add_node(
                            parent,
                            Stage::DraftComposition,
                            format!("candidate {k}, seed {seed}"),
                            Some(text),
                            EdgeKind::Advance,
                        )
                        .expect("parent exists");
                    s.candidates.push(Candidate {
                        score,
                        report: None,
                        node,
                        seed,
                        repairs: 0,
                        stalled: false,
                    });
                }
                Err(e) => failures.push(format!("candidate {k}: {e}")),
            }
        }
        s.stage = Stage::DraftComposition;
        let id = s.id.clone();
        if s.candidates.is_empty() {
            let reason = failures.join("; ");
            self.backtrack_or_abort(s, format!("no draft could be generated ({reason})"));
            return;
        }
        s.dialog.push(&id, Role::Agent, format!("Drafted {} candidates.", s.candidates.len()));
    }

    fn backtrack_or_abort(&self, s: &mut Session, reason: String) {
        if s.backtracks < s.config.backtrack_budget {
            s.backtracks += 1;
            let id = s.id.clone();
            s.dialog.push(&id, Role::Agent, format!("Backtracking to conception: {reason}"));
            self.conceive(s, EdgeKind::Backtrack, Some(&reason));
            if s.status != SessionStatus::Aborted {
                self.draft(s);
            }
        } else {
            self.abort(s, format!("{reason}; backtrack budget exhausted"));
        }
    }

    fn evaluate_candidate(&self, s: &mut Session, k: usize, attrs: &MusicalAttributes) {
        s.steps += 1;
        let c = &s.candidates[k];
        let report = match evaluate(&c.score, &self.table, Some(attrs)) {
            Ok(r) => r,
            Err(e) => {
                let parent = c.node;
                let node = s
                    .tree
                    .add_node(parent, Stage::SelfEvaluation, format!("candidate {k}: {e}"), None, EdgeKind::Advance)
                    .expect("parent exists");
                s.candidates[k].node = node;
                s.candidates[k].stalled = true;
                return;
            }
        };
        let critique = self
            .expert
            .critique(&c.score, &report)
            .unwrap_or_else(|e| format!("no critique: {e}"));
        let node = s
            .tree
            .add_node(
                c.node,
                Stage::SelfEvaluation,
                format!("candidate {k}: {}\n{}", report.summary(), critique),
                None,
                EdgeKind::Advance,
            )
            .expect("parent exists");
        let c = &mut s.candidates[k];
        c.node = node;
        c.report = Some(report);
        c.repairs = 0;
        c.stalled = false;

        loop {
            let c = &s.candidates[k];
            let Some(report) = c.report.clone() else { break };
            let decision = self.expert.route(&RouteContext {
                stage: Stage::SelfEvaluation,
                report: Some(&report),
                repair_budget_left: s.config.repair_budget - c.repairs,
                backtracks_taken: s.backtracks,
                backtrack_budget: s.config.backtrack_budget,
            });
            if decision.action != RouteAction::Retry {
                break;
            }
            s.steps += 1;
            let repair_seed = c.seed ^ ((c.repairs as u64 + 1) << 40);
            let outcome = self.generator.repair(&c.score, &report, repair_seed);
            let c = &mut s.candidates[k];
            c.repairs += 1;
            match outcome {
                Ok((score, after)) => {
                    let context = format!("candidate {k} repair {}: {}\n{}", c.repairs, after.summary(), decision.reason);
                    let node = s
                        .tree
                        .add_node(
                            s.candidates[k].node,
                            Stage::SelfEvaluation,
                            context,
                            Some(serialize_abc(&score)),
                            EdgeKind::Retry,
                        )
                        .expect("parent exists");
                    let c = &mut s.candidates[k];
                    c.score = score;
                    c.report = Some(after);
                    c.node = node;
                }
                Err(e) => {
                    let context = format!("candidate {k} repair {}: {e}", c.repairs);
                    c.stalled = true;
                    let node = s
                        .tree
                        .add_node(c.node, Stage::SelfEvaluation, context, None, EdgeKind::Retry)
                        .expect("parent exists");
                    s.candidates[k].node = node;
                    break;
                }
            }
        }
    }

    fn self_evaluate(&self, s: &mut Session) {
        loop {
            let attrs = self.attributes(s);
            for k in 0..s.candidates.len() {
                self.evaluate_candidate(s, k, &attrs);
            }
            s.stage = Stage::SelfEvaluation;
            let clean = s.candidates.iter().filter(|c| c.is_clean()).count();
            let id = s.id.clone();
            if clean > 0 {
                s.dialog.push(
                    &id,
                    Role::Agent,
                    format!("{clean} of {} candidates are free of objective errors.", s.candidates.len()),
                );
                return;
            }
            let worst = s.candidates.iter().filter_map(|c| c.report.as_ref()).map(|r| r.errors.len()).min().unwrap_or(0);
            let decision = self.expert.route(&RouteContext {
                stage: Stage::SelfEvaluation,
                report: s.candidates.first().and_then(|c| c.report.as_ref()),
                repair_budget_left: 0,
                backtracks_taken: s.backtracks,
                backtrack_budget: s.config.backtrack_budget,
            });
            if decision.action == RouteAction::Backtrack {
                s.backtracks += 1;
                s.dialog.push(&id, Role::Agent, format!("Backtracking: {}", decision.reason));
                self.conceive(s, EdgeKind::Backtrack, Some(&decision.reason));
                if s.status == SessionStatus::Aborted {
                    return;
                }
                self.draft(s);
                if s.status == SessionStatus::Aborted {
                    return;
                }
                continue;
            }
            // budgets spent: keep the best effort and say so
            s.dialog.push(
                &id,
                Role::Agent,
                format!("No candidate is error-free after all budgets; the best has {worst} residual errors."),
            );
            return;
        }
    }

    fn select(&self, s: &mut Session) {
        let id = s.id.clone();
        if s.candidates.len() == 1 {
            let node = s
                .tree
                .add_node(s.candidates[0].node, Stage::AestheticSelection, "single candidate", None, EdgeKind::Advance)
                .expect("parent exists");
            s.candidates[0].node = node;
            s.stage = Stage::AestheticSelection;
            return;
        }
        let pairs: Vec<(AbcScore, EvalReport)> = s
            .candidates
            .iter()
            .map(|c| (c.score.clone(), c.report.clone().unwrap_or_else(|| placeholder_report(&c.score))))
            .collect();
        match vote_with(&pairs, &self.weights) {
            Ok(v) => {
                let w = v.winner();
                let ranking = v
                    .ranking
                    .iter()
                    .map(|&i| format!("{i} ({:.3}, {} errors)", v.scores[i], v.features[i].error_count))
                    .collect::<Vec<_>>()
                    .join(" > ");
                let node = s
                    .tree
                    .add_node(
                        s.candidates[w].node,
                        Stage::AestheticSelection,
                        format!("vote winner {w}; ranking {ranking}"),
                        Some(s.candidates[w].abc()),
                        EdgeKind::Advance,
                    )
                    .expect("parent exists");
                s.candidates[w].node = node;
                s.dialog.push(&id, Role::Agent, format!("Vote ranking: {ranking}"));
                s.vote = Some(v);
                s.stage = Stage::AestheticSelection;
            }
            Err(e) => self.abort(s, format!("vote failed: {e}")),
        }
    }

    fn finish_with(&self, s: &mut Session, k: usize, why: &str) {
        if s.stage != Stage::AestheticSelection || s.focus() != k {
            let node = s
                .tree
                .add_node(
                    s.candidates[k].node,
                    Stage::AestheticSelection,
                    format!("candidate {k} {why}"),
                    Some(s.candidates[k].abc()),
                    EdgeKind::Advance,
                )
                .expect("parent exists");
            s.candidates[k].node = node;
        }
        s.selected = Some(k);
        s.stage = Stage::AestheticSelection;
        s.status = SessionStatus::Done;
        let id = s.id.clone();
        s.dialog.push(&id, Role::Agent, format!("Selected candidate {k} ({why})."));
    }

    fn revise(&self, s: &mut Session, section: usize, text: &str) -> Result<(), PipelineError> {
        if s.candidates.is_empty() {
            return Err(PipelineError::InvalidCommand("there are no drafts to revise yet".into()));
        }
        let k = s.focus();
        let c = &s.candidates[k];
        let sections = c.score.voices.first().map_or(0, |v| v.measures.len() / 2);
        if section >= sections {
            return Err(PipelineError::InvalidCommand(format!(
                "no section {section} (candidate {k} has {sections})"
            )));
        }
        let conception = self
            .expert
            .conceive(text, 0)
            .map_err(|e| PipelineError::InvalidCommand(format!("could not interpret `{text}`: {e}")))?;
        let req = RegenerationRequest {
            score: c.score.clone(),
            section_index: section,
            attributes: conception.attributes.clone(),
            seed: c.seed ^ ((s.tree.len() as u64) << 20),
            voice: 0,
        };
        let score = self.generator.regenerate_section(&req).map_err(|e: GenerationError| {
            PipelineError::InvalidCommand(format!("could not revise section {section}: {e}"))
        })?;
        let parent = c.node;
        let edge = if s.tree.get(parent).map(|n| n.stage) > Some(Stage::DraftComposition) {
            EdgeKind::Backtrack
        } else {
            EdgeKind::Advance
        };
        let node = s
            .tree
            .add_node(
                parent,
                Stage::DraftComposition,
                format!(
                    "candidate {k} section {section} revised: {text}\nrationale: {}",
                    conception.rationale
                ),
                Some(serialize_abc(&score)),
                edge,
            )
            .expect("parent exists");
        let c = &mut s.candidates[k];
        c.score = score;
        c.node = node;
        c.report = None;
        s.vote = None;
        s.selected = None;
        s.stage = Stage::DraftComposition;
        s.status = SessionStatus::AwaitingUser;
        let id = s.id.clone();
        s.dialog.push(&id, Role::Agent, format!("Rewrote section {section} of candidate {k}."));
        Ok(())
    }
}

fn placeholder_report(score: &AbcScore) -> EvalReport {
    evaluate(score, &InstrumentRangeTable::default(), None).unwrap_or_else(|_| EvalReport {
        errors: Vec::new(),
        warnings: vec!["not evaluated".into()],
        tser_flag: false,
        irer_flag: false,
        sicr_complete: false,
        sicr_fraction: 0.0,
        aaa: None,
        extracted: MusicalAttributes::default(),
        target: None,
    })
}

/// Readable account of the session: one entry per memory node in creation
/// order, then the outcome.
pub fn transcript(s: &Session) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Session {}: \"{}\"", s.id, s.query);
    for n in s.tree.nodes() {
        if n.edge_kind == EdgeKind::Backtrack {
            let reason = n
                .context
                .lines()
                .find_map(|l| l.strip_prefix("backtrack: "))
                .unwrap_or("revisiting an earlier stage");
            let _ = writeln!(out, "BACKTRACK to node {}: {reason}", n.parent.unwrap_or(0));
        }
        let parent = n.parent.map_or(String::new(), |p| format!(" <- #{p}"));
        let _ = writeln!(out, "#{} {} [{:?}]{}: {}", n.id, n.stage, n.edge_kind, parent, excerpt(&n.context, 160));
    }
    match s.status {
        SessionStatus::Done => {
            let k = s.selected.unwrap_or(0);
            let _ = write!(out, "SELECTED candidate {k}");
            if let Some(v) = &s.vote {
                let _ = write!(out, " (vote score {:.3})", v.scores[k]);
                let scores = v
                    .ranking
                    .iter()
                    .map(|&i| format!("{i}: {:.3}", v.scores[i]))
                    .collect::<Vec<_>>()
                    .join(", ");
                let _ = write!(out, "; vote scores {scores}");
            }
            let _ = writeln!(out);
            if let Some(r) = s.candidates.get(k).and_then(|c| c.report.as_ref()) {
                if !r.is_clean() {
                    let _ = writeln!(out, "RESIDUAL ERRORS: {}", r.errors.len());
                    for e in &r.errors {
                        let _ = writeln!(out, "  {e}");
                    }
                }
            }
        }
        SessionStatus::Aborted => {
            let _ = writeln!(out, "ABORTED: {}", s.abort_reason.as_deref().unwrap_or("unknown reason"));
        }
        _ => {
            let _ = writeln!(out, "IN PROGRESS at {}", s.stage);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::expert::ScriptedBackend;
    use crate::memory::SearchOrder;

    fn cfg(seed: u64) -> PipelineConfig {
        PipelineConfig {
            seed,
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn run_is_deterministic() {
        let p = Pipeline::mock();
        let a = p.run("a cheerful dance", cfg(3)).unwrap();
        let b = p.run("a cheerful dance", cfg(3)).unwrap();
        assert_eq!(a.status, SessionStatus::Done);
        assert_eq!(a.selected_abc(), b.selected_abc());
        assert!(a.tree.same_shape(&b.tree));
        assert!(a.steps <= a.config.step_bound());
        a.tree.check_invariants().unwrap();
        let winner = &a.candidates[a.selected.unwrap()];
        assert!(winner.is_clean());
    }

    #[test]
    fn candidate_count_shapes_tree() {
        let p = Pipeline::mock();
        let mut c = cfg(1);
        c.candidate_count = 2;
        let s = p.run("calm evening", c).unwrap();
        let drafts = s.tree.search(|n| n.stage == Stage::DraftComposition, SearchOrder::Bfs);
        assert_eq!(drafts.len(), 2);
        assert_eq!(s.candidates.len(), 2);
    }

    #[test]
    fn failing_backend_aborts() {
        let p = Pipeline::new(
            Expert::new(Arc::new(ScriptedBackend::new(vec![Err("offline".into())]))),
            InstrumentRangeTable::default(),
        );
        let s = p.run("anything", cfg(0)).unwrap();
        assert_eq!(s.status, SessionStatus::Aborted);
        assert_eq!(s.tree.len(), 1);
        assert!(s.abort_reason.as_deref().unwrap().contains("offline"));
        let t = transcript(&s);
        assert!(t.trim_end().lines().last().unwrap().starts_with("ABORTED: "));
    }

    #[test]
    fn interactive_walk() {
        let p = Pipeline::mock();
        let mut s = p.start("s1", "a sad slow lullaby", cfg(5)).unwrap();
        assert_eq!((s.stage, s.status), (Stage::ConceptionAnalysis, SessionStatus::AwaitingUser));
        p.step(&mut s, Some("continue")).unwrap();
        assert_eq!(s.stage, Stage::DraftComposition);
        p.step(&mut s, Some("continue")).unwrap();
        assert_eq!(s.stage, Stage::SelfEvaluation);
        p.step(&mut s, Some("continue")).unwrap();
        assert_eq!(s.stage, Stage::AestheticSelection);
        assert!(s.selected.is_none());
        p.step(&mut s, Some("select 2")).unwrap();
        assert_eq!((s.selected, s.status), (Some(2), SessionStatus::Done));
        assert_eq!(
            p.step(&mut s, Some("continue")),
            Err(PipelineError::SessionClosed(SessionStatus::Done))
        );
        s.tree.check_invariants().unwrap();
        let t = transcript(&s);
        let order: Vec<usize> = ["SessionStart", "ConceptionAnalysis", "DraftComposition", "SelfEvaluation", "AestheticSelection"]
            .iter()
            .map(|n| t.find(n).unwrap())
            .collect();
        assert!(order.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn invalid_command_only_logs() {
        let p = Pipeline::mock();
        let mut s = p.start("s1", "a march", cfg(5)).unwrap();
        p.step(&mut s, None).unwrap();
        let before = s.clone();
        let err = p.step(&mut s, Some("dance wildly")).unwrap_err();
        assert!(matches!(err, PipelineError::InvalidCommand(_)));
        assert_eq!(s.dialog.len(), before.dialog.len() + 2);
        let mut restored = s.clone();
        restored.dialog = before.dialog.clone();
        assert_eq!(restored, before);
        assert!(p.step(&mut s, Some("select 9")).is_err());
        assert!(p.step(&mut s, Some("revise section x y")).is_err());
    }

    #[test]
    fn revise_changes_one_section() {
        let p = Pipeline::mock();
        let mut s = p.start("s1", "a cheerful dance", cfg(2)).unwrap();
        for _ in 0..3 {
            p.step(&mut s, None).unwrap();
        }
        let k = s.focus();
        let before = s.candidates[k].score.clone();
        let nodes = s.tree.len();
        p.step(&mut s, Some("revise section 1 make it slower")).unwrap();
        let after = &s.candidates[k].score;
        for m in 0..before.voices[0].measures.len() {
            let same = after.voices[0].measures[m] == before.voices[0].measures[m];
            assert_eq!(same, !(2..4).contains(&m), "measure {m}");
        }
        assert_eq!(s.tree.len(), nodes + 1);
        assert_eq!(s.tree.last().stage, Stage::DraftComposition);
        s.tree.check_invariants().unwrap();
        assert!(p.step(&mut s, Some("revise section 9 anything")).is_err());
    }

    #[test]
    fn refine_reconceives_before_drafting() {
        let p = Pipeline::mock();
        let mut s = p.start("s1", "a melody", cfg(0)).unwrap();
        p.step(&mut s, Some("make it sad")).unwrap();
        assert_eq!(s.conception.as_ref().unwrap().attributes.key.to_string(), "Am");
        assert_eq!(s.tree.len(), 3);
        s.tree.check_invariants().unwrap();
    }

    #[test]
    fn infeasible_plan_backtracks_then_recovers() {
        let bad = MusicalAttributes {
            meter: "2/4".parse().unwrap(),
            note_density: 30.0,
            ..Default::default()
        };
        let reply = |a: &MusicalAttributes| format!("```\n{}```\nrationale: r", a.to_kv());
        let backend = ScriptedBackend::new(vec![Ok(reply(&bad)), Ok(reply(&MusicalAttributes::default()))]);
        let p = Pipeline::new(Expert::new(Arc::new(backend)), InstrumentRangeTable::default());
        let s = p.run("x", cfg(0)).unwrap();
        assert_eq!(s.status, SessionStatus::Done);
        assert_eq!(s.backtracks, 1);
        let back = s.tree.search(|n| n.edge_kind == EdgeKind::Backtrack, SearchOrder::Dfs);
        assert_eq!(back.len(), 1);
        assert_eq!(s.tree.get(back[0]).unwrap().stage, Stage::ConceptionAnalysis);
        s.tree.check_invariants().unwrap();
        let t = transcript(&s);
        assert!(t.contains("BACKTRACK to node 1: no draft could be generated"), "{t}");
    }

    #[test]
    fn exhausted_backtracks_abort() {
        let table = crate::expert::KeywordTable::parse("crowded meter=2/4 density=30").unwrap();
        let p = Pipeline::new(
            Expert::new(Arc::new(crate::expert::MockBackend::new(table))),
            InstrumentRangeTable::default(),
        );
        let s = p.run("crowded", cfg(0)).unwrap();
        assert_eq!(s.status, SessionStatus::Aborted);
        assert_eq!(s.backtracks, 2);
        assert_eq!(s.tree.search(|n| n.stage == Stage::ConceptionAnalysis, SearchOrder::Bfs).len(), 3);
        assert!(transcript(&s).trim_end().lines().last().unwrap().contains("backtrack budget exhausted"));
    }

    #[test]
    fn commands_parse() {
        assert_eq!(Command::parse(" Continue "), Ok(Command::Continue));
        assert_eq!(Command::parse("select 3"), Ok(Command::Select(3)));
        assert_eq!(
            Command::parse("revise section 1 make it slower"),
            Ok(Command::Revise {
                section: 1,
                text: "make it slower".into()
            })
        );
        assert!(Command::parse("select").is_err());
        assert!(Command::parse("revise section 1").is_err());
    }

    #[test]
    fn config_validation() {
        let c = PipelineConfig {
            candidate_count: 1,
            ..Default::default()
        };
        assert!(Pipeline::mock().run("x", c).is_err());
        assert_eq!(Pipeline::mock().run("  ", PipelineConfig::default()), Err(PipelineError::EmptyQuery));
        assert_eq!(PipelineConfig::default().step_bound(), 4 * 4 * 3);
    }
}
