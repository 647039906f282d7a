//! Conception analysis, critique and state routing over a text-completion
//! backend.
//!
//! Control flow never depends on backend output: [`Expert::route`] applies a
//! fixed policy and only asks the backend to phrase the reason.

mod http;
mod mock;
mod prompt;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abc::{serialize_abc, AbcScore};
use crate::attributes::MusicalAttributes;
use crate::eval::{EvalReport, InstrumentRangeTable};
use crate::memory::Stage;

pub use http::{parse_reply, request_body, HttpBackend, KEY_VAR, MODEL_VAR, URL_VAR};
pub use mock::{KeywordTable, MockBackend, ScriptedBackend};
pub use prompt::{PromptCategory, PromptSet, PromptTemplate, TemplateError, REQUIRED_TEMPLATES};

const MAX_REPLY: usize = 2048;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct BackendError(pub String);

pub trait ExpertBackend: Send + Sync {
    fn complete(&self, prompt: &str, max_length: usize) -> Result<String, BackendError>;
    fn name(&self) -> &str;
    /// True when identical prompts always get identical replies.
    fn deterministic(&self) -> bool;
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExpertError {
    #[error("query is empty")]
    EmptyQuery,
    #[error("backend failure: {0}")]
    BackendFailure(String),
    #[error("could not read attributes from reply: {0}")]
    UnparseableConception(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conception {
    pub attributes: MusicalAttributes,
    pub rationale: String,
    pub source_query: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RouteAction {
    Advance,
    Retry,
    Backtrack,
    Abort,
}

impl fmt::Display for RouteAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub action: RouteAction,
    /// Set only for `Backtrack`.
    pub target_stage: Option<Stage>,
    pub reason: String,
}

/// Everything the routing policy looks at.
#[derive(Debug, Clone, Copy)]
pub struct RouteContext<'a> {
    pub stage: Stage,
    pub report: Option<&'a EvalReport>,
    pub repair_budget_left: u32,
    pub backtracks_taken: u32,
    pub backtrack_budget: u32,
}

/// The fixed routing policy, without reason text.
pub fn route_policy(ctx: &RouteContext<'_>) -> (RouteAction, Option<Stage>) {
    if ctx.backtracks_taken > ctx.backtrack_budget {
        return (RouteAction::Abort, None);
    }
    if ctx.stage != Stage::SelfEvaluation {
        return (RouteAction::Advance, None);
    }
    match ctx.report {
        None => (RouteAction::Abort, None),
        Some(r) if r.errors.is_empty() => (RouteAction::Advance, None),
        Some(_) if ctx.repair_budget_left > 0 => (RouteAction::Retry, None),
        Some(_) if ctx.backtracks_taken < ctx.backtrack_budget => {
            (RouteAction::Backtrack, Some(Stage::ConceptionAnalysis))
        }
        Some(_) => (RouteAction::Abort, None),
    }
}

/// Reads a fenced `name: value` block and the `rationale:` that follows it.
pub fn parse_conception_reply(reply: &str) -> Result<(MusicalAttributes, String), String> {
    let lines: Vec<&str> = reply.lines().collect();
    let open = lines.iter().position(|l| l.trim_start().starts_with("```"));
    let (block, after) = match open {
        Some(o) => {
            let close = lines[o + 1..]
                .iter()
                .position(|l| l.trim_start().starts_with("```"))
                .map(|c| c + o + 1)
                .ok_or("unterminated fenced block")?;
            (lines[o + 1..close].join("\n"), lines[close + 1..].join("\n"))
        }
        None => (reply.to_string(), reply.to_string()),
    };
    let attrs = MusicalAttributes::from_kv(&block).map_err(|e| e.to_string())?;
    let rationale = after
        .lines()
        .skip_while(|l| !l.trim_start().to_ascii_lowercase().starts_with("rationale:"))
        .collect::<Vec<_>>()
        .join("\n");
    let rationale = rationale
        .trim_start()
        .get("rationale:".len()..)
        .unwrap_or("")
        .trim()
        .to_string();
    Ok((attrs, rationale))
}

#[derive(Clone)]
pub struct Expert {
    backend: Arc<dyn ExpertBackend>,
    prompts: PromptSet,
    instruments: Vec<String>,
}

impl fmt::Debug for Expert {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Expert")
            .field("backend", &self.backend.name())
            .finish_non_exhaustive()
    }
}

impl Expert {
    pub fn new(backend: Arc<dyn ExpertBackend>) -> Self {
        Self::with_prompts(backend, PromptSet::default(), &InstrumentRangeTable::default())
    }

    pub fn with_prompts(backend: Arc<dyn ExpertBackend>, prompts: PromptSet, table: &InstrumentRangeTable) -> Self {
        Expert {
            backend,
            prompts,
            instruments: table.instruments().map(str::to_string).collect(),
        }
    }

    pub fn mock() -> Self {
        Self::new(Arc::new(MockBackend::default()))
    }

    pub fn backend(&self) -> &dyn ExpertBackend {
        self.backend.as_ref()
    }

    fn conception_bindings(&self, query: &str, perturbation: u32) -> Result<BTreeMap<&'static str, String>, TemplateError> {
        let mut b = BTreeMap::new();
        b.insert("instruments", self.instruments.join(", "));
        let theory = self.prompts.render("theory", &b)?;
        let examples = self.prompts.render("few-shot", &BTreeMap::new())?;
        b.insert("theory", theory);
        b.insert("examples", examples);
        b.insert("query", query.replace('\n', " "));
        b.insert(
            "perturbation",
            if perturbation == 0 {
                String::new()
            } else {
                format!("PERTURBATION: {perturbation} (an earlier plan failed; choose a different note density)")
            },
        );
        Ok(b)
    }

    /// Prompt sent for a query; exposed for inspection.
    pub fn conception_prompt(&self, query: &str, perturbation: u32) -> Result<String, TemplateError> {
        self.prompts.render("conception", &self.conception_bindings(query, perturbation)?)
    }

    /// Turns a request into attributes. `perturbation` counts earlier failed
    /// plans and nudges the backend elsewhere. One malformed reply is
    /// tolerated; the second attempt uses a strict format reminder.
    pub fn conceive(&self, query: &str, perturbation: u32) -> Result<Conception, ExpertError> {
        if query.trim().is_empty() {
            return Err(ExpertError::EmptyQuery);
        }
        let bindings = self.conception_bindings(query, perturbation)?;
        let first = self.prompts.render("conception", &bindings)?;
        let problem = match self.backend.complete(&first, MAX_REPLY) {
            Ok(reply) => match parse_conception_reply(&reply) {
                Ok(parsed) => return Ok(self.finish(query, parsed)),
                Err(e) => e,
            },
            Err(e) => e.0,
        };
        let second = self.prompts.render("format-reminder", &bindings)?;
        match self.backend.complete(&second, MAX_REPLY) {
            Err(e) => Err(ExpertError::BackendFailure(e.0)),
            Ok(reply) if reply.trim().is_empty() => Err(ExpertError::BackendFailure("empty reply".into())),
            Ok(reply) => parse_conception_reply(&reply)
                .map(|parsed| self.finish(query, parsed))
                .map_err(|e| ExpertError::UnparseableConception(format!("{e} (first attempt: {problem})"))),
        }
    }

    fn finish(&self, query: &str, (attributes, rationale): (MusicalAttributes, String)) -> Conception {
        let rationale = if rationale.is_empty() {
            format!("{} chose {}", self.backend.name(), attributes.summary())
        } else {
            rationale
        };
        Conception {
            attributes,
            rationale,
            source_query: query.to_string(),
        }
    }

    pub fn critique(&self, score: &AbcScore, report: &EvalReport) -> Result<String, ExpertError> {
        let mut b = BTreeMap::new();
        b.insert("error_count", report.errors.len().to_string());
        b.insert(
            "findings",
            if report.errors.is_empty() {
                "none".to_string()
            } else {
                report.errors.iter().map(|e| format!("- {e}")).collect::<Vec<_>>().join("\n")
            },
        );
        b.insert("extracted", report.extracted.summary());
        b.insert("score", serialize_abc(score));
        let prompt = self.prompts.render("critique", &b)?;
        self.backend
            .complete(&prompt, MAX_REPLY)
            .map_err(|e| ExpertError::BackendFailure(e.0))
    }

    /// Applies the routing policy; the backend only phrases the reason.
    pub fn route(&self, ctx: &RouteContext<'_>) -> RoutingDecision {
        let (action, target_stage) = route_policy(ctx);
        let errors = ctx.report.map_or(0, |r| r.errors.len());
        let fallback = match action {
            RouteAction::Advance => format!("{} complete", ctx.stage),
            RouteAction::Retry => format!("{errors} errors remain; repairing"),
            RouteAction::Backtrack => format!("{errors} errors after repairs; revisiting conception"),
            RouteAction::Abort if ctx.report.is_none() && ctx.stage == Stage::SelfEvaluation => {
                "no evaluation report".to_string()
            }
            RouteAction::Abort => "backtrack budget exhausted".to_string(),
        };
        let mut b = BTreeMap::new();
        b.insert("stage", ctx.stage.to_string());
        b.insert("action", action.to_string());
        b.insert("error_count", errors.to_string());
        let reason = self
            .prompts
            .render("routing", &b)
            .ok()
            .and_then(|p| self.backend.complete(&p, 400).ok())
            .map(|r| r.trim().to_string())
            .filter(|r| !r.is_empty())
            .unwrap_or(fallback);
        RoutingDecision {
            action,
            target_stage,
            reason,
        }
    }
}
