//! State memory tree, dialog records and on-disk session storage.
//!
//! Backtracking never prunes: the pipeline attaches new work under an earlier
//! node and the abandoned branch stays in the tree.

use std::collections::VecDeque;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    SessionStart,
    ConceptionAnalysis,
    DraftComposition,
    SelfEvaluation,
    AestheticSelection,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::SessionStart,
        Stage::ConceptionAnalysis,
        Stage::DraftComposition,
        Stage::SelfEvaluation,
        Stage::AestheticSelection,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::SessionStart => "SessionStart",
            Stage::ConceptionAnalysis => "ConceptionAnalysis",
            Stage::DraftComposition => "DraftComposition",
            Stage::SelfEvaluation => "SelfEvaluation",
            Stage::AestheticSelection => "AestheticSelection",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EdgeKind {
    Advance,
    Retry,
    Backtrack,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryNode {
    pub id: usize,
    pub stage: Stage,
    pub context: String,
    pub score_text: Option<String>,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Unix milliseconds.
    pub created_at: u64,
    pub edge_kind: EdgeKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchOrder {
    Bfs,
    Dfs,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MemoryError {
    #[error("no node with id {0}")]
    UnknownParent(usize),
    #[error("no node at stage {0}")]
    NoSuchStage(Stage),
}

pub fn now_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Node ids are indices into `nodes`, so they double as creation order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryTree {
    nodes: Vec<MemoryNode>,
}

impl MemoryTree {
    pub fn new(context: impl Into<String>) -> Self {
        Self::new_at(context, now_millis())
    }

    pub fn new_at(context: impl Into<String>, created_at: u64) -> Self {
        MemoryTree {
            nodes: vec![MemoryNode {
                id: 0,
                stage: Stage::SessionStart,
                context: context.into(),
                score_text: None,
                parent: None,
                children: Vec::new(),
                created_at,
                edge_kind: EdgeKind::Advance,
            }],
        }
    }

    pub fn root(&self) -> &MemoryNode {
        &self.nodes[0]
    }

    pub fn get(&self, id: usize) -> Option<&MemoryNode> {
        self.nodes.get(id)
    }

    pub fn nodes(&self) -> &[MemoryNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn last(&self) -> &MemoryNode {
        &self.nodes[self.nodes.len() - 1]
    }

    pub fn add_node(
        &mut self,
        parent: usize,
        stage: Stage,
        context: impl Into<String>,
        score_text: Option<String>,
        edge_kind: EdgeKind,
    ) -> Result<usize, MemoryError> {
        self.add_node_at(parent, stage, context, score_text, edge_kind, now_millis())
    }

    /// Like [`add_node`](Self::add_node) with an explicit timestamp. Timestamps
    /// are clamped so they never go backwards.
    pub fn add_node_at(
        &mut self,
        parent: usize,
        stage: Stage,
        context: impl Into<String>,
        score_text: Option<String>,
        edge_kind: EdgeKind,
        created_at: u64,
    ) -> Result<usize, MemoryError> {
        if parent >= self.nodes.len() {
            return Err(MemoryError::UnknownParent(parent));
        }
        let id = self.nodes.len();
        let created_at = created_at.max(self.last().created_at);
        self.nodes.push(MemoryNode {
            id,
            stage,
            context: context.into(),
            score_text,
            parent: Some(parent),
            children: Vec::new(),
            created_at,
            edge_kind,
        });
        self.nodes[parent].children.push(id);
        Ok(id)
    }

    /// Matching node ids in breadth-first or pre-order depth-first order.
    pub fn search<F>(&self, pred: F, order: SearchOrder) -> Vec<usize>
    where
        F: Fn(&MemoryNode) -> bool,
    {
        let mut out = Vec::new();
        match order {
            SearchOrder::Bfs => {
                let mut queue = VecDeque::from([0usize]);
                while let Some(id) = queue.pop_front() {
                    let n = &self.nodes[id];
                    if pred(n) {
                        out.push(id);
                    }
                    queue.extend(n.children.iter().copied());
                }
            }
            SearchOrder::Dfs => {
                let mut stack = vec![0usize];
                while let Some(id) = stack.pop() {
                    let n = &self.nodes[id];
                    if pred(n) {
                        out.push(id);
                    }
                    stack.extend(n.children.iter().rev().copied());
                }
            }
        }
        out
    }

    /// The most recently created node at `stage`.
    pub fn backtrack_point(&self, stage: Stage) -> Result<usize, MemoryError> {
        self.nodes
            .iter()
            .rev()
            .find(|n| n.stage == stage)
            .map(|n| n.id)
            .ok_or(MemoryError::NoSuchStage(stage))
    }

    /// Ids from the root down to `id`.
    pub fn path_to(&self, id: usize) -> Vec<usize> {
        let mut path = Vec::new();
        let mut cur = self.nodes.get(id).map(|n| n.id);
        while let Some(c) = cur {
            path.push(c);
            cur = self.nodes[c].parent;
        }
        path.reverse();
        path
    }

    /// Structural checks: single root, consistent links, acyclic, and stages
    /// that only drop across backtrack edges.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.nodes.is_empty() {
            return Err("empty tree".into());
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if n.id != i {
                return Err(format!("node at index {i} has id {}", n.id));
            }
            match n.parent {
                None if i != 0 => return Err(format!("node {i} has no parent")),
                None if n.stage != Stage::SessionStart => return Err("root is not SessionStart".into()),
                None => {}
                Some(p) => {
                    // parents always predate children, which rules out cycles
                    if p >= i {
                        return Err(format!("node {i} has parent {p} created after it"));
                    }
                    let count = self.nodes[p].children.iter().filter(|&&c| c == i).count();
                    if count != 1 {
                        return Err(format!("parent {p} lists child {i} {count} times"));
                    }
                    if n.edge_kind != EdgeKind::Backtrack && n.stage < self.nodes[p].stage {
                        return Err(format!("stage drops from {} to {} at node {i}", self.nodes[p].stage, n.stage));
                    }
                }
            }
            for &c in &n.children {
                if self.nodes.get(c).and_then(|x| x.parent) != Some(i) {
                    return Err(format!("child {c} of {i} does not point back"));
                }
            }
        }
        Ok(())
    }

    /// Equality ignoring timestamps.
    pub fn same_shape(&self, other: &MemoryTree) -> bool {
        self.nodes.len() == other.nodes.len()
            && self.nodes.iter().zip(&other.nodes).all(|(a, b)| {
                a.stage == b.stage
                    && a.context == b.context
                    && a.score_text == b.score_text
                    && a.parent == b.parent
                    && a.children == b.children
                    && a.edge_kind == b.edge_kind
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    User,
    Agent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogRecord {
    pub role: Role,
    pub text: String,
    pub timestamp: u64,
    pub session_id: String,
}

/// Append-only message queue for one session.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DialogLog {
    records: Vec<DialogRecord>,
}

impl DialogLog {
    pub fn new() -> Self {
        DialogLog::default()
    }

    pub fn push(&mut self, session_id: &str, role: Role, text: impl Into<String>) {
        self.push_at(session_id, role, text, now_millis());
    }

    pub fn push_at(&mut self, session_id: &str, role: Role, text: impl Into<String>, timestamp: u64) {
        let timestamp = self
            .records
            .last()
            .map_or(timestamp, |r| timestamp.max(r.timestamp));
        self.records.push(DialogRecord {
            role,
            text: text.into(),
            timestamp,
            session_id: session_id.to_string(),
        });
    }

    pub fn records(&self) -> &[DialogRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("session storage I/O: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error("corrupt session {id}: {reason}")]
    CorruptSession { id: String, reason: String },
    #[error("invalid session id `{0}`")]
    InvalidId(String),
    #[error("no stored session `{0}`")]
    NotFound(String),
}

#[derive(Serialize, Deserialize)]
struct Document<T> {
    schema: u32,
    session_id: String,
    body: T,
}

/// What is written for one session.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredSession<S> {
    pub tree: MemoryTree,
    pub dialog: DialogLog,
    pub state: S,
}

#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Leave a half-written temp file and fail before the rename.
    BeforeRename,
}

/// Sessions under `<root>/sessions/<id>/` as `tree`, `dialog` and `state`
/// JSON documents. Every write goes to a temp file that is then renamed.
#[derive(Debug, Clone)]
pub struct SessionStore {
    root: PathBuf,
    fault: Option<Fault>,
}

pub fn valid_session_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

impl SessionStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        SessionStore {
            root: root.into(),
            fault: None,
        }
    }

    #[doc(hidden)]
    pub fn with_fault(mut self, fault: Fault) -> Self {
        self.fault = Some(fault);
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn session_dir(&self, id: &str) -> Result<PathBuf, StoreError> {
        if !valid_session_id(id) {
            return Err(StoreError::InvalidId(id.to_string()));
        }
        Ok(self.root.join("sessions").join(id))
    }

    pub fn exists(&self, id: &str) -> bool {
        self.session_dir(id)
            .map(|d| d.join("tree").is_file())
            .unwrap_or(false)
    }

    /// Ids of stored sessions, sorted.
    pub fn list(&self) -> Result<Vec<String>, StoreError> {
        let dir = self.root.join("sessions");
        if !dir.is_dir() {
            return Ok(Vec::new());
        }
        let mut ids: Vec<String> = fs::read_dir(dir)?
            .filter_map(Result::ok)
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|id| self.exists(id))
            .collect();
        ids.sort();
        Ok(ids)
    }

    fn write_atomic(&self, path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
        let tmp = path.with_extension("tmp");
        if self.fault == Some(Fault::BeforeRename) {
            fs::write(&tmp, &bytes[..bytes.len() / 2])?;
            return Err(StoreError::IoFailure(std::io::Error::other("injected fault before rename")));
        }
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    fn write_doc<T: Serialize>(&self, dir: &Path, name: &str, id: &str, body: &T) -> Result<(), StoreError> {
        let doc = Document {
            schema: SCHEMA_VERSION,
            session_id: id.to_string(),
            body,
        };
        let text = serde_json::to_vec_pretty(&doc).map_err(|e| StoreError::CorruptSession {
            id: id.to_string(),
            reason: e.to_string(),
        })?;
        self.write_atomic(&dir.join(name), &text)
    }

    fn read_doc<T: DeserializeOwned>(&self, dir: &Path, name: &str, id: &str) -> Result<T, StoreError> {
        let path = dir.join(name);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(StoreError::NotFound(id.to_string()))
            }
            Err(e) => return Err(e.into()),
        };
        let corrupt = |reason: String| StoreError::CorruptSession {
            id: id.to_string(),
            reason,
        };
        let doc: Document<T> =
            serde_json::from_slice(&bytes).map_err(|e| corrupt(format!("{name}: {e}")))?;
        if doc.schema != SCHEMA_VERSION {
            return Err(corrupt(format!("{name}: schema {} (expected {SCHEMA_VERSION})", doc.schema)));
        }
        if doc.session_id != id {
            return Err(corrupt(format!("{name}: belongs to session `{}`", doc.session_id)));
        }
        Ok(doc.body)
    }

    pub fn save<S: Serialize>(&self, id: &str, session: &StoredSession<S>) -> Result<(), StoreError> {
        let dir = self.session_dir(id)?;
        fs::create_dir_all(&dir)?;
        self.write_doc(&dir, "state", id, &session.state)?;
        self.write_doc(&dir, "dialog", id, &session.dialog)?;
        self.write_doc(&dir, "tree", id, &session.tree)
    }

    pub fn load<S: DeserializeOwned>(&self, id: &str) -> Result<StoredSession<S>, StoreError> {
        let dir = self.session_dir(id)?;
        let tree: MemoryTree = self.read_doc(&dir, "tree", id)?;
        tree.check_invariants().map_err(|reason| StoreError::CorruptSession {
            id: id.to_string(),
            reason,
        })?;
        Ok(StoredSession {
            tree,
            dialog: self.read_doc(&dir, "dialog", id)?,
            state: self.read_doc(&dir, "state", id)?,
        })
    }
}
