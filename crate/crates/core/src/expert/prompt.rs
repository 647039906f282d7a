use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const BUNDLED: [&str; 6] = [
    include_str!("../../prompts/conception.txt"),
    include_str!("../../prompts/theory.txt"),
    include_str!("../../prompts/few-shot.txt"),
    include_str!("../../prompts/format-reminder.txt"),
    include_str!("../../prompts/critique.txt"),
    include_str!("../../prompts/routing.txt"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PromptCategory {
    Process,
    TheoryExplanation,
    AttributeGuidance,
    FewShot,
}

impl FromStr for PromptCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "Process" => Ok(PromptCategory::Process),
            "TheoryExplanation" => Ok(PromptCategory::TheoryExplanation),
            "AttributeGuidance" => Ok(PromptCategory::AttributeGuidance),
            "FewShot" => Ok(PromptCategory::FewShot),
            other => Err(format!("unknown prompt category `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("template {template}: {message}")]
    Malformed { template: String, message: String },
    #[error("template {template}: placeholder `{name}` is not bound")]
    Unbound { template: String, name: String },
    #[error("no template `{0}`")]
    Missing(String),
    #[error("reading templates: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub id: String,
    pub category: PromptCategory,
    pub template: String,
    /// Distinct placeholder names in order of first use.
    pub placeholders: Vec<String>,
}

fn scan_placeholders(text: &str) -> Result<Vec<String>, String> {
    let mut names = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find("{{") {
        let after = &rest[start + 2..];
        let end = after
            .find("}}")
            .ok_or_else(|| "unclosed `{{`".to_string())?;
        let name = after[..end].trim();
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(format!("bad placeholder name `{name}`"));
        }
        if !names.iter().any(|n| n == name) {
            names.push(name.to_string());
        }
        rest = &after[end + 2..];
    }
    Ok(names)
}

impl PromptTemplate {
    /// Parses a template file: a `---` front-matter block with `id` and
    /// `category`, then the body.
    pub fn parse(text: &str) -> Result<Self, TemplateError> {
        let bad = |message: &str| TemplateError::Malformed {
            template: "?".into(),
            message: message.to_string(),
        };
        let text = text.strip_prefix("---").ok_or_else(|| bad("missing front matter"))?;
        let (front, body) = text
            .split_once("\n---\n")
            .ok_or_else(|| bad("unterminated front matter"))?;
        let mut fields = BTreeMap::new();
        for line in front.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once(':').ok_or_else(|| bad("front matter line without `:`"))?;
            fields.insert(k.trim().to_string(), v.trim().to_string());
        }
        let id = fields.get("id").cloned().ok_or_else(|| bad("missing id"))?;
        let with_id = |message: String| TemplateError::Malformed {
            template: id.clone(),
            message,
        };
        let category = fields
            .get("category")
            .ok_or_else(|| with_id("missing category".into()))?
            .parse()
            .map_err(with_id)?;
        let placeholders = scan_placeholders(body).map_err(with_id)?;
        Ok(PromptTemplate {
            id: id.clone(),
            category,
            template: body.to_string(),
            placeholders,
        })
    }

    /// Substitutes every `{{name}}`. Fails if any placeholder lacks a value.
    pub fn render(&self, bindings: &BTreeMap<&str, String>) -> Result<String, TemplateError> {
        if let Some(name) = self.placeholders.iter().find(|n| !bindings.contains_key(n.as_str())) {
            return Err(TemplateError::Unbound {
                template: self.id.clone(),
                name: name.clone(),
            });
        }
        let mut out = String::with_capacity(self.template.len());
        let mut rest = self.template.as_str();
        while let Some(start) = rest.find("{{") {
            out.push_str(&rest[..start]);
            let after = &rest[start + 2..];
            let end = after.find("}}").unwrap_or(after.len());
            out.push_str(&bindings[after[..end].trim()]);
            rest = &after[(end + 2).min(after.len())..];
        }
        out.push_str(rest);
        Ok(out)
    }
}

impl fmt::Display for PromptTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({:?})", self.id, self.category)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    templates: BTreeMap<String, PromptTemplate>,
}

/// Ids the expert renders; a prompt directory must provide all of them.
pub const REQUIRED_TEMPLATES: [&str; 6] = [
    "conception",
    "theory",
    "few-shot",
    "format-reminder",
    "critique",
    "routing",
];

impl Default for PromptSet {
    fn default() -> Self {
        PromptSet::from_texts(BUNDLED.iter().copied()).expect("bundled prompts are valid")
    }
}

impl PromptSet {
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Result<Self, TemplateError> {
        let mut templates = BTreeMap::new();
        for text in texts {
            let t = PromptTemplate::parse(text)?;
            templates.insert(t.id.clone(), t);
        }
        let have: BTreeSet<&str> = templates.keys().map(String::as_str).collect();
        if let Some(missing) = REQUIRED_TEMPLATES.iter().find(|id| !have.contains(*id)) {
            return Err(TemplateError::Missing(missing.to_string()));
        }
        Ok(PromptSet { templates })
    }

    /// Loads every `*.txt` file in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, TemplateError> {
        let io = |e: std::io::Error| TemplateError::Io(e.to_string());
        let mut texts = Vec::new();
        for entry in std::fs::read_dir(dir).map_err(io)? {
            let path = entry.map_err(io)?.path();
            if path.extension().is_some_and(|e| e == "txt") {
                texts.push(std::fs::read_to_string(&path).map_err(io)?);
            }
        }
        Self::from_texts(texts.iter().map(String::as_str))
    }

    pub fn get(&self, id: &str) -> Result<&PromptTemplate, TemplateError> {
        self.templates
            .get(id)
            .ok_or_else(|| TemplateError::Missing(id.to_string()))
    }

    pub fn templates(&self) -> impl Iterator<Item = &PromptTemplate> {
        self.templates.values()
    }

    pub fn render(&self, id: &str, bindings: &BTreeMap<&str, String>) -> Result<String, TemplateError> {
        self.get(id)?.render(bindings)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_set_parses() {
        let set = PromptSet::default();
        assert_eq!(set.templates().count(), 6);
        assert_eq!(set.get("theory").unwrap().category, PromptCategory::TheoryExplanation);
        assert_eq!(set.get("few-shot").unwrap().category, PromptCategory::FewShot);
        assert_eq!(
            set.get("conception").unwrap().placeholders,
            vec!["theory", "examples", "query", "perturbation"]
        );
    }

    #[test]
    fn render_requires_all_bindings() {
        let t = PromptTemplate::parse("---\nid: t\ncategory: Process\n---\nHello {{name}}, {{ name }} {{x}}!").unwrap();
        assert_eq!(t.placeholders, vec!["name", "x"]);
        let mut b = BTreeMap::new();
        b.insert("name", "Ann".to_string());
        assert_eq!(
            t.render(&b),
            Err(TemplateError::Unbound {
                template: "t".into(),
                name: "x".into()
            })
        );
        b.insert("x", "?".into());
        assert_eq!(t.render(&b).unwrap(), "Hello Ann, Ann ?!");
    }

    #[test]
    fn malformed_templates() {
        assert!(PromptTemplate::parse("no front matter").is_err());
        assert!(PromptTemplate::parse("---\nid: t\ncategory: Nope\n---\nbody").is_err());
        assert!(PromptTemplate::parse("---\nid: t\ncategory: Process\n---\n{{open").is_err());
    }
}
