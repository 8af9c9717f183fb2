use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("template `{template}`: unterminated placeholder at byte {offset}")]
    Unterminated { template: String, offset: usize },
    #[error("template `{template}`: invalid placeholder name `{name}`")]
    BadName { template: String, name: String },
    #[error("template `{template}`: unbound placeholder(s) {missing:?}")]
    Unbound {
        template: String,
        missing: Vec<String>,
    },
    #[error("template file {path}: {reason}")]
    File { path: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Text(String),
    Slot(String),
}

/// Text with `{{name}}` placeholders. Every placeholder is required.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    name: String,
    body: String,
    pieces: Vec<Piece>,
    required: BTreeSet<String>,
}

fn valid_name(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl PromptTemplate {
    pub fn new(name: impl Into<String>, body: impl Into<String>) -> Result<Self, TemplateError> {
        let name = name.into();
        let body = body.into();
        let mut pieces = Vec::new();
        let mut required = BTreeSet::new();
        let mut rest = body.as_str();
        let mut offset = 0;
        while let Some(start) = rest.find("{{") {
            if start > 0 {
                pieces.push(Piece::Text(rest[..start].to_string()));
            }
            let after = &rest[start + 2..];
            let end = after.find("}}").ok_or(TemplateError::Unterminated {
                template: name.clone(),
                offset: offset + start,
            })?;
            let slot = after[..end].trim();
            if !valid_name(slot) {
                return Err(TemplateError::BadName {
                    template: name.clone(),
                    name: slot.to_string(),
                });
            }
            required.insert(slot.to_string());
            pieces.push(Piece::Slot(slot.to_string()));
            let consumed = start + 2 + end + 2;
            offset += consumed;
            rest = &rest[consumed..];
        }
        if !rest.is_empty() {
            pieces.push(Piece::Text(rest.to_string()));
        }
        Ok(Self {
            name,
            body,
            pieces,
            required,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    pub fn required_placeholders(&self) -> &BTreeSet<String> {
        &self.required
    }

    /// Substitutes bound values verbatim; extra bindings are ignored.
    pub fn render(&self, bindings: &BTreeMap<&str, String>) -> Result<String, TemplateError> {
        let missing: Vec<String> = self
            .required
            .iter()
            .filter(|name| !bindings.contains_key(name.as_str()))
            .cloned()
            .collect();
        if !missing.is_empty() {
            return Err(TemplateError::Unbound {
                template: self.name.clone(),
                missing,
            });
        }
        let mut out = String::with_capacity(self.body.len());
        for piece in &self.pieces {
            match piece {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot(s) => out.push_str(&bindings[s.as_str()]),
            }
        }
        Ok(out)
    }
}
