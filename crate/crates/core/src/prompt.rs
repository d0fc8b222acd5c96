//! Class text bank: original class names expanded with synonyms, visual
//! descriptions and background land-cover names, rendered through a prompt
//! template.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::ClassVocab;

pub type ClassId = u32;

pub const PLACEHOLDER: &str = "{CLASS}";

/// A foreground class or the reserved background sink.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassRef {
    Class(ClassId),
    Background,
}

impl ClassRef {
    pub fn class_id(self) -> Option<ClassId> {
        match self {
            ClassRef::Class(id) => Some(id),
            ClassRef::Background => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    Original,
    Synonym,
    Description,
    Background,
}

/// Named templates compared in the prompt ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplatePreset {
    Plain,
    Photo,
    Satellite,
    TopView,
}

impl TemplatePreset {
    pub const ALL: [TemplatePreset; 4] = [
        TemplatePreset::Plain,
        TemplatePreset::Photo,
        TemplatePreset::Satellite,
        TemplatePreset::TopView,
    ];

    pub fn template(self) -> &'static str {
        match self {
            TemplatePreset::Plain => "{CLASS}",
            TemplatePreset::Photo => "A photo of a {CLASS}",
            TemplatePreset::Satellite => "A satellite image of {CLASS}",
            TemplatePreset::TopView => "Top view of a {CLASS}",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TemplatePreset::Plain => "plain",
            TemplatePreset::Photo => "photo",
            TemplatePreset::Satellite => "satellite",
            TemplatePreset::TopView => "top_view",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }
}

impl fmt::Display for TemplatePreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Resolves a preset name or validates a literal template.
pub fn resolve_template(spec: &str) -> Result<String> {
    if let Some(p) = TemplatePreset::from_name(spec) {
        return Ok(p.template().to_string());
    }
    if spec.matches(PLACEHOLDER).count() != 1 {
        return Err(Error::BankConfig {
            key: "template".into(),
            reason: format!("{spec:?} must contain {PLACEHOLDER} exactly once"),
        });
    }
    Ok(spec.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDef {
    pub id: ClassId,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub synonyms: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    /// Descriptions that are full clauses bypass the template.
    #[serde(default = "yes")]
    pub verbatim: bool,
}

fn yes() -> bool {
    true
}

fn default_template() -> String {
    TemplatePreset::TopView.name().to_string()
}

/// On-disk bank definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankDef {
    #[serde(default = "default_template")]
    pub template: String,
    pub classes: Vec<ClassDef>,
    #[serde(default)]
    pub backgrounds: Vec<String>,
    /// Names of classes held out as unseen in the split report.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unseen: Vec<String>,
}

impl BankDef {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&raw).map_err(|e| Error::json(path, e))
    }
}

/// Validated, immutable class text bank.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassTextBank {
    template: String,
    classes: Vec<ClassDef>,
    backgrounds: Vec<String>,
    unseen: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptEntry {
    pub text: String,
    pub class: ClassRef,
    pub kind: EntryKind,
    /// Bank text the prompt was rendered from.
    pub source: String,
}

/// Which expansions of the bank are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Augmentations {
    pub synonyms: bool,
    pub backgrounds: bool,
    pub descriptions: bool,
}

impl Augmentations {
    pub const ALL: Augmentations = Augmentations {
        synonyms: true,
        backgrounds: true,
        descriptions: true,
    };
    pub const NONE: Augmentations = Augmentations {
        synonyms: false,
        backgrounds: false,
        descriptions: false,
    };
}

fn config_err(key: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::BankConfig {
        key: key.into(),
        reason: reason.into(),
    }
}

/// Validates a definition into a bank. Classes are ordered by id.
pub fn build_bank(def: &BankDef) -> Result<ClassTextBank> {
    let template = resolve_template(&def.template)?;
    let mut ids = HashSet::new();
    let mut originals = HashSet::new();
    for (i, c) in def.classes.iter().enumerate() {
        let key = format!("classes[{i}]");
        if !ids.insert(c.id) {
            return Err(config_err(format!("{key}.id"), format!("duplicate class id {}", c.id)));
        }
        if c.name.trim().is_empty() {
            return Err(config_err(format!("{key}.name"), "missing original class name"));
        }
        if c.synonyms.iter().any(|s| s.trim().is_empty()) {
            return Err(config_err(format!("{key}.synonyms"), "empty synonym"));
        }
        if c.description.as_ref().is_some_and(|d| d.trim().is_empty()) {
            return Err(config_err(format!("{key}.description"), "empty description"));
        }
        originals.insert(c.name.trim().to_lowercase());
    }
    for (i, b) in def.backgrounds.iter().enumerate() {
        let key = format!("backgrounds[{i}]");
        if b.trim().is_empty() {
            return Err(config_err(key, "empty background name"));
        }
        if originals.contains(&b.trim().to_lowercase()) {
            return Err(config_err(key, format!("{b:?} is also a foreground class")));
        }
    }
    for (i, u) in def.unseen.iter().enumerate() {
        if !originals.contains(&u.trim().to_lowercase()) {
            return Err(config_err(format!("unseen[{i}]"), format!("{u:?} is not a class name")));
        }
    }
    let mut classes = def.classes.clone();
    classes.sort_by_key(|c| c.id);
    Ok(ClassTextBank {
        template,
        classes,
        backgrounds: def.backgrounds.clone(),
        unseen: def.unseen.clone(),
    })
}

impl ClassTextBank {
    pub fn load(path: &Path) -> Result<Self> {
        build_bank(&BankDef::load(path)?)
    }

    pub fn template(&self) -> &str {
        &self.template
    }

    pub fn classes(&self) -> &[ClassDef] {
        &self.classes
    }

    pub fn backgrounds(&self) -> &[String] {
        &self.backgrounds
    }

    pub fn unseen(&self) -> &[String] {
        &self.unseen
    }

    pub fn class(&self, id: ClassId) -> Option<&ClassDef> {
        self.classes.iter().find(|c| c.id == id)
    }

    pub fn class_name(&self, class: ClassRef) -> &str {
        match class {
            ClassRef::Class(id) => self.class(id).map_or("unknown", |c| c.name.as_str()),
            ClassRef::Background => "background",
        }
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    /// Same bank with another template (preset name or literal).
    pub fn with_template(&self, template: &str) -> Result<Self> {
        Ok(Self {
            template: resolve_template(template)?,
            ..self.clone()
        })
    }

    /// Same bank with some expansions switched off.
    pub fn with_augmentations(&self, aug: Augmentations) -> Self {
        let classes = self
            .classes
            .iter()
            .map(|c| ClassDef {
                synonyms: if aug.synonyms { c.synonyms.clone() } else { Vec::new() },
                description: if aug.descriptions { c.description.clone() } else { None },
                ..c.clone()
            })
            .collect();
        Self {
            classes,
            backgrounds: if aug.backgrounds {
                self.backgrounds.clone()
            } else {
                Vec::new()
            },
            ..self.clone()
        }
    }

    /// Class names and synonyms as a decoupling vocabulary.
    pub fn vocab(&self) -> ClassVocab {
        let mut v = ClassVocab::new();
        for c in &self.classes {
            v.insert(&c.name, c.id);
        }
        for c in &self.classes {
            for s in &c.synonyms {
                v.insert(s, c.id);
            }
        }
        v
    }

    pub fn render(&self, text: &str) -> String {
        self.template.replacen(PLACEHOLDER, text, 1)
    }
}

/// Renders every bank text: foreground classes by id (original, synonyms,
/// description), then backgrounds.
pub fn render_prompts(bank: &ClassTextBank) -> Vec<PromptEntry> {
    let mut out = Vec::new();
    for c in &bank.classes {
        let class = ClassRef::Class(c.id);
        out.push(PromptEntry {
            text: bank.render(&c.name),
            class,
            kind: EntryKind::Original,
            source: c.name.clone(),
        });
        for s in &c.synonyms {
            out.push(PromptEntry {
                text: bank.render(s),
                class,
                kind: EntryKind::Synonym,
                source: s.clone(),
            });
        }
        if let Some(d) = &c.description {
            out.push(PromptEntry {
                text: if c.verbatim { d.clone() } else { bank.render(d) },
                class,
                kind: EntryKind::Description,
                source: d.clone(),
            });
        }
    }
    for b in &bank.backgrounds {
        out.push(PromptEntry {
            text: bank.render(b),
            class: ClassRef::Background,
            kind: EntryKind::Background,
            source: b.clone(),
        });
    }
    out
}
