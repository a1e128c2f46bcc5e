//! Prompt templates with `{{slot}}` placeholders.
//!
//! Defaults are compiled in from `prompts/*.txt`; any of them can be replaced
//! by a same-named file in an override directory.

use std::path::Path;

use thiserror::Error;

pub const OPENING_QUESTION: &str = "What will you say to start the conversation?";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("prompt directory {0} does not exist")]
    MissingDir(String),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("template {name} must contain `{{{{{slot}}}}}` exactly once, found {found}")]
    Placeholder {
        name: String,
        slot: String,
        found: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub name: String,
    pub text: String,
}

impl Template {
    pub fn new(name: impl Into<String>, text: impl Into<String>) -> Self {
        Template {
            name: name.into(),
            text: text.into(),
        }
    }

    pub fn count(&self, slot: &str) -> usize {
        self.text.matches(&format!("{{{{{slot}}}}}")).count()
    }

    fn require(&self, slots: &[&str]) -> Result<(), PromptError> {
        for slot in slots {
            let found = self.count(slot);
            if found != 1 {
                return Err(PromptError::Placeholder {
                    name: self.name.clone(),
                    slot: (*slot).to_string(),
                    found,
                });
            }
        }
        Ok(())
    }

    /// Substitutes placeholders in one left-to-right pass, so slot values that
    /// themselves contain `{{...}}` are inserted literally.
    pub fn render(&self, slots: &[(&str, &str)]) -> String {
        let mut out = String::with_capacity(self.text.len());
        let mut rest = self.text.as_str();
        while let Some(open) = rest.find("{{") {
            out.push_str(&rest[..open]);
            let after = &rest[open + 2..];
            match after.find("}}") {
                Some(close) => {
                    let key = &after[..close];
                    match slots.iter().find(|(k, _)| *k == key) {
                        Some((_, v)) => out.push_str(v),
                        None => {
                            out.push_str("{{");
                            out.push_str(key);
                            out.push_str("}}");
                        }
                    }
                    rest = &after[close + 2..];
                }
                None => {
                    out.push_str(&rest[open..]);
                    rest = "";
                }
            }
        }
        out.push_str(rest);
        out
    }
}

/// Templates used by the two-stage profile extractor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractionPrompts {
    pub scene_consistent: Template,
    pub scene_related: Template,
    pub personality: Template,
    pub polish: Template,
}

impl Default for ExtractionPrompts {
    fn default() -> Self {
        ExtractionPrompts {
            scene_consistent: Template::new("scene_consistent", include_str!("../prompts/scene_consistent.txt")),
            scene_related: Template::new("scene_related", include_str!("../prompts/scene_related.txt")),
            personality: Template::new("personality", include_str!("../prompts/personality.txt")),
            polish: Template::new("polish", include_str!("../prompts/polish.txt")),
        }
    }
}

impl ExtractionPrompts {
    pub fn validate(&self) -> Result<(), PromptError> {
        self.scene_consistent.require(&["dialogue"])?;
        self.scene_related.require(&["dialogue"])?;
        self.personality.require(&["dialogue"])?;
        self.polish.require(&["attributes"])
    }

    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self, PromptError> {
        let dir = check_dir(dir.as_ref())?;
        let mut p = Self::default();
        for t in [&mut p.scene_consistent, &mut p.scene_related, &mut p.personality, &mut p.polish] {
            override_from(dir, t)?;
        }
        p.validate()?;
        Ok(p)
    }
}

/// Templates used by the consistency metrics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JudgePrompts {
    pub decompose: Template,
    /// Profile fact as Target, dialogue as Source.
    pub nli_profile_target: Template,
    /// User utterance as Target, profile as Source.
    pub nli_dialogue_target: Template,
    pub sc_score: Template,
    pub val_score: Template,
}

impl Default for JudgePrompts {
    fn default() -> Self {
        JudgePrompts {
            decompose: Template::new("decompose", include_str!("../prompts/decompose.txt")),
            nli_profile_target: Template::new("nli_profile_target", include_str!("../prompts/nli_profile_target.txt")),
            nli_dialogue_target: Template::new("nli_dialogue_target", include_str!("../prompts/nli_dialogue_target.txt")),
            sc_score: Template::new("sc_score", include_str!("../prompts/sc_score.txt")),
            val_score: Template::new("val_score", include_str!("../prompts/val_score.txt")),
        }
    }
}

impl JudgePrompts {
    pub fn validate(&self) -> Result<(), PromptError> {
        self.decompose.require(&["text"])?;
        for t in [&self.nli_profile_target, &self.nli_dialogue_target, &self.sc_score, &self.val_score] {
            t.require(&["source", "target"])?;
        }
        Ok(())
    }

    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self, PromptError> {
        let dir = check_dir(dir.as_ref())?;
        let mut p = Self::default();
        for t in [
            &mut p.decompose,
            &mut p.nli_profile_target,
            &mut p.nli_dialogue_target,
            &mut p.sc_score,
            &mut p.val_score,
        ] {
            override_from(dir, t)?;
        }
        p.validate()?;
        Ok(p)
    }
}

pub fn roleplay_system_template() -> Template {
    Template::new("roleplay_system", include_str!("../prompts/roleplay_system.txt"))
}

fn check_dir(dir: &Path) -> Result<&Path, PromptError> {
    if dir.is_dir() {
        Ok(dir)
    } else {
        Err(PromptError::MissingDir(dir.display().to_string()))
    }
}

fn override_from(dir: &Path, t: &mut Template) -> Result<(), PromptError> {
    let path = dir.join(format!("{}.txt", t.name));
    if path.exists() {
        t.text = std::fs::read_to_string(&path).map_err(|source| PromptError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    Ok(())
}
