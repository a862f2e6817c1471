//! Corpus path templates.
//!
//! A template is a path with `{variable}` placeholders. In directional mode
//! the two directions of a language pair have separate files and the
//! variables are `src_lang`, `tgt_lang` and `lang_pair`. In symmetric mode
//! both directions read the same pair of files, addressed through
//! `lang_a`/`lang_b` (the pair in byte order), `sorted_pair`, and
//! `side_a`/`side_b`, which are `src`/`trg` for the forward direction
//! (source is the smaller code) and swapped otherwise.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::LanguageCode;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("template {template:?}: unterminated placeholder")]
    Unterminated { template: String },
    #[error("template {template:?}: stray '}}'")]
    StrayBrace { template: String },
    #[error("template {template:?}: unknown variable {{{name}}}")]
    UnknownVariable { template: String, name: String },
    #[error("template {template:?}: variable {{{name}}} is not available in {mode} mode")]
    WrongMode {
        template: String,
        name: String,
        mode: CorpusMode,
    },
    #[error("template {template:?} is {actual} but was rendered as {expected}")]
    ModeMismatch {
        template: String,
        expected: CorpusMode,
        actual: CorpusMode,
    },
    #[error("source and target templates use different corpus modes")]
    MixedModes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusMode {
    Directional,
    Symmetric,
}

impl std::fmt::Display for CorpusMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CorpusMode::Directional => "directional",
            CorpusMode::Symmetric => "symmetric",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Var {
    SrcLang,
    TgtLang,
    LangPair,
    LangA,
    LangB,
    SideA,
    SideB,
    SortedPair,
}

impl Var {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "src_lang" => Var::SrcLang,
            "tgt_lang" => Var::TgtLang,
            "lang_pair" => Var::LangPair,
            "lang_a" => Var::LangA,
            "lang_b" => Var::LangB,
            "side_a" => Var::SideA,
            "side_b" => Var::SideB,
            "sorted_pair" => Var::SortedPair,
            _ => return None,
        })
    }

    fn mode(self) -> CorpusMode {
        match self {
            Var::SrcLang | Var::TgtLang | Var::LangPair => CorpusMode::Directional,
            _ => CorpusMode::Symmetric,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Text(String),
    Var(Var),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathTemplate {
    template: String,
    mode: CorpusMode,
    segments: Vec<Segment>,
}

impl PathTemplate {
    pub fn parse(template: &str, mode: CorpusMode) -> Result<Self, TemplateError> {
        let mut segments = Vec::new();
        let mut rest = template;
        while !rest.is_empty() {
            match rest.find(['{', '}']) {
                None => {
                    segments.push(Segment::Text(rest.to_string()));
                    break;
                }
                Some(i) if rest.as_bytes()[i] == b'}' => {
                    return Err(TemplateError::StrayBrace {
                        template: template.to_string(),
                    })
                }
                Some(i) => {
                    if i > 0 {
                        segments.push(Segment::Text(rest[..i].to_string()));
                    }
                    let close = rest[i..]
                        .find('}')
                        .ok_or_else(|| TemplateError::Unterminated {
                            template: template.to_string(),
                        })?;
                    let name = &rest[i + 1..i + close];
                    let var = Var::parse(name).ok_or_else(|| TemplateError::UnknownVariable {
                        template: template.to_string(),
                        name: name.to_string(),
                    })?;
                    if var.mode() != mode {
                        return Err(TemplateError::WrongMode {
                            template: template.to_string(),
                            name: name.to_string(),
                            mode,
                        });
                    }
                    segments.push(Segment::Var(var));
                    rest = &rest[i + close + 1..];
                }
            }
        }
        Ok(Self {
            template: template.to_string(),
            mode,
            segments,
        })
    }

    pub fn directional(template: &str) -> Result<Self, TemplateError> {
        Self::parse(template, CorpusMode::Directional)
    }

    pub fn symmetric(template: &str) -> Result<Self, TemplateError> {
        Self::parse(template, CorpusMode::Symmetric)
    }

    pub fn mode(&self) -> CorpusMode {
        self.mode
    }

    pub fn as_str(&self) -> &str {
        &self.template
    }

    fn expect_mode(&self, expected: CorpusMode) -> Result<(), TemplateError> {
        if self.mode == expected {
            Ok(())
        } else {
            Err(TemplateError::ModeMismatch {
                template: self.template.clone(),
                expected,
                actual: self.mode,
            })
        }
    }

    pub fn render_directional(
        &self,
        src: &LanguageCode,
        tgt: &LanguageCode,
    ) -> Result<String, TemplateError> {
        self.expect_mode(CorpusMode::Directional)?;
        Ok(self.substitute(src, tgt))
    }

    pub fn render_symmetric(
        &self,
        src: &LanguageCode,
        tgt: &LanguageCode,
    ) -> Result<String, TemplateError> {
        self.expect_mode(CorpusMode::Symmetric)?;
        Ok(self.substitute(src, tgt))
    }

    /// Renders in the template's own mode.
    pub fn render(&self, src: &LanguageCode, tgt: &LanguageCode) -> String {
        self.substitute(src, tgt)
    }

    fn substitute(&self, src: &LanguageCode, tgt: &LanguageCode) -> String {
        let (lang_a, lang_b) = if src <= tgt { (src, tgt) } else { (tgt, src) };
        let forward = src == lang_a;
        let mut out = String::with_capacity(self.template.len() + 16);
        for seg in &self.segments {
            match seg {
                Segment::Text(t) => out.push_str(t),
                Segment::Var(v) => match v {
                    Var::SrcLang => out.push_str(src.as_str()),
                    Var::TgtLang => out.push_str(tgt.as_str()),
                    Var::LangPair => {
                        out.push_str(src.as_str());
                        out.push('-');
                        out.push_str(tgt.as_str());
                    }
                    Var::LangA => out.push_str(lang_a.as_str()),
                    Var::LangB => out.push_str(lang_b.as_str()),
                    Var::SortedPair => {
                        out.push_str(lang_a.as_str());
                        out.push('-');
                        out.push_str(lang_b.as_str());
                    }
                    Var::SideA => out.push_str(if forward { "src" } else { "trg" }),
                    Var::SideB => out.push_str(if forward { "trg" } else { "src" }),
                },
            }
        }
        out
    }
}

/// Source and target templates of one corpus, sharing a mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusLayout {
    src: PathTemplate,
    tgt: PathTemplate,
}

impl CorpusLayout {
    pub fn new(src: PathTemplate, tgt: PathTemplate) -> Result<Self, TemplateError> {
        if src.mode != tgt.mode {
            return Err(TemplateError::MixedModes);
        }
        Ok(Self { src, tgt })
    }

    pub fn mode(&self) -> CorpusMode {
        self.src.mode
    }

    pub fn src_template(&self) -> &PathTemplate {
        &self.src
    }

    pub fn tgt_template(&self) -> &PathTemplate {
        &self.tgt
    }

    pub fn paths(&self, src: &LanguageCode, tgt: &LanguageCode) -> (String, String) {
        (self.src.render(src, tgt), self.tgt.render(src, tgt))
    }
}

/// Every ordered pair over `languages` whose source and target files both
/// exist, sorted by (src, tgt). Self-pairs are probed only when
/// `include_self_pairs` is set.
pub fn discover_tasks<F>(
    layout: &CorpusLayout,
    languages: &[LanguageCode],
    include_self_pairs: bool,
    mut file_exists: F,
) -> Vec<(LanguageCode, LanguageCode)>
where
    F: FnMut(&str) -> bool,
{
    let mut langs = languages.to_vec();
    langs.sort();
    langs.dedup();
    let mut found = Vec::new();
    for src in &langs {
        for tgt in &langs {
            if src == tgt && !include_self_pairs {
                continue;
            }
            let (sp, tp) = layout.paths(src, tgt);
            if file_exists(&sp) && file_exists(&tp) {
                found.push((src.clone(), tgt.clone()));
            }
        }
    }
    found
}
