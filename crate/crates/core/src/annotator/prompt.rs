//! Prompt templates and response parsing.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::AnnotateError;
use crate::corpus::{AnnotationOutcome, EmotionLabel, Track};
use crate::retrieval::ContextBundle;

const TITLE: &str = "{title}";
const COMPOSER: &str = "{composer}";
const CONTEXT: &str = "{context}";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptMode {
    Context,
    TitleOnly,
}

impl PromptMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptMode::Context => "context",
            PromptMode::TitleOnly => "title-only",
        }
    }
}

impl std::str::FromStr for PromptMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "context" => Ok(PromptMode::Context),
            "title-only" => Ok(PromptMode::TitleOnly),
            other => Err(format!(
                "unknown mode `{other}` (expected context|title-only)"
            )),
        }
    }
}

/// Versioned prompt text with `{title}`, `{composer}` and, in context mode,
/// `{context}` placeholders, each appearing exactly once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    text: String,
    version: String,
    mode: PromptMode,
}

impl PromptTemplate {
    /// Mode is inferred from the presence of `{context}`.
    pub fn new(text: impl Into<String>, version: impl Into<String>) -> Result<Self, AnnotateError> {
        let text = text.into();
        for p in [TITLE, COMPOSER] {
            let n = text.matches(p).count();
            if n != 1 {
                return Err(AnnotateError::Template(format!(
                    "placeholder {p} must appear exactly once, found {n}"
                )));
            }
        }
        let mode = match text.matches(CONTEXT).count() {
            0 => PromptMode::TitleOnly,
            1 => PromptMode::Context,
            n => {
                return Err(AnnotateError::Template(format!(
                    "placeholder {CONTEXT} must appear at most once, found {n}"
                )))
            }
        };
        Ok(Self {
            text,
            version: version.into(),
            mode,
        })
    }

    pub fn default_context() -> Self {
        Self::new(include_str!("../../templates/context_v1.txt"), "context-v1")
            .expect("bundled template is valid")
    }

    pub fn default_title_only() -> Self {
        Self::new(
            include_str!("../../templates/title_only_v1.txt"),
            "title-only-v1",
        )
        .expect("bundled template is valid")
    }

    pub fn default_for(mode: PromptMode) -> Self {
        match mode {
            PromptMode::Context => Self::default_context(),
            PromptMode::TitleOnly => Self::default_title_only(),
        }
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn mode(&self) -> PromptMode {
        self.mode
    }
}

/// Substitutes placeholders in one pass, so values containing placeholder-like
/// text are inserted verbatim.
pub fn render_prompt(
    template: &PromptTemplate,
    track: &Track,
    bundle: Option<&ContextBundle>,
) -> Result<String, AnnotateError> {
    let context = match (template.mode, bundle) {
        (PromptMode::Context, Some(b)) => b.assembled_text.as_str(),
        (PromptMode::Context, None) => {
            return Err(AnnotateError::Template(
                "context template requires a context bundle".into(),
            ))
        }
        (PromptMode::TitleOnly, Some(_)) => {
            return Err(AnnotateError::Template(
                "title-only template does not accept a context bundle".into(),
            ))
        }
        (PromptMode::TitleOnly, None) => "",
    };
    let mut out = String::with_capacity(template.text.len() + context.len() + 64);
    let mut rest = template.text.as_str();
    while let Some(pos) = rest.find('{') {
        out.push_str(&rest[..pos]);
        rest = &rest[pos..];
        let (value, len) = if rest.starts_with(TITLE) {
            (track.title.as_str(), TITLE.len())
        } else if rest.starts_with(COMPOSER) {
            (track.composer.as_str(), COMPOSER.len())
        } else if rest.starts_with(CONTEXT) {
            (context, CONTEXT.len())
        } else {
            ("{", 1)
        };
        out.push_str(value);
        rest = &rest[len..];
    }
    out.push_str(rest);
    Ok(out)
}

fn label_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?ix)
            \b(?P<code>HVHA|HVLA|LVHA|LVLA)\b
            | \b(?P<v>high|low)[\s\-\x{2013}\x{2014}_]+valence[\s\-\x{2013}\x{2014}_,/]*(?:and\s+)?
                (?P<a>high|low)[\s\-\x{2013}\x{2014}_]+arousal\b
            | (?P<nei>\bnot[\s_]+enough[\s_]+info(?:rmation)?\b)
            ",
        )
        .expect("label regex")
    })
}

fn outcomes_in(text: &str) -> Vec<AnnotationOutcome> {
    let mut found: Vec<AnnotationOutcome> = Vec::new();
    for caps in label_regex().captures_iter(text) {
        let outcome = if let Some(code) = caps.name("code") {
            AnnotationOutcome::Labeled(code.as_str().parse().expect("regex matches codes"))
        } else if caps.name("nei").is_some() {
            AnnotationOutcome::NotEnoughInformation
        } else {
            let high = |name: &str| caps[name].eq_ignore_ascii_case("high");
            let label = match (high("v"), high("a")) {
                (true, true) => EmotionLabel::Hvha,
                (true, false) => EmotionLabel::Hvla,
                (false, true) => EmotionLabel::Lvha,
                (false, false) => EmotionLabel::Lvla,
            };
            AnnotationOutcome::Labeled(label)
        };
        if !found.contains(&outcome) {
            found.push(outcome);
        }
    }
    found
}

/// Finds the single label (code or long form, any case) or the
/// not-enough-information phrase in a model response.
///
/// When the whole response names several outcomes, the final non-empty line
/// decides if it names exactly one.
pub fn parse_label(response: &str) -> Result<AnnotationOutcome, AnnotateError> {
    let all = outcomes_in(response);
    match all.len() {
        0 => Err(AnnotateError::NoLabel(snippet(response))),
        1 => Ok(all[0]),
        _ => {
            let last = response
                .lines()
                .rev()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("");
            match outcomes_in(last).as_slice() {
                [one] => Ok(*one),
                _ => Err(AnnotateError::Ambiguous(
                    all.iter().map(ToString::to_string).collect(),
                )),
            }
        }
    }
}

fn snippet(s: &str) -> String {
    let t: String = s.chars().take(80).collect();
    if t.len() < s.len() {
        format!("{t}...")
    } else {
        t
    }
}
