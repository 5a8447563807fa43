//! Versioned prompt assets.
//!
//! Each asset file starts with `# version: N`, followed by a `[system]`
//! and a `[user]` section. Placeholders are `{name}`; braces that do not
//! name a supplied variable are left alone, so JSON examples survive.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use crate::error::{ForgeError, Result};
use crate::taxonomy::ErrorCode;

use super::{ChatRequest, TaskKind};

const RAW: &[(&str, &str)] = &[
    ("probe_answer", include_str!("../../prompts/probe_answer.txt")),
    ("reason", include_str!("../../prompts/reason.txt")),
    ("ern_extract", include_str!("../../prompts/ern_extract.txt")),
    ("sufficiency", include_str!("../../prompts/sufficiency.txt")),
    ("supplement", include_str!("../../prompts/supplement.txt")),
    ("linearize", include_str!("../../prompts/linearize.txt")),
    ("annotate", include_str!("../../prompts/annotate.txt")),
    ("applicability", include_str!("../../prompts/applicability.txt")),
    ("inject", include_str!("../../prompts/inject.txt")),
    ("composite", include_str!("../../prompts/composite.txt")),
    ("answer_extract", include_str!("../../prompts/answer_extract.txt")),
    ("vote_reason", include_str!("../../prompts/vote_reason.txt")),
    ("vote_annot", include_str!("../../prompts/vote_annot.txt")),
    ("rewrite", include_str!("../../prompts/rewrite.txt")),
    ("eval_basic", include_str!("../../prompts/eval_basic.txt")),
    ("eval_enhanced", include_str!("../../prompts/eval_enhanced.txt")),
];

const DEFINITIONS: &str = include_str!("../../prompts/inject_definitions.txt");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptAsset {
    pub name: &'static str,
    pub version: u32,
    pub system: String,
    pub user: String,
}

fn parse_version(line: &str) -> Option<u32> {
    line.trim().strip_prefix("# version:")?.trim().parse().ok()
}

/// Splits `[header]` sections; text before the first header is dropped.
fn sections(body: &str) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut current: Option<(String, Vec<&str>)> = None;
    for line in body.lines() {
        let t = line.trim();
        if t.starts_with('[') && t.ends_with(']') && t.len() > 2 && !t.contains(' ') {
            if let Some((name, lines)) = current.take() {
                out.insert(name, lines.join("\n").trim().to_string());
            }
            current = Some((t[1..t.len() - 1].to_string(), Vec::new()));
        } else if let Some((_, lines)) = current.as_mut() {
            lines.push(line);
        }
    }
    if let Some((name, lines)) = current {
        out.insert(name, lines.join("\n").trim().to_string());
    }
    out
}

fn parse_asset(name: &'static str, raw: &str) -> Result<PromptAsset> {
    let first = raw.lines().next().unwrap_or_default();
    let version =
        parse_version(first).ok_or_else(|| ForgeError::Config(format!("prompt {name}: missing version header")))?;
    let mut secs = sections(raw);
    let system = secs
        .remove("system")
        .ok_or_else(|| ForgeError::Config(format!("prompt {name}: no [system] section")))?;
    let user = secs
        .remove("user")
        .ok_or_else(|| ForgeError::Config(format!("prompt {name}: no [user] section")))?;
    Ok(PromptAsset {
        name,
        version,
        system,
        user,
    })
}

fn registry() -> &'static BTreeMap<&'static str, PromptAsset> {
    static CELL: OnceLock<BTreeMap<&'static str, PromptAsset>> = OnceLock::new();
    CELL.get_or_init(|| {
        RAW.iter()
            .map(|(name, raw)| (*name, parse_asset(name, raw).expect("bundled prompt is well-formed")))
            .collect()
    })
}

pub fn asset(name: &str) -> Result<&'static PromptAsset> {
    registry()
        .get(name)
        .ok_or_else(|| ForgeError::Config(format!("unknown prompt asset '{name}'")))
}

pub fn asset_names() -> impl Iterator<Item = &'static str> {
    registry().keys().copied()
}

/// Per-code error definition used by the injection template.
pub fn definition(code: ErrorCode) -> &'static str {
    static CELL: OnceLock<BTreeMap<String, String>> = OnceLock::new();
    let defs = CELL.get_or_init(|| sections(DEFINITIONS));
    defs.get(code.as_str())
        .map(String::as_str)
        .expect("every code has a definition")
}

pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (k, v) in vars {
        out = out.replace(&format!("{{{k}}}"), v);
    }
    out
}

impl PromptAsset {
    /// Builds a request from this asset with the given substitutions.
    pub fn request(&self, task: TaskKind, vars: &[(&str, &str)]) -> ChatRequest {
        ChatRequest::new(task, render(&self.system, vars), render(&self.user, vars))
    }
}

/// `1. step` lines, the layout every step-listing prompt uses.
pub fn numbered(steps: &[String]) -> String {
    steps
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{}. {}", i + 1, s))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn options_block(options: &[(String, String)]) -> String {
    if options.is_empty() {
        return "(none)".to_string();
    }
    options
        .iter()
        .map(|(l, t)| format!("{l}. {t}"))
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::ALL_CODES;

    #[test]
    fn every_bundled_asset_parses_with_version() {
        for name in asset_names() {
            let a = asset(name).unwrap();
            assert!(a.version >= 1, "{name}");
            assert!(!a.system.is_empty() && !a.user.is_empty(), "{name}");
        }
        assert_eq!(asset_names().count(), RAW.len());
    }

    #[test]
    fn every_code_has_a_definition() {
        for code in ALL_CODES {
            assert!(definition(code).len() > 20, "{code}");
        }
    }

    #[test]
    fn render_leaves_json_braces() {
        let out = render("Q: {question} -> {\"a\": 1}", &[("question", "why")]);
        assert_eq!(out, "Q: why -> {\"a\": 1}");
    }

    #[test]
    fn unknown_asset_is_config_error() {
        assert!(matches!(asset("nope"), Err(ForgeError::Config(_))));
    }
}
