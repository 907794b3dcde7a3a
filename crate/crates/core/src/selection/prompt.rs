//! Few-shot prompt template.
//!
//! Each shot renders as `### Requirement:\n{x}\n### Code:\n{y}\n\n`, followed
//! by `### Requirement:\n{x_t}\n### Code:\n` for the test requirement. No
//! instruction text is added.

use serde::{Deserialize, Serialize};

pub const REQUIREMENT_HEADER: &str = "### Requirement:\n";
pub const CODE_HEADER: &str = "\n### Code:\n";
const SHOT_END: &str = "\n\n";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotText {
    pub requirement: String,
    pub code: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub shots: Vec<ShotText>,
    pub test_requirement: String,
    pub rendered: String,
}

impl Prompt {
    pub fn new(shots: Vec<ShotText>, test_requirement: impl Into<String>) -> Self {
        let test_requirement = test_requirement.into();
        let rendered = render(&shots, &test_requirement);
        Prompt {
            shots,
            test_requirement,
            rendered,
        }
    }
}

pub fn render(shots: &[ShotText], test_requirement: &str) -> String {
    let mut out = String::new();
    for shot in shots {
        out.push_str(REQUIREMENT_HEADER);
        out.push_str(&shot.requirement);
        out.push_str(CODE_HEADER);
        out.push_str(&shot.code);
        out.push_str(SHOT_END);
    }
    out.push_str(REQUIREMENT_HEADER);
    out.push_str(test_requirement);
    out.push_str(CODE_HEADER);
    out
}

/// Recovers shots and the trailing requirement from a rendered prompt.
///
/// Returns `None` when the text does not follow the template. Texts that
/// themselves contain the delimiter lines cannot be recovered unambiguously.
pub fn parse(rendered: &str) -> Option<(Vec<ShotText>, String)> {
    let body = rendered.strip_prefix(REQUIREMENT_HEADER)?;
    let body = body.strip_suffix(CODE_HEADER)?;
    let separator = format!("{SHOT_END}{REQUIREMENT_HEADER}");
    let mut blocks: Vec<&str> = body.split(separator.as_str()).collect();
    let test_requirement = blocks.pop()?.to_string();
    if test_requirement.contains(CODE_HEADER) {
        return None;
    }
    let shots = blocks
        .into_iter()
        .map(|block| {
            let (requirement, code) = block.split_once(CODE_HEADER)?;
            Some(ShotText {
                requirement: requirement.to_string(),
                code: code.to_string(),
            })
        })
        .collect::<Option<Vec<_>>>()?;
    Some((shots, test_requirement))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shot(r: &str, c: &str) -> ShotText {
        ShotText {
            requirement: r.into(),
            code: c.into(),
        }
    }

    #[test]
    fn bit_exact_template() {
        let p = Prompt::new(vec![shot("add two numbers", "def add(a, b):\n    return a + b")], "sub");
        assert_eq!(
            p.rendered,
            "### Requirement:\nadd two numbers\n### Code:\ndef add(a, b):\n    return a + b\n\n### Requirement:\nsub\n### Code:\n"
        );
    }

    #[test]
    fn zero_shot_parses() {
        let text = render(&[], "only the test");
        assert_eq!(text, "### Requirement:\nonly the test\n### Code:\n");
        assert_eq!(parse(&text), Some((vec![], "only the test".into())));
    }

    #[test]
    fn garbage_does_not_parse() {
        assert_eq!(parse("hello"), None);
        assert_eq!(parse("### Requirement:\nx\n"), None);
    }
}
