//! Creative-writing structural checks. No quality judgment is made.

use regex::RegexBuilder;

use super::Verdict;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CreativeVariant {
    /// Expand each word into a sentence containing it.
    Words,
    /// Expand each sentence into a paragraph that starts with it.
    Sentences,
}

pub fn contains_word(text: &str, word: &str) -> bool {
    let pattern = format!(r"\b{}\b", regex::escape(word));
    RegexBuilder::new(&pattern)
        .case_insensitive(true)
        .build()
        .map(|re| re.is_match(text))
        .unwrap_or(false)
}

pub fn paragraphs(text: &str) -> Vec<&str> {
    text.split("\n\n").map(str::trim).filter(|p| !p.is_empty()).collect()
}

pub fn check_creative(variant: CreativeVariant, items: &[String], output: &str) -> Verdict {
    if output.trim().is_empty() {
        return Verdict::reject("output is empty");
    }
    let missing: Vec<&str> = match variant {
        CreativeVariant::Words => items
            .iter()
            .filter(|w| !contains_word(output, w))
            .map(String::as_str)
            .collect(),
        CreativeVariant::Sentences => {
            let paras = paragraphs(output);
            items
                .iter()
                .filter(|s| !paras.iter().any(|p| p.starts_with(s.trim())))
                .map(String::as_str)
                .collect()
        }
    };
    if missing.is_empty() {
        Verdict::accept()
    } else {
        Verdict::reject(format!("missing: {}", missing.join(", ")))
    }
}
