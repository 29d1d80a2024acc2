//! Built-in prompt sets (the 15 sentiment and 20 topic prompts used across
//! the experiments) plus a loader for user prompt files (UTF-8, one prompt
//! per line).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub name: String,
    pub prompts: Vec<String>,
}

const SENTIMENT15: [&str; 15] = [
    "Once upon a time",
    "The book",
    "The chicken",
    "The city",
    "The country",
    "The horse",
    "The lake",
    "The last time",
    "The movie",
    "The painting",
    "The pizza",
    "The potato",
    "The president of the country",
    "The road",
    "The year is 1910.",
];

const TOPIC20: [&str; 20] = [
    "In summary",
    "This essay discusses",
    "Views on",
    "The connection",
    "Foundational to this is",
    "To review,",
    "In brief,",
    "An illustration of",
    "Furthermore,",
    "The central theme",
    "To conclude,",
    "The key aspect",
    "Prior to this",
    "Emphasised are",
    "To summarise",
    "The relationship",
    "More importantly,",
    "It has been shown",
    "The issue focused on",
    "In this essay",
];

pub const KNOWN_SETS: [&str; 2] = ["sentiment15", "topic20"];

/// The named built-in prompt set, verbatim.
pub fn builtin_prompts(name: &str) -> Result<PromptSet> {
    let prompts: &[&str] = match name {
        "sentiment15" => &SENTIMENT15,
        "topic20" => &TOPIC20,
        _ => {
            return Err(Error::config(format!(
                "unknown prompt set {name:?}; known sets: {}",
                KNOWN_SETS.join(", ")
            )))
        }
    };
    Ok(PromptSet {
        name: name.to_string(),
        prompts: prompts.iter().map(|s| s.to_string()).collect(),
    })
}

/// Load a custom prompt set: one prompt per line, blank lines skipped.
pub fn load_prompt_file(path: &Path) -> Result<PromptSet> {
    let content = fs::read_to_string(path)?;
    let prompts: Vec<String> = content
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    if prompts.is_empty() {
        return Err(Error::config(format!(
            "prompt file {} contains no prompts",
            path.display()
        )));
    }
    Ok(PromptSet {
        name: "custom".to_string(),
        prompts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sentiment_set_has_15_starting_with_once_upon_a_time() {
        let set = builtin_prompts("sentiment15").unwrap();
        assert_eq!(set.prompts.len(), 15);
        assert_eq!(set.prompts[0], "Once upon a time");
    }

    #[test]
    fn topic_set_has_20_starting_with_in_summary() {
        let set = builtin_prompts("topic20").unwrap();
        assert_eq!(set.prompts.len(), 20);
        assert_eq!(set.prompts[0], "In summary");
    }

    #[test]
    fn unknown_set_errors_listing_known_names() {
        let err = builtin_prompts("nope").unwrap_err().to_string();
        assert!(err.contains("sentiment15") && err.contains("topic20"));
    }
}
