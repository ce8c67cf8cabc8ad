use crate::error::{Error, Result};
use crate::record::{choice_letter, Scenario};

pub const SYSTEM_LINE: &str = "You will answer the user's query.";

/// A rendered prompt: optional system message plus the user message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub system: Option<String>,
    pub user: String,
}

impl Prompt {
    /// Full prompt text, system line first.
    pub fn render(&self) -> String {
        match &self.system {
            Some(s) => format!("{s}\n{}", self.user),
            None => self.user.clone(),
        }
    }
}

pub fn render_perturbation_prompt(q0: &str, n: usize) -> Result<Prompt> {
    if n < 1 {
        return Err(Error::validation("perturbation prompt needs n >= 1"));
    }
    Ok(Prompt {
        system: None,
        user: format!("Rewrite the query in {n} radically different ways.\nQuery: {q0}"),
    })
}

/// Output-generator prompt for one variant. Choices are enumerated in their
/// stored order and never rewritten.
pub fn render_output_prompt(
    q: &str,
    scenario: Scenario,
    context: Option<&str>,
    choices: Option<&[String]>,
) -> Result<Prompt> {
    let user = match scenario {
        Scenario::Extractive => {
            let c = context.ok_or_else(|| Error::validation("extractive prompt needs a context"))?;
            format!("Context: {c}\nQuery: {q}\nAnswer:")
        }
        Scenario::MultipleChoice => {
            let choices = choices.ok_or_else(|| Error::validation("multiple-choice prompt needs choices"))?;
            if choices.is_empty() {
                return Err(Error::validation("multiple-choice prompt needs choices"));
            }
            let mut s = format!("Query: {q}\n");
            for (i, k) in choices.iter().enumerate() {
                s.push_str(&format!("{}) {k}\n", choice_letter(i)));
            }
            s.push_str("Answer:");
            s
        }
        Scenario::Abstractive => format!("Query: {q}\nShort Answer:"),
    };
    Ok(Prompt {
        system: Some(SYSTEM_LINE.to_string()),
        user,
    })
}

/// Scenario-tagged classifier input: `<<[TAG] q0>>`.
pub fn encode_with_scenario(q0: &str, scenario: Scenario) -> String {
    format!("<<[{}] {q0}>>", scenario.tag())
}
