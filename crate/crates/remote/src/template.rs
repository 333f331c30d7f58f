//! Prompt construction: support examples in context order, then the query
//! with its answer slot left open.

use serde::{Deserialize, Serialize};

use jointinf_core::answer_parse::{AnswerParser, ParseRule};
use jointinf_core::{AnswerSet, Instance, Payload, SupportContext};

use crate::error::{RemoteError, Result};

pub const INPUT: &str = "{input}";
pub const LABEL: &str = "{label}";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    /// Must contain `{input}`.
    pub instance_pattern: String,
    /// Must contain `{label}`; the text before it opens the query's answer slot.
    pub answer_pattern: String,
    #[serde(default = "default_separator")]
    pub separator: String,
    #[serde(default)]
    pub system_prompt: Option<String>,
    #[serde(default = "default_rule")]
    pub answer_parser: ParseRule,
}

fn default_separator() -> String {
    "\n\n".into()
}

fn default_rule() -> ParseRule {
    ParseRule::ExactMatch
}

impl PromptTemplate {
    pub fn new(instance_pattern: &str, answer_pattern: &str) -> Result<Self> {
        let t = PromptTemplate {
            instance_pattern: instance_pattern.into(),
            answer_pattern: answer_pattern.into(),
            separator: default_separator(),
            system_prompt: None,
            answer_parser: default_rule(),
        };
        t.validate()?;
        Ok(t)
    }

    /// Templates shipped with the crate, by name.
    pub fn builtin(name: &str) -> Result<Self> {
        let (instance, answer, parser, system) = match name {
            "sst2" => ("Review: {input}\n", "Sentiment: {label}", ParseRule::ExactMatch, None),
            "agnews" => ("Article: {input}\n", "Topic: {label}", ParseRule::ExactMatch, None),
            "trec" => ("Question: {input}\n", "Answer type: {label}", ParseRule::ExactMatch, None),
            "letters" => (
                "{input}\n",
                "Answer: {label}",
                ParseRule::LastLine { prefix: "Answer:".into() },
                Some("Reply with the letter of the correct option on the last line, as `Answer: X`."),
            ),
            "features" => ("Input: {input}\n", "Label: {label}", ParseRule::ExactMatch, None),
            _ => return Err(RemoteError::UnknownTemplate(name.into())),
        };
        Ok(PromptTemplate {
            instance_pattern: instance.into(),
            answer_pattern: answer.into(),
            separator: default_separator(),
            system_prompt: system.map(str::to_string),
            answer_parser: parser,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !self.instance_pattern.contains(INPUT) {
            return Err(RemoteError::MissingPlaceholder { template: self.instance_pattern.clone(), placeholder: INPUT });
        }
        if !self.answer_pattern.contains(LABEL) {
            return Err(RemoteError::MissingPlaceholder { template: self.answer_pattern.clone(), placeholder: LABEL });
        }
        Ok(())
    }

    pub fn parser(&self) -> Result<AnswerParser> {
        Ok(AnswerParser::new(self.answer_parser.clone())?)
    }

    /// Checks that rendering each answer and parsing it back recovers it.
    pub fn check_round_trip(&self, answers: &AnswerSet) -> Result<()> {
        let parser = self.parser()?;
        for (k, label) in answers.labels().enumerate() {
            if parser.parse(&self.render_answer(label), answers) != Some(k) {
                return Err(RemoteError::TemplateRoundTrip(label.into()));
            }
        }
        Ok(())
    }

    pub fn render_answer(&self, label: &str) -> String {
        self.answer_pattern.replace(LABEL, label)
    }

    fn render_instance(&self, x: &Instance) -> String {
        let input = match &x.payload {
            Payload::Text(t) => t.clone(),
            Payload::Features(f) => f.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(", "),
        };
        self.instance_pattern.replace(INPUT, &input)
    }

    fn open_slot(&self) -> &str {
        let cut = self.answer_pattern.find(LABEL).unwrap_or(self.answer_pattern.len());
        self.answer_pattern[..cut].trim_end()
    }
}

/// The user message for querying `x` after the support examples in `ctx`.
pub fn render_prompt(template: &PromptTemplate, answers: &AnswerSet, x: &Instance, ctx: &SupportContext<'_>) -> Result<String> {
    template.validate()?;
    let mut blocks = Vec::with_capacity(ctx.len() + 1);
    for ex in ctx.iter() {
        answers.check_index(ex.answer)?;
        blocks.push(format!("{}{}", template.render_instance(ex.instance), template.render_answer(answers.label(ex.answer))));
    }
    blocks.push(format!("{}{}", template.render_instance(x), template.open_slot()));
    Ok(blocks.join(&template.separator))
}
