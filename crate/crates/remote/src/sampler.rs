use jointinf_core::answer_parse::AnswerParser;
use jointinf_core::uicl::{AnswerSampler, SampledAnswer};
use jointinf_core::{AnswerSet, Error, Instance, SupportContext};

use crate::client::ChatClient;
use crate::error::Result;
use crate::template::{render_prompt, PromptTemplate};

/// Answers by rendering a prompt, asking the endpoint, and parsing the reply.
pub struct RemoteSampler<'a> {
    client: &'a ChatClient,
    template: &'a PromptTemplate,
    answers: &'a AnswerSet,
    parser: AnswerParser,
}

impl<'a> RemoteSampler<'a> {
    pub fn new(client: &'a ChatClient, template: &'a PromptTemplate, answers: &'a AnswerSet) -> Result<Self> {
        template.validate()?;
        template.check_round_trip(answers)?;
        Ok(RemoteSampler { client, template, answers, parser: template.parser()? })
    }

    /// One draw: `Rejected` when the reply names no answer.
    pub fn remote_sample_answer(&self, x: &Instance, ctx: &SupportContext<'_>, rng_tag: u64) -> Result<SampledAnswer> {
        let prompt = render_prompt(self.template, self.answers, x, ctx)?;
        let text = self.client.complete(self.template.system_prompt.as_deref(), &prompt, rng_tag)?;
        Ok(match self.parser.parse(&text, self.answers) {
            Some(index) => SampledAnswer::Answer { index, raw: Some(text) },
            None => SampledAnswer::Rejected { raw: text },
        })
    }
}

impl AnswerSampler for RemoteSampler<'_> {
    fn answer_set(&self) -> &AnswerSet {
        self.answers
    }

    fn sample(&self, x: &Instance, ctx: &SupportContext<'_>, draw: u64) -> jointinf_core::Result<SampledAnswer> {
        self.remote_sample_answer(x, ctx, draw).map_err(|e| Error::Sampler(e.to_string()))
    }
}
