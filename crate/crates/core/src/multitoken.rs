//! Scoring answers whose strings span several tokens.
//!
//! Two approximations to the chain-rule sequence probability are offered:
//! the first token alone, and a bag of tokens where every token of an
//! answer's minimal distinguishing prefix is scored against the prompt alone.

use crate::error::{Error, Result};
use crate::math;
use crate::model::{AnswerSet, ConditionalModel, Instance, SupportContext};

/// A language model seen token by token.
pub trait TokenLevelModel: Send + Sync {
    fn vocabulary(&self) -> &[String];

    /// Normalized next-token log-probabilities over the vocabulary, given the
    /// prompt built from `(x, ctx)` followed by `emitted` answer tokens.
    fn next_token_log_probs(&self, x: &Instance, ctx: &SupportContext<'_>, emitted: &[String]) -> Result<Vec<f64>>;

    fn token_id(&self, token: &str) -> Result<usize> {
        self.vocabulary()
            .iter()
            .position(|t| t == token)
            .ok_or_else(|| Error::UnknownToken(token.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TokenizedAnswerSet {
    sequences: Vec<Vec<String>>,
    prefix_lengths: Vec<usize>,
    shadowed: Vec<(usize, usize)>,
}

impl TokenizedAnswerSet {
    pub fn new(sequences: Vec<Vec<String>>) -> Result<Self> {
        if sequences.len() < 2 {
            return Err(Error::InvalidAnswerSet("need at least two answers".into()));
        }
        if let Some(k) = sequences.iter().position(Vec::is_empty) {
            return Err(Error::InvalidAnswerSet(format!("answer {k} has no tokens")));
        }
        let (prefix_lengths, shadowed) = minimal_distinguishing_prefixes(&sequences)?;
        Ok(TokenizedAnswerSet { sequences, prefix_lengths, shadowed })
    }

    /// Uses each answer's `tokens`, or its label as a single token.
    pub fn from_answer_set(answers: &AnswerSet) -> Result<Self> {
        Self::new(
            answers
                .answers()
                .iter()
                .map(|a| a.tokens.clone().unwrap_or_else(|| vec![a.label.clone()]))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn sequence(&self, k: usize) -> &[String] {
        &self.sequences[k]
    }

    pub fn prefix(&self, k: usize) -> &[String] {
        &self.sequences[k][..self.prefix_lengths[k]]
    }

    pub fn prefix_lengths(&self) -> &[usize] {
        &self.prefix_lengths
    }

    /// Pairs `(a, b)` where answer `a`'s whole sequence is a proper prefix of `b`'s.
    pub fn shadowed(&self) -> &[(usize, usize)] {
        &self.shadowed
    }
}

/// Shortest prefix length per answer that no other answer shares, capped at
/// the sequence length. Also returns the prefix-shadow pairs, which get a
/// warning: a shadowed answer cannot be told apart from the longer one by its
/// own tokens.
pub fn minimal_distinguishing_prefixes(sequences: &[Vec<String>]) -> Result<(Vec<usize>, Vec<(usize, usize)>)> {
    let mut lengths = Vec::with_capacity(sequences.len());
    let mut shadowed = Vec::new();
    for (a, sa) in sequences.iter().enumerate() {
        let mut need = 1;
        for (b, sb) in sequences.iter().enumerate() {
            if a == b {
                continue;
            }
            if sa == sb {
                return Err(Error::DuplicateTokenSequence(a.min(b), a.max(b)));
            }
            let common = sa.iter().zip(sb).take_while(|(x, y)| x == y).count();
            if common == sa.len() {
                log::warn!("PREFIX_SHADOW: answer {a} is a prefix of answer {b}");
                shadowed.push((a, b));
            }
            need = need.max(common + 1);
        }
        lengths.push(need.min(sa.len()));
    }
    Ok((lengths, shadowed))
}

fn renormalize(mut scores: Vec<f64>) -> Vec<f64> {
    math::log_softmax_in_place(&mut scores);
    scores
}

/// First-token log-probabilities of every answer, before renormalization.
pub fn first_token_scores<T: TokenLevelModel + ?Sized>(
    tlm: &T,
    answers: &TokenizedAnswerSet,
    x: &Instance,
    ctx: &SupportContext<'_>,
) -> Result<Vec<f64>> {
    for a in 0..answers.len() {
        for b in (a + 1)..answers.len() {
            if answers.sequence(a)[0] == answers.sequence(b)[0] {
                return Err(Error::FirstTokenAmbiguous(a, b));
            }
        }
    }
    let lp = tlm.next_token_log_probs(x, ctx, &[])?;
    (0..answers.len()).map(|k| Ok(lp[tlm.token_id(&answers.sequence(k)[0])?])).collect()
}

/// First-token approximation, renormalized over the answers.
pub fn first_token_logprob<T: TokenLevelModel + ?Sized>(
    tlm: &T,
    answers: &TokenizedAnswerSet,
    answer: usize,
    x: &Instance,
    ctx: &SupportContext<'_>,
) -> Result<f64> {
    check_answer(answers, answer)?;
    Ok(renormalize(first_token_scores(tlm, answers, x, ctx)?)[answer])
}

/// Bag-of-tokens scores before renormalization: the sum of the log-probs of
/// the minimal distinguishing prefix tokens, each conditioned on the prompt only.
pub fn bot_scores<T: TokenLevelModel + ?Sized>(
    tlm: &T,
    answers: &TokenizedAnswerSet,
    x: &Instance,
    ctx: &SupportContext<'_>,
) -> Result<Vec<f64>> {
    let lp = tlm.next_token_log_probs(x, ctx, &[])?;
    (0..answers.len())
        .map(|k| answers.prefix(k).iter().map(|t| Ok(lp[tlm.token_id(t)?])).sum())
        .collect()
}

/// Bag-of-tokens approximation, renormalized over the answers after summation.
pub fn bot_logprob<T: TokenLevelModel + ?Sized>(
    tlm: &T,
    answers: &TokenizedAnswerSet,
    answer: usize,
    x: &Instance,
    ctx: &SupportContext<'_>,
) -> Result<f64> {
    check_answer(answers, answer)?;
    Ok(renormalize(bot_scores(tlm, answers, x, ctx)?)[answer])
}

/// Exact chain-rule log-probabilities of the full token sequences.
pub fn sequence_scores<T: TokenLevelModel + ?Sized>(
    tlm: &T,
    answers: &TokenizedAnswerSet,
    x: &Instance,
    ctx: &SupportContext<'_>,
) -> Result<Vec<f64>> {
    (0..answers.len())
        .map(|k| {
            let seq = answers.sequence(k);
            let mut total = 0.0;
            for i in 0..seq.len() {
                let lp = tlm.next_token_log_probs(x, ctx, &seq[..i])?;
                total += lp[tlm.token_id(&seq[i])?];
            }
            Ok(total)
        })
        .collect()
}

fn check_answer(answers: &TokenizedAnswerSet, answer: usize) -> Result<()> {
    if answer >= answers.len() {
        return Err(Error::AnswerOutOfRange { index: answer, num_answers: answers.len() });
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelScoring {
    FirstToken,
    BagOfTokens,
    FullSequence,
}

/// Exposes a token-level model as a [`ConditionalModel`] over the answer set.
pub struct TokenLevelAdapter<'a, T: ?Sized> {
    tlm: &'a T,
    answers: TokenizedAnswerSet,
    scoring: LabelScoring,
}

impl<'a, T: TokenLevelModel + ?Sized> TokenLevelAdapter<'a, T> {
    pub fn new(tlm: &'a T, answers: TokenizedAnswerSet, scoring: LabelScoring) -> Self {
        TokenLevelAdapter { tlm, answers, scoring }
    }
}

impl<T: TokenLevelModel + ?Sized> ConditionalModel for TokenLevelAdapter<'_, T> {
    fn num_answers(&self) -> usize {
        self.answers.len()
    }

    fn answer_log_probs(&self, x: &Instance, ctx: &SupportContext<'_>) -> Result<Vec<f64>> {
        self.check_context(ctx)?;
        match self.scoring {
            LabelScoring::FirstToken => first_token_scores(self.tlm, &self.answers, x, ctx),
            LabelScoring::BagOfTokens => bot_scores(self.tlm, &self.answers, x, ctx),
            LabelScoring::FullSequence => sequence_scores(self.tlm, &self.answers, x, ctx),
        }
    }
}
