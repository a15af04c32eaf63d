//! The student model: a policy plus the closed vocabulary it speaks.
//!
//! Bundles tokenization, sampling, greedy decoding, and answer extraction so
//! that curation, dialogue rollouts, and evaluation all interact with the
//! policy through one text-level surface.

use rand::Rng;

use crate::policy::{PolicyError, PolicyParameters, TokenSequence, Vocabulary};
use crate::synth_env;

/// Longest response the student is allowed to emit. The canonical response
/// ("take x op y gives v <eos>") is 7 tokens; the cap leaves headroom
/// without letting a broken policy ramble.
pub const MAX_RESPONSE_TOKENS: usize = 12;

/// A policy paired with its vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentModel {
    pub params: PolicyParameters,
    pub vocab: Vocabulary,
}

impl StudentModel {
    pub fn new(params: PolicyParameters, vocab: Vocabulary) -> Self {
        assert_eq!(params.vocab_size(), vocab.len(), "policy and vocabulary sizes differ");
        Self { params, vocab }
    }

    /// Samples a response to the tokenized context, returning the response
    /// tokens and their per-token log-probabilities under this model.
    pub fn sample_response<R: Rng>(
        &self,
        context: &TokenSequence,
        rng: &mut R,
    ) -> Result<(TokenSequence, Vec<f64>), PolicyError> {
        let response = self.params.sample(context, self.vocab.eos(), rng, MAX_RESPONSE_TOKENS);
        let logprobs = self.params.token_log_probs(context, &response)?;
        Ok((response, logprobs))
    }

    /// Greedy-decodes a response to a text context.
    pub fn greedy_response_text(&self, context_text: &str) -> Result<String, PolicyError> {
        let context = self.vocab.encode(context_text)?;
        let response = self.params.greedy(&context, self.vocab.eos(), MAX_RESPONSE_TOKENS);
        Ok(self.vocab.decode(&response))
    }

    /// Greedy decode followed by answer extraction.
    pub fn greedy_answer(&self, context_text: &str) -> Result<String, PolicyError> {
        Ok(extract_answer(&self.greedy_response_text(context_text)?))
    }
}

/// Pulls the student's short answer out of a free-form response: the last
/// whitespace token that parses as an integer. Empty string when none does.
pub fn extract_answer(response_text: &str) -> String {
    response_text
        .split_whitespace()
        .rev()
        .find(|t| t.parse::<i64>().is_ok())
        .unwrap_or("")
        .to_string()
}

/// The canonical ground-truth response for a question carrying an expression
/// tail: `take {x} {opword} {y} gives {v} <eos>`. This is the format the
/// scripted teacher emits and the student is trained to imitate.
pub fn canonical_response_for(question: &str) -> Option<String> {
    let (x, w, y) = synth_env::parse_expression_tail(question)?;
    let v = synth_env::eval_opword(x, &w, y)?;
    Some(format!("take {x} {w} {y} gives {v} <eos>"))
}
