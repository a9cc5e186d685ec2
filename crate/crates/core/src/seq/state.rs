use crate::{Error, Result, TokenId};

/// Read-only view of the full sequence handed to a denoiser: prompt and
/// committed tokens in place, `mask_id` at every position still to decode.
#[derive(Debug, Clone, Copy)]
pub struct CanvasView<'a> {
    pub tokens: &'a [TokenId],
    pub prompt_len: usize,
    pub mask_id: TokenId,
}

impl<'a> CanvasView<'a> {
    pub fn is_masked(&self, pos: usize) -> bool {
        self.tokens[pos] == self.mask_id
    }

    /// Absolute positions of masked slots, left to right. Rows of the logit
    /// matrix a denoiser returns follow this order.
    pub fn masked_positions(&self) -> impl Iterator<Item = usize> + 'a {
        let mask = self.mask_id;
        self.tokens
            .iter()
            .enumerate()
            .filter(move |(_, &t)| t == mask)
            .map(|(i, _)| i)
    }

    pub fn masked_count(&self) -> usize {
        self.tokens.iter().filter(|&&t| t == self.mask_id).count()
    }

    /// End (exclusive) of the contiguous committed run starting at position 0.
    pub fn contiguous_end(&self) -> usize {
        self.tokens
            .iter()
            .position(|&t| t == self.mask_id)
            .unwrap_or(self.tokens.len())
    }
}

/// Frozen prefix followed by an all-mask active suffix.
///
/// The frozen part holds the prompt plus everything committed so far; it only
/// grows at its end, and the active suffix only shrinks from its front.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceState {
    tokens: Vec<TokenId>,
    frozen_len: usize,
    prompt_len: usize,
    mask_id: TokenId,
}

impl SequenceState {
    /// Pre-commit `prompt` and append `gen_len` masked positions. The prompt
    /// does not count toward `gen_len`.
    pub fn new(prompt: &[TokenId], gen_len: usize, mask_id: TokenId) -> Result<Self> {
        if prompt.contains(&mask_id) {
            return Err(Error::Contract("prompt contains the mask token".into()));
        }
        let mut tokens = Vec::with_capacity(prompt.len() + gen_len);
        tokens.extend_from_slice(prompt);
        tokens.resize(prompt.len() + gen_len, mask_id);
        Ok(SequenceState {
            tokens,
            frozen_len: prompt.len(),
            prompt_len: prompt.len(),
            mask_id,
        })
    }

    pub fn frozen(&self) -> &[TokenId] {
        &self.tokens[..self.frozen_len]
    }

    pub fn active(&self) -> &[TokenId] {
        &self.tokens[self.frozen_len..]
    }

    pub fn active_len(&self) -> usize {
        self.tokens.len() - self.frozen_len
    }

    pub fn total_len(&self) -> usize {
        self.tokens.len()
    }

    pub fn prompt_len(&self) -> usize {
        self.prompt_len
    }

    pub fn mask_id(&self) -> TokenId {
        self.mask_id
    }

    pub fn is_done(&self) -> bool {
        self.frozen_len == self.tokens.len()
    }

    /// Tokens committed after the prompt.
    pub fn generated(&self) -> &[TokenId] {
        &self.tokens[self.prompt_len..self.frozen_len]
    }

    pub fn view(&self) -> CanvasView<'_> {
        CanvasView {
            tokens: &self.tokens,
            prompt_len: self.prompt_len,
            mask_id: self.mask_id,
        }
    }

    /// Append `tokens` to the frozen prefix and drop as many slots from the
    /// front of the active suffix.
    pub fn commit_prefix(&mut self, tokens: &[TokenId]) -> Result<()> {
        let n = self.active_len();
        if tokens.is_empty() || tokens.len() > n {
            return Err(Error::Contract(format!(
                "commit of {} tokens with {} active",
                tokens.len(),
                n
            )));
        }
        if tokens.contains(&self.mask_id) {
            return Err(Error::Contract("committing the mask token".into()));
        }
        let end = self.frozen_len + tokens.len();
        self.tokens[self.frozen_len..end].copy_from_slice(tokens);
        self.frozen_len = end;
        Ok(())
    }
}

/// Committed-position bitmask used by the scattered baselines, which may
/// fill any masked slot in place.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScatterState {
    tokens: Vec<TokenId>,
    prompt_len: usize,
    masked: usize,
    mask_id: TokenId,
}

impl ScatterState {
    pub fn new(prompt: &[TokenId], gen_len: usize, mask_id: TokenId) -> Result<Self> {
        if prompt.contains(&mask_id) {
            return Err(Error::Contract("prompt contains the mask token".into()));
        }
        let mut tokens = Vec::with_capacity(prompt.len() + gen_len);
        tokens.extend_from_slice(prompt);
        tokens.resize(prompt.len() + gen_len, mask_id);
        Ok(ScatterState {
            tokens,
            prompt_len: prompt.len(),
            masked: gen_len,
            mask_id,
        })
    }

    pub fn masked_len(&self) -> usize {
        self.masked
    }

    pub fn committed_len(&self) -> usize {
        self.tokens.len() - self.masked
    }

    pub fn total_len(&self) -> usize {
        self.tokens.len()
    }

    pub fn prompt_len(&self) -> usize {
        self.prompt_len
    }

    pub fn is_done(&self) -> bool {
        self.masked == 0
    }

    pub fn generated(&self) -> &[TokenId] {
        &self.tokens[self.prompt_len..]
    }

    pub fn view(&self) -> CanvasView<'_> {
        CanvasView {
            tokens: &self.tokens,
            prompt_len: self.prompt_len,
            mask_id: self.mask_id,
        }
    }

    /// Fill each absolute position with its token. Every position must be
    /// currently masked.
    pub fn commit_at(&mut self, fills: &[(usize, TokenId)]) -> Result<()> {
        if fills.is_empty() {
            return Err(Error::Contract("empty scattered commit".into()));
        }
        let mut seen = std::collections::HashSet::with_capacity(fills.len());
        for &(pos, tok) in fills {
            if pos >= self.tokens.len() || self.tokens[pos] != self.mask_id || !seen.insert(pos) {
                return Err(Error::Contract(format!("position {pos} is not masked")));
            }
            if tok == self.mask_id {
                return Err(Error::Contract("committing the mask token".into()));
            }
        }
        for &(pos, tok) in fills {
            self.tokens[pos] = tok;
        }
        self.masked -= fills.len();
        Ok(())
    }
}
