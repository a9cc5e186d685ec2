//! Word-level toy tokenizer.
//!
//! A vocabulary is built from a corpus by cutting each whitespace-separated
//! chunk into runs of word characters (alphanumerics and `'`) and single
//! punctuation characters, so every delimiter is a token on its own. Newlines
//! are tokens too. Tokenization is greedy longest-match against the
//! vocabulary inside each chunk.
//!
//! Detokenization re-inserts single spaces between tokens, except before
//! closing punctuation, after opening punctuation, and around newlines. Text
//! written in that canonical spacing round-trips exactly.

use std::collections::{HashMap, HashSet};

use crate::{Error, Result, TokenId};

/// Surface string of the reserved mask token.
pub const MASK_SURFACE: &str = "[MASK]";

/// Delimiters used for boundary snapping when none are configured.
pub const DEFAULT_DELIMITERS: [&str; 10] = [".", ",", ";", ":", "!", "?", "\n", ")", "]", "}"];

const CLOSING: [&str; 10] = [".", ",", ";", ":", "!", "?", ")", "]", "}", "%"];
const OPENING: [&str; 4] = ["(", "[", "{", "$"];

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '\''
}

#[derive(Debug, Clone)]
pub struct Tokenizer {
    vocab: Vec<String>,
    index: HashMap<String, TokenId>,
    mask_id: TokenId,
    delimiter_flags: Vec<bool>,
    max_chars: usize,
}

impl Tokenizer {
    /// Build a tokenizer whose regular ids are `surfaces` in order. The mask
    /// token is appended after them. Duplicate surfaces are rejected.
    pub fn from_vocab<I, S>(surfaces: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vec::new();
        let mut index = HashMap::new();
        for s in surfaces {
            let s = s.into();
            if s.is_empty() || s == MASK_SURFACE {
                return Err(Error::config("vocab", format!("reserved or empty surface {s:?}")));
            }
            if index.insert(s.clone(), vocab.len() as TokenId).is_some() {
                return Err(Error::config("vocab", format!("duplicate surface {s:?}")));
            }
            vocab.push(s);
        }
        if vocab.len() < 2 {
            return Err(Error::VocabTooSmall(vocab.len()));
        }
        let mask_id = vocab.len() as TokenId;
        let max_chars = vocab.iter().map(|s| s.chars().count()).max().unwrap_or(1);
        let mut tok = Tokenizer {
            delimiter_flags: vec![false; vocab.len() + 1],
            vocab,
            index,
            mask_id,
            max_chars,
        };
        tok.set_delimiters(DEFAULT_DELIMITERS.iter().copied())?;
        Ok(tok)
    }

    /// Build the vocabulary from corpus lines in order of first appearance.
    /// A newline token is always present.
    pub fn from_corpus<'a, I>(lines: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut seen = HashSet::new();
        let mut order = Vec::new();
        let mut push = |s: String| {
            if seen.insert(s.clone()) {
                order.push(s);
            }
        };
        let mut any = false;
        for line in lines {
            for chunk in line.split_whitespace() {
                any = true;
                let mut word = String::new();
                for c in chunk.chars() {
                    if is_word_char(c) {
                        word.push(c);
                    } else {
                        if !word.is_empty() {
                            push(std::mem::take(&mut word));
                        }
                        push(c.to_string());
                    }
                }
                if !word.is_empty() {
                    push(word);
                }
            }
        }
        if !any {
            return Err(Error::EmptyCorpus);
        }
        push("\n".to_string());
        Self::from_vocab(order)
    }

    /// Replace the delimiter set. Surfaces absent from the vocabulary are
    /// skipped; the mask surface is rejected.
    pub fn set_delimiters<I, S>(&mut self, surfaces: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut flags = vec![false; self.vocab.len() + 1];
        for s in surfaces {
            let s = s.as_ref();
            if s == MASK_SURFACE {
                return Err(Error::config("delimiters", "the mask token cannot be a delimiter"));
            }
            if let Some(&id) = self.index.get(s) {
                flags[id as usize] = true;
            }
        }
        self.delimiter_flags = flags;
        Ok(())
    }

    /// Number of regular (predictable) tokens; the mask id equals this value.
    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn mask_id(&self) -> TokenId {
        self.mask_id
    }

    pub fn is_delimiter(&self, id: TokenId) -> bool {
        self.delimiter_flags.get(id as usize).copied().unwrap_or(false)
    }

    pub fn delimiter_flags(&self) -> &[bool] {
        &self.delimiter_flags
    }

    pub fn id(&self, surface: &str) -> Option<TokenId> {
        self.index.get(surface).copied()
    }

    pub fn surface(&self, id: TokenId) -> Option<&str> {
        if id == self.mask_id {
            Some(MASK_SURFACE)
        } else {
            self.vocab.get(id as usize).map(String::as_str)
        }
    }

    pub fn tokenize(&self, text: &str) -> Result<Vec<TokenId>> {
        let chars: Vec<char> = text.chars().collect();
        let mut out = Vec::new();
        let mut i = 0;
        let mut buf = String::new();
        while i < chars.len() {
            let c = chars[i];
            if c == '\n' {
                out.push(self.lookup("\n", i)?);
                i += 1;
                continue;
            }
            if c.is_whitespace() {
                i += 1;
                continue;
            }
            let end = (i..chars.len())
                .find(|&j| chars[j].is_whitespace())
                .unwrap_or(chars.len());
            while i < end {
                let longest = self.max_chars.min(end - i);
                let mut matched = None;
                for len in (1..=longest).rev() {
                    buf.clear();
                    buf.extend(&chars[i..i + len]);
                    if let Some(&id) = self.index.get(buf.as_str()) {
                        matched = Some((id, len));
                        break;
                    }
                }
                let (id, len) = matched.ok_or_else(|| Error::UnknownSymbol {
                    symbol: chars[i].to_string(),
                    position: i,
                })?;
                out.push(id);
                i += len;
            }
        }
        Ok(out)
    }

    fn lookup(&self, surface: &str, position: usize) -> Result<TokenId> {
        self.index.get(surface).copied().ok_or_else(|| Error::UnknownSymbol {
            symbol: surface.to_string(),
            position,
        })
    }

    /// Render ids back to text. The mask token renders as `[MASK]`; ids
    /// outside the vocabulary render as `<unk:ID>`.
    pub fn detokenize(&self, ids: &[TokenId]) -> String {
        let mut out = String::new();
        // (previous was a newline, previous was opening punctuation)
        let mut prev: Option<(bool, bool)> = None;
        for &id in ids {
            let unk;
            let s = match self.surface(id) {
                Some(s) => s,
                None => {
                    unk = format!("<unk:{id}>");
                    unk.as_str()
                }
            };
            let glue = match prev {
                None => true,
                Some((after_newline, after_opening)) => {
                    after_newline || after_opening || s == "\n" || CLOSING.contains(&s)
                }
            };
            if !glue {
                out.push(' ');
            }
            out.push_str(s);
            prev = Some((s == "\n", OPENING.contains(&s)));
        }
        out
    }
}
