//! Bidirectional add-k n-gram denoiser.
//!
//! Two count tables are fitted on the corpus: a forward model
//! `P(v | previous n-1 tokens)` and a backward model `P(v | next n-1 tokens)`.
//! Each training line is wrapped in newline tokens, and a context window is
//! cut at the first newline it meets, so line starts and ends look the same
//! at training and prediction time.
//!
//! Prediction fills masked slots left to right with forward argmaxes, then
//! scores each slot by `ln(lambda * P_fwd + (1 - lambda) * P_bwd)` where the
//! backward context reads committed tokens and forward fills to the right.
//! A backward window that would run past the end of the sequence contributes
//! the uniform distribution.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::Denoiser;
use crate::logits::LogitMatrix;
use crate::seq::{CanvasView, Tokenizer};
use crate::{Error, Result, TokenId};

/// Padding symbol beyond a line boundary.
const PAD: TokenId = TokenId::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NGramParams {
    pub order: usize,
    pub k: f64,
    pub lambda: f64,
}

impl Default for NGramParams {
    fn default() -> Self {
        NGramParams {
            order: 3,
            k: 0.5,
            lambda: 0.5,
        }
    }
}

impl NGramParams {
    pub fn validate(&self) -> Result<()> {
        if self.order < 1 {
            return Err(Error::config("ngram-order", "must be at least 1"));
        }
        if !(self.k > 0.0 && self.k.is_finite()) {
            return Err(Error::config("ngram-k", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::config("ngram-lambda", format!("{} not in [0, 1]", self.lambda)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
struct Counts {
    total: u64,
    next: HashMap<TokenId, u64>,
}

#[derive(Debug, Clone)]
pub struct NGramDenoiser {
    params: NGramParams,
    vocab_size: usize,
    newline: TokenId,
    forward: HashMap<Vec<TokenId>, Counts>,
    backward: HashMap<Vec<TokenId>, Counts>,
}

impl NGramDenoiser {
    pub fn fit<'a, I>(tokenizer: &Tokenizer, lines: I, params: NGramParams) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        params.validate()?;
        let newline = tokenizer
            .id("\n")
            .ok_or_else(|| Error::config("corpus", "tokenizer has no newline token"))?;
        let mut model = NGramDenoiser {
            params,
            vocab_size: tokenizer.vocab_size(),
            newline,
            forward: HashMap::new(),
            backward: HashMap::new(),
        };
        let mut any = false;
        for line in lines {
            let ids = tokenizer.tokenize(line)?;
            if ids.is_empty() {
                continue;
            }
            any = true;
            let mut seq = Vec::with_capacity(ids.len() + 2);
            seq.push(newline);
            seq.extend(ids);
            seq.push(newline);
            for i in 0..seq.len() {
                let fwd = model.context(&seq, i, Direction::Forward, None);
                bump(&mut model.forward, fwd, seq[i]);
                let bwd = model.context(&seq, i, Direction::Backward, None);
                bump(&mut model.backward, bwd, seq[i]);
            }
        }
        if !any {
            return Err(Error::EmptyCorpus);
        }
        Ok(model)
    }

    pub fn params(&self) -> &NGramParams {
        &self.params
    }

    /// Context of length `order - 1` around index `i` of `seq`, nearest token
    /// first. Positions past a newline or past the slice become `PAD`.
    /// `fills` overrides masked entries.
    fn context(
        &self,
        seq: &[TokenId],
        i: usize,
        dir: Direction,
        fills: Option<(&[Option<TokenId>], TokenId)>,
    ) -> Vec<TokenId> {
        let width = self.params.order - 1;
        let mut ctx = Vec::with_capacity(width);
        let mut cut = false;
        for step in 1..=width {
            let j = match dir {
                Direction::Forward => i.checked_sub(step),
                Direction::Backward => Some(i + step).filter(|&j| j < seq.len()),
            };
            let tok = match j {
                Some(j) if !cut => {
                    let t = seq[j];
                    match fills {
                        Some((f, mask)) if t == mask => f[j].unwrap_or(PAD),
                        _ => t,
                    }
                }
                _ => PAD,
            };
            if tok == self.newline {
                cut = true;
            }
            ctx.push(tok);
        }
        ctx
    }

    fn distribution(&self, table: &HashMap<Vec<TokenId>, Counts>, ctx: &[TokenId], out: &mut [f64]) {
        let v = self.vocab_size as f64;
        let k = self.params.k;
        match table.get(ctx) {
            Some(c) => {
                let denom = c.total as f64 + k * v;
                out.fill(k / denom);
                for (&tok, &n) in &c.next {
                    out[tok as usize] = (n as f64 + k) / denom;
                }
            }
            None => out.fill(1.0 / v),
        }
    }

    /// Forward conditional `P(v | ctx)`, `ctx` nearest token first.
    pub fn forward_prob(&self, ctx: &[TokenId], v: TokenId) -> f64 {
        let mut buf = vec![0.0; self.vocab_size];
        self.distribution(&self.forward, ctx, &mut buf);
        buf[v as usize]
    }

    /// Full forward distribution for `ctx` (nearest token first).
    pub fn forward_distribution(&self, ctx: &[TokenId]) -> Vec<f64> {
        let mut buf = vec![0.0; self.vocab_size];
        self.distribution(&self.forward, ctx, &mut buf);
        buf
    }

    /// Forward contexts observed in training.
    pub fn forward_contexts(&self) -> impl Iterator<Item = &[TokenId]> {
        self.forward.keys().map(Vec::as_slice)
    }

    /// Per-token perplexity of `tokens` under the forward model, with
    /// `prefix` as left context.
    pub fn perplexity(&self, prefix: &[TokenId], tokens: &[TokenId]) -> f64 {
        if tokens.is_empty() {
            return f64::NAN;
        }
        let mut seq = Vec::with_capacity(prefix.len() + tokens.len() + 1);
        seq.push(self.newline);
        seq.extend_from_slice(prefix);
        seq.extend_from_slice(tokens);
        let start = 1 + prefix.len();
        let mut buf = vec![0.0; self.vocab_size];
        let mut nll = 0.0;
        for i in start..seq.len() {
            let ctx = self.context(&seq, i, Direction::Forward, None);
            self.distribution(&self.forward, &ctx, &mut buf);
            let p = buf.get(seq[i] as usize).copied().unwrap_or(0.0);
            nll -= p.ln();
        }
        (nll / tokens.len() as f64).exp()
    }

    /// Whether the backward window at `pos` reaches past the sequence end
    /// before meeting a newline.
    fn runs_off_end(&self, seq: &[TokenId], pos: usize, fills: &[Option<TokenId>], mask: TokenId) -> bool {
        for j in pos + 1..pos + self.params.order {
            let Some(&t) = seq.get(j) else {
                return true;
            };
            let t = if t == mask { fills[j].unwrap_or(PAD) } else { t };
            if t == self.newline {
                return false;
            }
        }
        false
    }
}

#[derive(Debug, Clone, Copy)]
enum Direction {
    Forward,
    Backward,
}

fn bump(table: &mut HashMap<Vec<TokenId>, Counts>, ctx: Vec<TokenId>, tok: TokenId) {
    let c = table.entry(ctx).or_default();
    c.total += 1;
    *c.next.entry(tok).or_insert(0) += 1;
}

fn argmax(p: &[f64]) -> TokenId {
    let mut best = 0;
    for (i, &x) in p.iter().enumerate() {
        if x > p[best] {
            best = i;
        }
    }
    best as TokenId
}

impl Denoiser for NGramDenoiser {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn predict(&self, canvas: &CanvasView<'_>, _step: usize, _seed: u64) -> Result<LogitMatrix> {
        let seq = canvas.tokens;
        let mask = canvas.mask_id;
        let positions: Vec<usize> = canvas.masked_positions().collect();
        let v = self.vocab_size;
        let mut fills: Vec<Option<TokenId>> = vec![None; seq.len()];
        let mut fwd = vec![0.0; positions.len() * v];

        // The canvas start reads as a line start.
        let mut padded = Vec::with_capacity(seq.len() + 1);
        padded.push(self.newline);
        padded.extend_from_slice(seq);
        let mut padded_fills = vec![None; padded.len()];

        for (row, &pos) in positions.iter().enumerate() {
            let ctx = self.context(&padded, pos + 1, Direction::Forward, Some((&padded_fills, mask)));
            let out = &mut fwd[row * v..(row + 1) * v];
            self.distribution(&self.forward, &ctx, out);
            let best = argmax(out);
            fills[pos] = Some(best);
            padded_fills[pos + 1] = Some(best);
        }

        let lambda = self.params.lambda;
        let mut logits = LogitMatrix::filled(positions.len(), v, 0.0);
        let mut bwd = vec![0.0; v];
        for (row, &pos) in positions.iter().enumerate() {
            if self.runs_off_end(seq, pos, &fills, mask) {
                bwd.fill(1.0 / v as f64);
            } else {
                let ctx = self.context(seq, pos, Direction::Backward, Some((&fills, mask)));
                self.distribution(&self.backward, &ctx, &mut bwd);
            }
            let f = &fwd[row * v..(row + 1) * v];
            for ((z, &pf), &pb) in logits.row_mut(row).iter_mut().zip(f).zip(&bwd) {
                *z = (lambda * pf + (1.0 - lambda) * pb).ln();
            }
        }
        Ok(logits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seq::SequenceState;
    use crate::stability::propose;

    fn corpus_model(params: NGramParams) -> (Tokenizer, NGramDenoiser) {
        let lines: Vec<&str> = crate::BUNDLED_CORPUS.lines().collect();
        let tok = Tokenizer::from_corpus(lines.iter().copied()).unwrap();
        let nd = NGramDenoiser::fit(&tok, lines.iter().copied(), params).unwrap();
        (tok, nd)
    }

    #[test]
    fn hand_counted_bigram() {
        let tok = Tokenizer::from_corpus(["a b a b"]).unwrap();
        let params = NGramParams { order: 2, k: 0.5, lambda: 1.0 };
        let nd = NGramDenoiser::fit(&tok, ["a b a b"], params).unwrap();
        let (a, b) = (tok.id("a").unwrap(), tok.id("b").unwrap());
        let v = tok.vocab_size() as f64;
        let expected = (2.0 + 0.5) / (2.0 + 0.5 * v);
        assert!((nd.forward_prob(&[a], b) - expected).abs() < 1e-12);
    }

    #[test]
    fn unseen_context_is_uniform() {
        let (tok, nd) = corpus_model(NGramParams::default());
        let dot = tok.id(".").unwrap();
        let p = nd.forward_distribution(&[dot, dot]);
        let u = 1.0 / tok.vocab_size() as f64;
        assert!(p.iter().all(|&x| (x - u).abs() < 1e-15));
    }

    #[test]
    fn seen_contexts_normalize() {
        let (_, nd) = corpus_model(NGramParams::default());
        let mut ctxs: Vec<Vec<TokenId>> = nd.forward_contexts().map(<[TokenId]>::to_vec).collect();
        ctxs.sort();
        for ctx in ctxs.iter().step_by((ctxs.len() / 100).max(1)).take(100) {
            let s: f64 = nd.forward_distribution(ctx).iter().sum();
            assert!((s - 1.0).abs() < 1e-9, "context {ctx:?} sums to {s}");
        }
    }

    #[test]
    fn empty_corpus() {
        let tok = Tokenizer::from_vocab(["a", "b", "\n"]).unwrap();
        assert!(matches!(
            NGramDenoiser::fit(&tok, ["", ""], NGramParams::default()),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn rows_are_normalized() {
        let (tok, nd) = corpus_model(NGramParams::default());
        let prompt = tok.tokenize("Tom has 5 apples.").unwrap();
        let s = SequenceState::new(&prompt, 12, tok.mask_id()).unwrap();
        let m = nd.predict(&s.view(), 1, 0).unwrap();
        assert_eq!(m.rows(), 12);
        for r in 0..m.rows() {
            let s: f64 = m.row(r).iter().map(|z| z.exp()).sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn lambda_one_is_pure_forward() {
        let params = NGramParams { lambda: 1.0, ..NGramParams::default() };
        let (tok, nd) = corpus_model(params);
        let prompt = tok.tokenize("The Hare was").unwrap();
        let s = SequenceState::new(&prompt, 1, tok.mask_id()).unwrap();
        let m = nd.predict(&s.view(), 1, 0).unwrap();
        let ctx = [tok.id("was").unwrap(), tok.id("Hare").unwrap()];
        let p = nd.forward_distribution(&ctx);
        for (z, q) in m.row(0).iter().zip(&p) {
            assert!((z - q.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn seen_context_is_more_decisive() {
        let (tok, nd) = corpus_model(NGramParams::default());
        let margin_after = |text: &str| {
            let prompt = tok.tokenize(text).unwrap();
            let s = SequenceState::new(&prompt, 1, tok.mask_id()).unwrap();
            propose(&nd.predict(&s.view(), 1, 0).unwrap()).unwrap().margins[0]
        };
        let seen = margin_after("In the beginning God created the heaven and the");
        let unseen = margin_after("apples Tortoise");
        assert!(seen > unseen, "seen {seen} unseen {unseen}");
    }

    #[test]
    fn prediction_is_pure() {
        let (tok, nd) = corpus_model(NGramParams::default());
        let s = SequenceState::new(&tok.tokenize("And God said,").unwrap(), 20, tok.mask_id()).unwrap();
        assert_eq!(nd.predict(&s.view(), 1, 0).unwrap(), nd.predict(&s.view(), 9, 5).unwrap());
    }

    #[test]
    fn perplexity_is_finite() {
        let (tok, nd) = corpus_model(NGramParams::default());
        let ids = tok.tokenize("And God saw the light, that it was good.").unwrap();
        let ppl = nd.perplexity(&[], &ids);
        assert!(ppl.is_finite() && ppl >= 1.0);
    }
}
