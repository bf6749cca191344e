//! Tokenization, vocabulary, and the language module: embeddings, an SRU
//! scan, enriched features `r_t = [e_t; h_t]` and per-word dynamic filters
//! `f_{k,t} = σ(W_{f_k} r_t + b_{f_k})`.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;

use crate::error::{contract, ensure, DmnError, Result};
use crate::numeric::{BoundParams, Graph, ParamId, ParamStore, Var};
use crate::recurrent::{CellKind, RecurrentStack, StackSpec};

pub const PAD_TOKEN: &str = "<pad>";
pub const OOV_TOKEN: &str = "<unk>";
pub const PAD_ID: usize = 0;
pub const OOV_ID: usize = 1;

/// Dense token ids. Id 0 is padding, id 1 is the out-of-vocabulary token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

/// Lowercases and splits on whitespace and punctuation.
pub fn normalize(query: &str) -> Vec<String> {
    query
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

impl Vocabulary {
    /// Builds a vocabulary from a corpus; words are sorted so the result does
    /// not depend on corpus order.
    pub fn build<'a>(corpus: impl IntoIterator<Item = &'a str>) -> Self {
        let words: BTreeSet<String> = corpus.into_iter().flat_map(normalize).collect();
        let tokens = [PAD_TOKEN.to_string(), OOV_TOKEN.to_string()]
            .into_iter()
            .chain(words)
            .collect();
        Self::from_tokens(tokens).expect("reserved tokens are present")
    }

    /// Line number is id; the first two entries must be the reserved tokens.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        ensure!(
            tokens.len() >= 2 && tokens[PAD_ID] == PAD_TOKEN && tokens[OOV_ID] == OOV_TOKEN,
            "vocabulary must start with {PAD_TOKEN} and {OOV_TOKEN}"
        );
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            ensure!(!t.is_empty(), "vocabulary entry {i} is empty");
            if ids.insert(t.clone(), i).is_some() {
                return Err(contract!("vocabulary token {t:?} appears twice"));
            }
        }
        Ok(Vocabulary { tokens, ids })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| DmnError::io(path, e))?;
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        Self::from_tokens(tokens).map_err(|e| DmnError::format(path, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.tokens.join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|e| DmnError::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(OOV_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }
}

pub fn tokenize(query: &str, vocab: &Vocabulary) -> Result<Vec<usize>> {
    let words = normalize(query);
    ensure!(!words.is_empty(), "query {query:?} has no tokens");
    Ok(words.iter().map(|w| vocab.id(w)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LanguageConfig {
    pub vocab_size: usize,
    /// Embedding width `d_e`.
    pub embedding: usize,
    /// SRU hidden width `d_h`.
    pub hidden: usize,
    pub layers: usize,
    /// Number of dynamic filters `K`.
    pub filters: usize,
    /// Length of each dynamic filter (`C_N + C_loc`, or `C_N` when LOC is
    /// kept out of the responses).
    pub filter_len: usize,
    /// Use `r_t = h_t` instead of `[e_t; h_t]`.
    pub r_is_h: bool,
}

impl LanguageConfig {
    /// Width of `r_t`.
    pub fn r_width(&self) -> usize {
        if self.r_is_h {
            self.hidden
        } else {
            self.embedding + self.hidden
        }
    }
}

#[derive(Debug, Clone)]
pub struct LanguageOutput {
    /// `r_t` as `[d_r, 1]` columns.
    pub r: Vec<Var>,
    /// Filter bank per word, `[K, filter_len]`; row `k` is `f_{k,t}`.
    pub filters: Vec<Var>,
}

#[derive(Debug, Clone)]
pub struct LanguageModule {
    config: LanguageConfig,
    embedding: ParamId,
    stack: RecurrentStack,
    filter_w: ParamId,
    filter_b: ParamId,
}

impl LanguageModule {
    pub fn new(store: &mut ParamStore, prefix: &str, config: LanguageConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        ensure!(config.vocab_size >= 2, "vocabulary is too small");
        ensure!(config.filters >= 1, "at least one dynamic filter is required");
        ensure!(config.filter_len >= 1, "dynamic filters need positive length");
        let embedding = store.init(
            format!("{prefix}.embedding"),
            &[config.vocab_size, config.embedding],
            config.embedding,
            rng,
        )?;
        let stack = RecurrentStack::new(
            store,
            &format!("{prefix}.rnn"),
            StackSpec {
                kind: CellKind::Sru,
                input_size: config.embedding,
                hidden: config.hidden,
                layers: config.layers,
            },
            rng,
        )?;
        let d_r = config.r_width();
        let rows = config.filters * config.filter_len;
        let filter_w = store.init(format!("{prefix}.filters.w"), &[rows, d_r], d_r, rng)?;
        let filter_b = store.zeros(format!("{prefix}.filters.b"), &[rows])?;
        Ok(LanguageModule {
            config,
            embedding,
            stack,
            filter_w,
            filter_b,
        })
    }

    pub fn config(&self) -> &LanguageConfig {
        &self.config
    }

    pub fn forward(&self, g: &mut Graph, p: &BoundParams, ids: &[usize]) -> Result<LanguageOutput> {
        ensure!(!ids.is_empty(), "language module needs at least one token");
        let t = ids.len();
        let emb = g.gather_cols(p[self.embedding], ids)?;
        let steps: Vec<Var> = (0..t).map(|i| g.narrow(emb, 1, i, 1)).collect::<Result<_>>()?;
        let hidden = self.stack.scan(g, p, &steps)?;
        let r: Vec<Var> = if self.config.r_is_h {
            hidden
        } else {
            steps
                .iter()
                .zip(&hidden)
                .map(|(&e, &h)| g.concat(0, &[e, h]))
                .collect::<Result<_>>()?
        };
        // All words through the generator in one product.
        let all = if t == 1 { r[0] } else { g.concat(1, &r)? };
        let z = g.affine(all, p[self.filter_w], p[self.filter_b])?;
        let f = g.sigmoid(z);
        let (k, len) = (self.config.filters, self.config.filter_len);
        let filters = (0..t)
            .map(|i| {
                let col = if t == 1 { f } else { g.narrow(f, 1, i, 1)? };
                g.reshape(col, &[k, len])
            })
            .collect::<Result<_>>()?;
        Ok(LanguageOutput { r, filters })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids_and_sorted_words() {
        let v = Vocabulary::build(["red circle", "Blue square!"]);
        assert_eq!(v.tokens()[..2], [PAD_TOKEN, OOV_TOKEN]);
        assert_eq!(&v.tokens()[2..], ["blue", "circle", "red", "square"]);
        assert_eq!(v.id("nope"), OOV_ID);
    }

    #[test]
    fn empty_query_rejected() {
        let v = Vocabulary::build(["a"]);
        assert!(tokenize("  ,. ", &v).is_err());
    }

    #[test]
    fn duplicate_tokens_rejected() {
        let toks = [PAD_TOKEN, OOV_TOKEN, "a", "a"].map(String::from).to_vec();
        assert!(Vocabulary::from_tokens(toks).is_err());
    }
}
