//! Reference conditional sequence model.
//!
//! The dialogue history is serialized into a prompt of token ids and the
//! target description follows it; an interpolated n-gram model predicts each
//! target token from the last `order - 1` ids, so early windows span the
//! prompt/target boundary. Counts are taken along gold sequences only
//! (teacher forcing), and all log-likelihoods are in nats.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{read_to_string, Error, Result};
use crate::model::{Corpus, DialogueHistory, Speaker, Token};

pub type TokenId = u32;

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";
pub const SEP: &str = "<sep>";
pub const USER_TAG: &str = "user:";
pub const SYSTEM_TAG: &str = "system:";
pub const STATE_TAG: &str = "state:";

const RESERVED: [&str; 7] = [BOS, EOS, UNK, SEP, USER_TAG, SYSTEM_TAG, STATE_TAG];

/// Tolerance on distribution mass.
pub const MASS_TOLERANCE: f64 = 1e-9;

/// Dense token/id bijection. Ids 0..7 hold the markers and tags in the order
/// BOS, EOS, UNK, SEP, `user:`, `system:`, `state:`; words follow sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<Token>,
    index: HashMap<Token, TokenId>,
}

impl Vocabulary {
    pub const BOS_ID: TokenId = 0;
    pub const EOS_ID: TokenId = 1;
    pub const UNK_ID: TokenId = 2;
    pub const SEP_ID: TokenId = 3;
    pub const USER_ID: TokenId = 4;
    pub const SYSTEM_ID: TokenId = 5;
    pub const STATE_ID: TokenId = 6;

    pub fn build<'a, I: IntoIterator<Item = &'a Token>>(words: I) -> Self {
        let mut words: Vec<Token> = words.into_iter().cloned().collect();
        words.sort();
        words.dedup();
        let mut tokens: Vec<Token> = RESERVED.iter().map(|r| Token::raw(r)).collect();
        tokens.extend(words.into_iter().filter(|w| !RESERVED.contains(&w.as_str())));
        Self::from_tokens(tokens)
    }

    fn from_tokens(tokens: Vec<Token>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        Vocabulary { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id of `token`, or [`Self::UNK_ID`] when out of vocabulary.
    pub fn id(&self, token: &Token) -> TokenId {
        self.index.get(token).copied().unwrap_or(Self::UNK_ID)
    }

    pub fn get(&self, token: &Token) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> &Token {
        &self.tokens[id as usize]
    }

    pub fn encode(&self, tokens: &[Token]) -> Vec<TokenId> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> Vec<Token> {
        ids.iter().map(|&i| self.token(i).clone()).collect()
    }

    /// Markers and tags other than EOS; never part of a generated description.
    pub fn masked_ids() -> &'static [TokenId] {
        &[
            Self::BOS_ID,
            Self::UNK_ID,
            Self::SEP_ID,
            Self::USER_ID,
            Self::SYSTEM_ID,
            Self::STATE_ID,
        ]
    }

    /// Ordinary word tokens (no markers or tags).
    pub fn words(&self) -> impl Iterator<Item = &Token> + '_ {
        self.tokens[RESERVED.len()..].iter()
    }
}

/// Serializes a history as `user: w.. <sep> system: w.. <sep> ... state:`.
pub fn encode_prompt(history: &DialogueHistory, vocab: &Vocabulary) -> Vec<TokenId> {
    let mut ids = Vec::new();
    for (i, turn) in history.turns().iter().enumerate() {
        if i > 0 {
            ids.push(Vocabulary::SEP_ID);
        }
        ids.push(match turn.speaker {
            Speaker::User => Vocabulary::USER_ID,
            Speaker::System => Vocabulary::SYSTEM_ID,
        });
        ids.extend(turn.utterance.iter().map(|t| vocab.id(t)));
    }
    ids.push(Vocabulary::STATE_ID);
    ids
}

/// Anything that yields a next-token distribution given a condition and a
/// generated prefix.
pub trait ConditionalSequenceModel: Sync {
    fn vocab_size(&self) -> usize;

    fn eos_id(&self) -> TokenId;

    /// Ids the decoders must never emit.
    fn masked_ids(&self) -> &[TokenId] {
        &[]
    }

    /// Probability vector over the vocabulary; non-negative and summing to 1.
    fn next_token_distribution(&self, condition: &[TokenId], prefix: &[TokenId]) -> Vec<f64>;
}

/// Checks the distribution invariants, returning a contract error otherwise.
pub fn check_distribution(probs: &[f64]) -> Result<()> {
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::contract("distribution has a negative or non-finite entry"));
    }
    let mass: f64 = probs.iter().sum();
    if (mass - 1.0).abs() > MASS_TOLERANCE {
        return Err(Error::contract(format!("distribution mass {mass} != 1")));
    }
    Ok(())
}

/// Teacher-forced negative log-likelihood of `target` followed by EOS.
pub fn sequence_nll<M: ConditionalSequenceModel + ?Sized>(
    model: &M,
    condition: &[TokenId],
    target: &[TokenId],
) -> Result<f64> {
    if target.is_empty() {
        return Err(Error::contract("sequence_nll needs a non-empty target"));
    }
    let mut nll = 0.0;
    let mut prefix = Vec::with_capacity(target.len());
    for &w in target.iter().chain(std::iter::once(&model.eos_id())) {
        let probs = model.next_token_distribution(condition, &prefix);
        check_distribution(&probs)?;
        nll -= probs[w as usize].ln();
        prefix.push(w);
    }
    Ok(nll)
}

/// `exp(total NLL / total predicted tokens)` over `(condition, target)` pairs,
/// summed in slice order.
pub fn corpus_perplexity<M: ConditionalSequenceModel + ?Sized>(
    model: &M,
    items: &[(Vec<TokenId>, Vec<TokenId>)],
) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::contract("corpus_perplexity needs a non-empty corpus"));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (condition, target) in items {
        total += sequence_nll(model, condition, target)?;
        count += target.len() + 1;
    }
    Ok((total / count as f64).exp())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
struct ContextCounts {
    total: u64,
    next: BTreeMap<TokenId, u64>,
}

/// Jelinek-Mercer interpolated n-gram model with a probability floor.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    order: usize,
    lambdas: Vec<f64>,
    vocab: Vocabulary,
    /// `counts[k]` maps contexts of length `k` to continuation counts.
    counts: Vec<HashMap<Vec<TokenId>, ContextCounts>>,
}

fn check_hyperparameters(order: usize, lambdas: &[f64]) -> Result<()> {
    if order == 0 {
        return Err(Error::contract("n-gram order must be at least 1"));
    }
    if lambdas.len() != order {
        return Err(Error::contract(format!(
            "expected {order} interpolation weights, got {}",
            lambdas.len()
        )));
    }
    if lambdas.iter().any(|l| !l.is_finite() || *l < 0.0) {
        return Err(Error::contract("interpolation weights must be non-negative"));
    }
    let sum: f64 = lambdas.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::contract(format!("interpolation weights sum to {sum}")));
    }
    Ok(())
}

impl NGramModel {
    /// Fits on gold descriptions of `corpus`.
    pub fn fit(corpus: &Corpus, order: usize, lambdas: &[f64]) -> Result<Self> {
        let targets: Vec<Vec<Token>> = corpus
            .examples
            .iter()
            .map(|e| e.gold_nl.tokens.clone())
            .collect();
        Self::fit_targets(corpus, &targets, order, lambdas)
    }

    /// Fits on caller-supplied target token sequences, one per example.
    pub fn fit_targets(
        corpus: &Corpus,
        targets: &[Vec<Token>],
        order: usize,
        lambdas: &[f64],
    ) -> Result<Self> {
        check_hyperparameters(order, lambdas)?;
        if corpus.is_empty() {
            return Err(Error::contract("cannot fit on an empty corpus"));
        }
        if targets.len() != corpus.len() {
            return Err(Error::contract("one target per example is required"));
        }
        let words = corpus
            .examples
            .iter()
            .flat_map(|e| e.history.turns().iter().flat_map(|t| t.utterance.iter()))
            .chain(targets.iter().flatten());
        let vocab = Vocabulary::build(words);
        let mut model = NGramModel {
            order,
            lambdas: lambdas.to_vec(),
            counts: vec![HashMap::new(); order],
            vocab,
        };
        for (example, target) in corpus.examples.iter().zip(targets) {
            let condition = encode_prompt(&example.history, &model.vocab);
            let target = model.vocab.encode(target);
            model.observe(&condition, &target);
        }
        Ok(model)
    }

    fn observe(&mut self, condition: &[TokenId], target: &[TokenId]) {
        let mut seq = vec![Vocabulary::BOS_ID; self.order - 1];
        seq.extend_from_slice(condition);
        for &w in target.iter().chain(std::iter::once(&Vocabulary::EOS_ID)) {
            for k in 0..self.order {
                let ctx = seq[seq.len() - k..].to_vec();
                let entry = self.counts[k].entry(ctx).or_default();
                entry.total += 1;
                *entry.next.entry(w).or_default() += 1;
            }
            seq.push(w);
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    /// Raw continuation count of `next` after `context` (context length < order).
    pub fn count(&self, context: &[TokenId], next: TokenId) -> u64 {
        self.counts
            .get(context.len())
            .and_then(|m| m.get(context))
            .and_then(|c| c.next.get(&next))
            .copied()
            .unwrap_or(0)
    }

    pub fn floor(&self) -> f64 {
        1e-6 / self.vocab.len() as f64
    }

    pub fn prompt(&self, history: &DialogueHistory) -> Vec<TokenId> {
        encode_prompt(history, &self.vocab)
    }

    /// NLL of a token-level target for `history`.
    pub fn example_nll(&self, history: &DialogueHistory, target: &[Token]) -> Result<f64> {
        sequence_nll(self, &self.prompt(history), &self.vocab.encode(target))
    }

    /// Perplexity on the gold descriptions of `corpus`.
    pub fn perplexity(&self, corpus: &Corpus) -> Result<f64> {
        let items: Vec<_> = corpus
            .examples
            .iter()
            .map(|e| (self.prompt(&e.history), self.vocab.encode(&e.gold_nl.tokens)))
            .collect();
        corpus_perplexity(self, &items)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = self.to_json();
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::parse(path.display().to_string(), message),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        let mut counts: Vec<(Vec<TokenId>, ContextCounts)> = self
            .counts
            .iter()
            .flat_map(|m| m.iter().map(|(k, v)| (k.clone(), v.clone())))
            .collect();
        counts.sort_by(|a, b| a.0.len().cmp(&b.0.len()).then_with(|| a.0.cmp(&b.0)));
        let file = ModelFile {
            format: MODEL_FORMAT.to_owned(),
            version: MODEL_VERSION,
            order: self.order,
            lambdas: self.lambdas.clone(),
            vocab: self.vocab.tokens.iter().map(|t| t.as_str().to_owned()).collect(),
            counts,
        };
        serde_json::to_string(&file).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| Error::parse("model", e.to_string()))?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(Error::parse(
                "model",
                format!("unsupported model format {} v{}", file.format, file.version),
            ));
        }
        check_hyperparameters(file.order, &file.lambdas)?;
        if file.vocab.len() < RESERVED.len()
            || file.vocab.iter().zip(RESERVED).any(|(a, b)| a != b)
        {
            return Err(Error::parse("model", "vocabulary does not start with the markers"));
        }
        let mut tokens: Vec<Token> = RESERVED.iter().map(|r| Token::raw(r)).collect();
        for w in &file.vocab[RESERVED.len()..] {
            tokens.push(Token::new(w.clone())?);
        }
        let vocab = Vocabulary::from_tokens(tokens);
        let mut counts = vec![HashMap::new(); file.order];
        for (ctx, c) in file.counts {
            if ctx.len() >= file.order {
                return Err(Error::parse("model", "context longer than order - 1"));
            }
            counts[ctx.len()].insert(ctx, c);
        }
        Ok(NGramModel {
            order: file.order,
            lambdas: file.lambdas,
            vocab,
            counts,
        })
    }
}

const MODEL_FORMAT: &str = "nldst-ngram";
const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    order: usize,
    lambdas: Vec<f64>,
    vocab: Vec<String>,
    counts: Vec<(Vec<TokenId>, ContextCounts)>,
}

impl ConditionalSequenceModel for NGramModel {
    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn eos_id(&self) -> TokenId {
        Vocabulary::EOS_ID
    }

    fn masked_ids(&self) -> &[TokenId] {
        Vocabulary::masked_ids()
    }

    fn next_token_distribution(&self, condition: &[TokenId], prefix: &[TokenId]) -> Vec<f64> {
        let v = self.vocab.len();
        let mut probs = vec![0.0; v];
        let mut seen_weight = 0.0;
        for k in 0..self.order {
            // Context of length k: last k ids of BOS-padded condition ++ prefix.
            let ctx = tail(condition, prefix, k);
            let Some(c) = self.counts[k].get(&ctx) else {
                continue;
            };
            let lambda = self.lambdas[k];
            if lambda == 0.0 || c.total == 0 {
                continue;
            }
            seen_weight += lambda;
            let total = c.total as f64;
            for (&w, &n) in &c.next {
                probs[w as usize] += lambda * n as f64 / total;
            }
        }
        if seen_weight > 0.0 {
            for p in &mut probs {
                *p /= seen_weight;
            }
        } else {
            probs.fill(1.0 / v as f64);
        }
        let floor = self.floor();
        for p in &mut probs {
            *p = p.max(floor);
        }
        let mass: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= mass;
        }
        probs
    }
}

fn tail(condition: &[TokenId], prefix: &[TokenId], k: usize) -> Vec<TokenId> {
    let mut out = Vec::with_capacity(k);
    let from_prefix = k.min(prefix.len());
    let from_condition = (k - from_prefix).min(condition.len());
    let pad = k - from_prefix - from_condition;
    out.extend(std::iter::repeat_n(Vocabulary::BOS_ID, pad));
    out.extend_from_slice(&condition[condition.len() - from_condition..]);
    out.extend_from_slice(&prefix[prefix.len() - from_prefix..]);
    out
}
