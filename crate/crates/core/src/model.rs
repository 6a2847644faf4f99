//! Dialogue-side data model: tokens, turns, histories, slot-value states,
//! natural-language state descriptions and corpora.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::ontology::Ontology;

/// A single lowercase, NFC-normalized word or punctuation mark.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Token(String);

impl Token {
    /// Builds a token from text that is already a single token. Use [`tokenize`] for raw text.
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text: String = text.into();
        if text.is_empty() {
            return Err(Error::contract("token text must be non-empty"));
        }
        if text.chars().any(char::is_whitespace) {
            return Err(Error::contract(format!("token {text:?} contains whitespace")));
        }
        let normalized: String = text.to_lowercase().nfc().collect();
        if normalized != text {
            return Err(Error::contract(format!(
                "token {text:?} is not lowercase NFC"
            )));
        }
        Ok(Token(text))
    }

    /// Marker and tag tokens (`<s>`, `user:`) do not follow the word rules.
    pub(crate) fn raw(text: &str) -> Self {
        debug_assert!(!text.is_empty() && !text.contains(char::is_whitespace));
        Token(text.to_owned())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Token {
    type Error = Error;
    fn try_from(value: String) -> Result<Self> {
        Token::new(value)
    }
}

impl From<Token> for String {
    fn from(t: Token) -> String {
        t.0
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Splits raw text into lowercase tokens.
///
/// Whitespace separates words. A non-alphanumeric character becomes its own
/// token unless it sits between two alphanumeric characters, which keeps
/// `07:00`, `7:05` and `king's` whole while `monday.` splits into `monday` and `.`.
pub fn tokenize(raw: &str) -> Vec<Token> {
    let text: String = raw.to_lowercase().nfc().collect();
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut word = String::new();

    for (i, &c) in chars.iter().enumerate() {
        if c.is_whitespace() {
            flush(&mut word, &mut tokens);
        } else if c.is_alphanumeric() {
            word.push(c);
        } else {
            let prev_alnum = i > 0 && chars[i - 1].is_alphanumeric();
            let next_alnum = chars.get(i + 1).is_some_and(|n| n.is_alphanumeric());
            if prev_alnum && next_alnum && !word.is_empty() {
                word.push(c);
            } else {
                flush(&mut word, &mut tokens);
                tokens.push(Token(c.to_string()));
            }
        }
    }
    flush(&mut word, &mut tokens);
    tokens
}

fn flush(word: &mut String, tokens: &mut Vec<Token>) {
    if !word.is_empty() {
        tokens.push(Token(std::mem::take(word)));
    }
}

/// Joins tokens with single spaces.
pub fn detokenize(tokens: &[Token]) -> String {
    let mut out = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(t.as_str());
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    System,
}

impl Speaker {
    pub fn as_str(self) -> &'static str {
        match self {
            Speaker::User => "user",
            Speaker::System => "system",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Turn {
    pub speaker: Speaker,
    pub utterance: Vec<Token>,
    pub turn_index: usize,
}

impl Turn {
    pub fn new(speaker: Speaker, text: &str, turn_index: usize) -> Self {
        Turn {
            speaker,
            utterance: tokenize(text),
            turn_index,
        }
    }

    pub fn text(&self) -> String {
        detokenize(&self.utterance)
    }
}

/// Ordered user/system turns of one dialogue, or a prefix of one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialogueHistory {
    dialogue_id: String,
    turns: Vec<Turn>,
}

impl DialogueHistory {
    pub fn new(dialogue_id: impl Into<String>, turns: Vec<Turn>) -> Result<Self> {
        let dialogue_id = dialogue_id.into();
        if turns.is_empty() {
            return Err(Error::contract(format!("dialogue {dialogue_id}: no turns")));
        }
        for (i, turn) in turns.iter().enumerate() {
            if turn.turn_index != i {
                return Err(Error::contract(format!(
                    "dialogue {dialogue_id}: turn_index {} at position {i}",
                    turn.turn_index
                )));
            }
            // Blank user turns occur in upstream corpora; blank system turns only as a greeting.
            if turn.utterance.is_empty() && turn.speaker == Speaker::System && i > 0 {
                return Err(Error::contract(format!(
                    "dialogue {dialogue_id}: empty system utterance at turn {i}"
                )));
            }
        }
        if !turns.iter().any(|t| t.speaker == Speaker::User) {
            return Err(Error::contract(format!(
                "dialogue {dialogue_id}: no user turn"
            )));
        }
        Ok(DialogueHistory { dialogue_id, turns })
    }

    /// Convenience constructor from `(speaker, text)` pairs.
    pub fn from_texts(dialogue_id: impl Into<String>, turns: &[(Speaker, &str)]) -> Result<Self> {
        let turns = turns
            .iter()
            .enumerate()
            .map(|(i, (s, t))| Turn::new(*s, t, i))
            .collect();
        DialogueHistory::new(dialogue_id, turns)
    }

    pub fn dialogue_id(&self) -> &str {
        &self.dialogue_id
    }

    pub fn turns(&self) -> &[Turn] {
        &self.turns
    }

    /// Index of the last turn, which is the annotated user turn for examples.
    pub fn last_turn_index(&self) -> usize {
        self.turns.len() - 1
    }

    /// Prefix ending at (and including) `turn_index`.
    pub fn prefix(&self, turn_index: usize) -> Result<DialogueHistory> {
        if turn_index >= self.turns.len() {
            return Err(Error::contract(format!(
                "dialogue {}: prefix end {turn_index} out of range",
                self.dialogue_id
            )));
        }
        DialogueHistory::new(self.dialogue_id.clone(), self.turns[..=turn_index].to_vec())
    }

    /// Copy with the turns replaced; used by noise injection which keeps indices and speakers.
    pub fn with_turns(&self, turns: Vec<Turn>) -> Result<DialogueHistory> {
        DialogueHistory::new(self.dialogue_id.clone(), turns)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SlotValue {
    pub domain: String,
    pub slot: String,
    pub value: String,
}

impl SlotValue {
    pub fn new(domain: &str, slot: &str, value: &str) -> Self {
        SlotValue {
            domain: domain.to_owned(),
            slot: slot.to_owned(),
            value: value.to_owned(),
        }
    }
}

/// `(domain, slot)` key of a state entry.
pub type SlotKey = (String, String);

/// Set of `(domain, slot, value)` triples with at most one value per `(domain, slot)`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct StructuredState {
    entries: BTreeMap<SlotKey, String>,
}

impl StructuredState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts an entry, replacing any existing value for the same `(domain, slot)`.
    pub fn insert(&mut self, entry: SlotValue) -> Option<String> {
        self.entries.insert((entry.domain, entry.slot), entry.value)
    }

    pub fn get(&self, domain: &str, slot: &str) -> Option<&str> {
        self.entries
            .get(&(domain.to_owned(), slot.to_owned()))
            .map(String::as_str)
    }

    pub fn remove(&mut self, domain: &str, slot: &str) -> Option<String> {
        self.entries.remove(&(domain.to_owned(), slot.to_owned()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in canonical `(domain, slot)` order.
    pub fn iter(&self) -> impl Iterator<Item = SlotValue> + '_ {
        self.entries.iter().map(|((d, s), v)| SlotValue {
            domain: d.clone(),
            slot: s.clone(),
            value: v.clone(),
        })
    }

    pub fn entries(&self) -> Vec<SlotValue> {
        self.iter().collect()
    }

    pub fn domains(&self) -> impl Iterator<Item = &str> + '_ {
        let mut last: Option<&str> = None;
        self.entries.keys().filter_map(move |(d, _)| {
            if last == Some(d.as_str()) {
                None
            } else {
                last = Some(d.as_str());
                last
            }
        })
    }

    /// The sub-state holding only entries of `domain`.
    pub fn restrict(&self, domain: &str) -> StructuredState {
        StructuredState {
            entries: self
                .entries
                .iter()
                .filter(|((d, _), _)| d == domain)
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }
}

impl FromIterator<SlotValue> for StructuredState {
    fn from_iter<I: IntoIterator<Item = SlotValue>>(iter: I) -> Self {
        let mut state = StructuredState::new();
        for e in iter {
            state.insert(e);
        }
        state
    }
}

/// Compares two states after checking both against `ontology`.
pub fn state_equal(
    ontology: &Ontology,
    a: &StructuredState,
    b: &StructuredState,
) -> Result<bool> {
    ontology.validate_state(a)?;
    ontology.validate_state(b)?;
    Ok(a == b)
}

/// A generated or gold natural-language state description.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct NLStateDescription {
    pub tokens: Vec<Token>,
}

impl NLStateDescription {
    pub fn new(tokens: Vec<Token>) -> Self {
        NLStateDescription { tokens }
    }

    pub fn from_text(text: &str) -> Self {
        NLStateDescription {
            tokens: tokenize(text),
        }
    }

    pub fn text(&self) -> String {
        detokenize(&self.tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedTurnExample {
    /// Prefix ending at the annotated user turn.
    pub history: DialogueHistory,
    pub gold_structured: StructuredState,
    pub gold_nl: NLStateDescription,
}

impl AnnotatedTurnExample {
    pub fn dialogue_id(&self) -> &str {
        self.history.dialogue_id()
    }

    pub fn turn_index(&self) -> usize {
        self.history.last_turn_index()
    }

    pub fn key(&self) -> TurnKey {
        TurnKey {
            dialogue_id: self.dialogue_id().to_owned(),
            turn_index: self.turn_index(),
        }
    }
}

/// Identifies one evaluated user turn.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TurnKey {
    pub dialogue_id: String,
    pub turn_index: usize,
}

impl fmt::Display for TurnKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.dialogue_id, self.turn_index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub name: String,
    pub split: Split,
    pub examples: Vec<AnnotatedTurnExample>,
}

impl Corpus {
    pub fn new(name: impl Into<String>, split: Split, examples: Vec<AnnotatedTurnExample>) -> Self {
        Corpus {
            name: name.into(),
            split,
            examples,
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Dialogue ids in first-appearance order.
    pub fn dialogue_ids(&self) -> Vec<String> {
        let mut seen = std::collections::HashSet::new();
        self.examples
            .iter()
            .filter(|e| seen.insert(e.dialogue_id().to_owned()))
            .map(|e| e.dialogue_id().to_owned())
            .collect()
    }
}
