//! Rule-based parser from natural-language text back to a [`StructuredState`].
//!
//! A [`RuleSet`] holds domain cue phrases and per-slot extraction rules. The
//! scanner walks the token sequence left to right: a cue switches the active
//! domain, a trigger of the active domain hands the following tokens to the
//! rule's value decoder. Later matches on the same `(domain, slot)` win.
//! The same machinery drives the rule-based tracker over raw utterances.

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::Path;

use serde::Deserialize;

use crate::error::{read_to_string, Error, Result};
use crate::model::{tokenize, NLStateDescription, SlotValue, StructuredState, Token};
use crate::ontology::{FreeKind, Ontology, ValueSpec};
use crate::resources;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueDecoder {
    Closed,
    Time,
    Passthrough,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractionRule {
    pub domain: String,
    pub slot: String,
    pub triggers: Vec<Vec<Token>>,
    pub decoder: ValueDecoder,
    /// Tokens that must follow the value; consumed with it.
    pub suffix: Vec<Token>,
    /// Closed-set surfaces (values and synonyms) with their canonical value, longest first.
    surfaces: Vec<(Vec<Token>, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleSet {
    cues: Vec<(String, Vec<Token>)>,
    rules: Vec<ExtractionRule>,
    hash: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRuleFile {
    domains: BTreeMap<String, RawDomainRules>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDomainRules {
    #[serde(default)]
    cues: Vec<String>,
    #[serde(default)]
    rules: Vec<RawRule>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRule {
    slot: String,
    triggers: Vec<String>,
    decoder: ValueDecoder,
    #[serde(default)]
    suffix: Option<String>,
}

impl RuleSet {
    pub fn load(path: &Path, ontology: &Ontology) -> Result<Self> {
        let text = read_to_string(path)?;
        Self::from_toml(&text, ontology).map_err(|e| match e {
            Error::Parse { message, .. } => Error::parse(path.display().to_string(), message),
            other => other,
        })
    }

    /// Grammar for state descriptions produced by the bundled templates.
    pub fn builtin_state(ontology: &Ontology) -> Self {
        Self::from_toml(resources::STATE_RULES, ontology).expect("bundled state rules are valid")
    }

    /// Grammar for raw user utterances.
    pub fn builtin_utterance(ontology: &Ontology) -> Self {
        Self::from_toml(resources::UTTERANCE_RULES, ontology)
            .expect("bundled utterance rules are valid")
    }

    pub fn from_toml(text: &str, ontology: &Ontology) -> Result<Self> {
        let raw: RawRuleFile =
            toml::from_str(text).map_err(|e| Error::parse("rules", e.to_string()))?;
        let mut cues = Vec::new();
        let mut rules = Vec::new();
        for (domain, rd) in raw.domains {
            if ontology.domain(&domain).is_none() {
                return Err(Error::parse("rules", format!("unknown domain {domain:?}")));
            }
            for cue in rd.cues {
                let toks = tokenize(&cue);
                if toks.is_empty() {
                    return Err(Error::parse("rules", format!("{domain}: blank cue")));
                }
                cues.push((domain.clone(), toks));
            }
            for r in rd.rules {
                let ctx = format!("{domain}-{}", r.slot);
                let spec = ontology
                    .slot(&domain, &r.slot)
                    .ok_or_else(|| Error::parse("rules", format!("unknown slot {ctx}")))?;
                let consistent = matches!(
                    (&spec.values, r.decoder),
                    (ValueSpec::Closed(_), ValueDecoder::Closed)
                        | (ValueSpec::Free { kind: FreeKind::Time, .. }, ValueDecoder::Time)
                        | (ValueSpec::Free { kind: FreeKind::Text, .. }, ValueDecoder::Passthrough)
                );
                if !consistent {
                    return Err(Error::parse(
                        "rules",
                        format!("{ctx}: decoder {:?} does not fit the slot's value type", r.decoder),
                    ));
                }
                let triggers: Vec<Vec<Token>> = r.triggers.iter().map(|t| tokenize(t)).collect();
                if triggers.is_empty() || triggers.iter().any(Vec::is_empty) {
                    return Err(Error::parse("rules", format!("{ctx}: empty trigger")));
                }
                let mut surfaces = Vec::new();
                if let ValueSpec::Closed(values) = &spec.values {
                    for v in values {
                        surfaces.push((tokenize(v), v.clone()));
                    }
                    for (surface, target) in ontology.synonyms() {
                        if values.contains(target) {
                            surfaces.push((tokenize(surface), target.clone()));
                        }
                    }
                    surfaces.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
                }
                rules.push(ExtractionRule {
                    domain: domain.clone(),
                    slot: r.slot,
                    triggers,
                    decoder: r.decoder,
                    suffix: r.suffix.as_deref().map(tokenize).unwrap_or_default(),
                    surfaces,
                });
            }
        }
        Ok(RuleSet {
            cues,
            rules,
            hash: resources::hash_text(text),
        })
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn rules(&self) -> &[ExtractionRule] {
        &self.rules
    }

    /// Scans `tokens` starting with `active` as the current domain and returns
    /// every cue and slot match in token order. `active` is left at the last
    /// domain in force, so callers can carry it across utterances.
    pub fn scan(&self, tokens: &[Token], active: &mut Option<String>) -> Vec<Match> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            if let Some((domain, len)) = self.cue_at(tokens, i) {
                *active = Some(domain.to_owned());
                out.push(Match::Cue {
                    domain: domain.to_owned(),
                    span: i..i + len,
                });
                i += len;
                continue;
            }
            if let Some(domain) = active.as_deref() {
                if let Some((entry, end)) = self.slot_at(tokens, i, domain) {
                    out.push(Match::Slot { entry, span: i..end });
                    i = end;
                    continue;
                }
            }
            i += 1;
        }
        out
    }

    fn cue_at(&self, tokens: &[Token], i: usize) -> Option<(&str, usize)> {
        self.cues
            .iter()
            .filter(|(_, cue)| tokens[i..].starts_with(cue))
            .max_by(|a, b| a.1.len().cmp(&b.1.len()).then_with(|| b.0.cmp(&a.0)))
            .map(|(d, cue)| (d.as_str(), cue.len()))
    }

    fn trigger_at(&self, tokens: &[Token], i: usize, domain: &str) -> bool {
        self.rules
            .iter()
            .filter(|r| r.domain == domain)
            .any(|r| r.triggers.iter().any(|t| tokens[i..].starts_with(t)))
    }

    fn slot_at(&self, tokens: &[Token], i: usize, domain: &str) -> Option<(SlotValue, usize)> {
        // Longest trigger first, then file order.
        let mut candidates: Vec<(usize, usize, &ExtractionRule)> = Vec::new();
        for (order, rule) in self.rules.iter().enumerate() {
            if rule.domain != domain {
                continue;
            }
            if let Some(t) = rule
                .triggers
                .iter()
                .filter(|t| tokens[i..].starts_with(t))
                .max_by_key(|t| t.len())
            {
                candidates.push((t.len(), order, rule));
            }
        }
        candidates.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        for (len, _, rule) in candidates {
            let start = i + len;
            let Some((value, mut end)) = self.decode(rule, tokens, start) else {
                continue;
            };
            if !rule.suffix.is_empty() {
                if !tokens[end..].starts_with(&rule.suffix) {
                    continue;
                }
                end += rule.suffix.len();
            }
            return Some((SlotValue::new(&rule.domain, &rule.slot, &value), end));
        }
        None
    }

    fn decode(&self, rule: &ExtractionRule, tokens: &[Token], start: usize) -> Option<(String, usize)> {
        let rest = &tokens[start..];
        match rule.decoder {
            ValueDecoder::Closed => rule
                .surfaces
                .iter()
                .find(|(surface, _)| rest.starts_with(surface))
                .map(|(surface, value)| (value.clone(), start + surface.len())),
            ValueDecoder::Time => {
                let first = rest.first()?;
                if let Some(second) = rest.get(1) {
                    if matches!(second.as_str(), "am" | "pm") {
                        let joined = format!("{} {}", first.as_str(), second.as_str());
                        if let Some(t) = normalize_time(&joined) {
                            return Some((t, start + 2));
                        }
                    }
                }
                normalize_time(first.as_str()).map(|t| (t, start + 1))
            }
            ValueDecoder::Passthrough => {
                let mut end = start;
                while end < tokens.len() {
                    if is_punctuation(&tokens[end])
                        || self.cue_at(tokens, end).is_some()
                        || self.trigger_at(tokens, end, &rule.domain)
                        || (!rule.suffix.is_empty() && tokens[end..].starts_with(&rule.suffix))
                    {
                        break;
                    }
                    end += 1;
                }
                if end == start {
                    return None;
                }
                let value = tokens[start..end]
                    .iter()
                    .map(Token::as_str)
                    .collect::<Vec<_>>()
                    .join(" ");
                Some((value, end))
            }
        }
    }

    /// Folds all slot matches into a state, later matches overriding earlier ones.
    pub fn extract_into(
        &self,
        tokens: &[Token],
        ontology: &Ontology,
        active: &mut Option<String>,
        state: &mut StructuredState,
    ) {
        for m in self.scan(tokens, active) {
            if let Match::Slot { entry, .. } = m {
                if let Some(value) = ontology.normalize_value(&entry.domain, &entry.slot, &entry.value) {
                    state.insert(SlotValue { value, ..entry });
                }
            }
        }
    }
}

fn is_punctuation(t: &Token) -> bool {
    let mut chars = t.as_str().chars();
    matches!((chars.next(), chars.next()), (Some(c), None) if !c.is_alphanumeric())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Match {
    Cue { domain: String, span: Range<usize> },
    Slot { entry: SlotValue, span: Range<usize> },
}

impl Match {
    pub fn span(&self) -> Range<usize> {
        match self {
            Match::Cue { span, .. } | Match::Slot { span, .. } => span.clone(),
        }
    }
}

/// Parses a state description into a structured state. Text no rule
/// understands contributes nothing; garbage yields the empty state.
pub fn canonicalize(
    description: &NLStateDescription,
    ontology: &Ontology,
    rules: &RuleSet,
) -> StructuredState {
    let mut state = StructuredState::new();
    let mut active = None;
    rules.extract_into(&description.tokens, ontology, &mut active, &mut state);
    state
}

/// Token ranges covered by cue or slot matches.
pub fn matched_spans(description: &NLStateDescription, rules: &RuleSet) -> Vec<Range<usize>> {
    let mut active = None;
    rules
        .scan(&description.tokens, &mut active)
        .iter()
        .map(Match::span)
        .collect()
}

/// Normalizes a clock expression to zero-padded 24-hour `HH:MM`.
///
/// Accepts `H am`/`Hpm`, `H:MM am`, `H:MM`, `HH:MM`, `noon` and `midnight`.
/// Returns `None` for anything else.
pub fn normalize_time(surface: &str) -> Option<String> {
    let s = surface.trim().to_lowercase();
    match s.as_str() {
        "noon" | "midday" => return Some("12:00".into()),
        "midnight" => return Some("00:00".into()),
        _ => {}
    }
    let (body, meridiem) = if let Some(b) = s.strip_suffix("am") {
        (b.trim_end(), Some(false))
    } else if let Some(b) = s.strip_suffix("pm") {
        (b.trim_end(), Some(true))
    } else {
        (s.as_str(), None)
    };
    let (h, m) = match body.split_once(':') {
        Some((h, m)) => {
            if m.len() != 2 {
                return None;
            }
            (h, m)
        }
        None if meridiem.is_some() => (body, "00"),
        None => return None,
    };
    if h.is_empty() || h.len() > 2 || !h.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    if !m.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let hour: u32 = h.parse().ok()?;
    let minute: u32 = m.parse().ok()?;
    if minute >= 60 {
        return None;
    }
    let hour = match meridiem {
        Some(pm) => {
            if !(1..=12).contains(&hour) {
                return None;
            }
            hour % 12 + if pm { 12 } else { 0 }
        }
        None => {
            if hour >= 24 {
                return None;
            }
            hour
        }
    };
    Some(format!("{hour:02}:{minute:02}"))
}
