//! Template-driven rendering of a [`StructuredState`] as a natural-language
//! state description.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use crate::error::{read_to_string, Error, Result};
use crate::model::{tokenize, NLStateDescription, StructuredState, Token};
use crate::ontology::Ontology;
use crate::resources;

const PLACEHOLDER: &str = "{value}";

#[derive(Debug, Clone, PartialEq, Eq)]
struct SlotPhrase {
    slot: String,
    before: String,
    after: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct DomainTemplate {
    intro: String,
    slots: Vec<SlotPhrase>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    empty: Vec<Token>,
    separator: String,
    domains: BTreeMap<String, DomainTemplate>,
    hash: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTemplates {
    empty: String,
    separator: String,
    domains: BTreeMap<String, RawDomainTemplate>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDomainTemplate {
    intro: String,
    slots: Vec<RawSlotPhrase>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSlotPhrase {
    slot: String,
    phrase: String,
}

impl TemplateSet {
    pub fn load(path: &Path, ontology: &Ontology) -> Result<Self> {
        let text = read_to_string(path)?;
        Self::from_toml(&text, ontology).map_err(|e| match e {
            Error::Parse { message, .. } => Error::parse(path.display().to_string(), message),
            other => other,
        })
    }

    pub fn builtin(ontology: &Ontology) -> Self {
        Self::from_toml(resources::TEMPLATES, ontology).expect("bundled templates are valid")
    }

    /// Parses a template file and checks that every ontology slot has exactly
    /// one phrase with a single `{value}` placeholder.
    pub fn from_toml(text: &str, ontology: &Ontology) -> Result<Self> {
        let raw: RawTemplates =
            toml::from_str(text).map_err(|e| Error::parse("templates", e.to_string()))?;
        let empty = tokenize(&raw.empty);
        if empty.is_empty() {
            return Err(Error::parse("templates", "empty-state sentence is blank"));
        }
        let mut domains = BTreeMap::new();
        for (dname, rd) in raw.domains {
            let Some(dspec) = ontology.domain(&dname) else {
                return Err(Error::parse("templates", format!("unknown domain {dname:?}")));
            };
            if rd.intro.contains('{') {
                return Err(Error::parse("templates", format!("{dname}: intro has a placeholder")));
            }
            let mut slots = Vec::new();
            for rs in rd.slots {
                if !dspec.slots.contains_key(&rs.slot) {
                    return Err(Error::parse(
                        "templates",
                        format!("unknown slot {dname}-{}", rs.slot),
                    ));
                }
                if slots.iter().any(|p: &SlotPhrase| p.slot == rs.slot) {
                    return Err(Error::parse(
                        "templates",
                        format!("duplicate phrase for {dname}-{}", rs.slot),
                    ));
                }
                let Some((before, after)) = rs.phrase.split_once(PLACEHOLDER) else {
                    return Err(Error::parse(
                        "templates",
                        format!("{dname}-{}: phrase lacks {PLACEHOLDER}", rs.slot),
                    ));
                };
                if before.contains('{') || after.contains('{') {
                    return Err(Error::parse(
                        "templates",
                        format!("{dname}-{}: unbound placeholder", rs.slot),
                    ));
                }
                slots.push(SlotPhrase {
                    slot: rs.slot,
                    before: before.trim().to_owned(),
                    after: after.trim().to_owned(),
                });
            }
            domains.insert(
                dname,
                DomainTemplate {
                    intro: rd.intro,
                    slots,
                },
            );
        }
        for (d, s) in ontology.slot_keys() {
            let realized = domains
                .get(&d)
                .is_some_and(|t| t.slots.iter().any(|p| p.slot == s));
            if !realized {
                return Err(Error::parse(
                    "templates",
                    format!("no phrase for ontology slot {d}-{s}"),
                ));
            }
        }
        Ok(TemplateSet {
            empty,
            separator: raw.separator,
            domains,
            hash: resources::hash_text(text),
        })
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn empty_sentence(&self) -> &[Token] {
        &self.empty
    }
}

/// Renders `state` deterministically: one sentence per domain in domain-name
/// order, slot phrases in template order, values in canonical form.
pub fn verbalize(state: &StructuredState, templates: &TemplateSet) -> Result<NLStateDescription> {
    if state.is_empty() {
        return Ok(NLStateDescription::new(templates.empty.clone()));
    }
    let mut sentences = Vec::new();
    for domain in state.domains() {
        let template = templates.domains.get(domain).ok_or_else(|| {
            Error::contract(format!("no template for domain {domain:?}"))
        })?;
        let sub = state.restrict(domain);
        for e in sub.iter() {
            if !template.slots.iter().any(|p| p.slot == e.slot) {
                return Err(Error::contract(format!(
                    "no template phrase for {}-{}",
                    e.domain, e.slot
                )));
            }
        }
        let mut sentence = template.intro.clone();
        for phrase in &template.slots {
            if let Some(value) = sub.get(domain, &phrase.slot) {
                for part in [phrase.before.as_str(), value, phrase.after.as_str()] {
                    if !part.is_empty() {
                        sentence.push(' ');
                        sentence.push_str(part);
                    }
                }
            }
        }
        sentences.push(sentence);
    }
    let joined = sentences.join(&format!(" {} ", templates.separator));
    Ok(NLStateDescription::from_text(&joined))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SlotValue;

    fn setup() -> (Ontology, TemplateSet) {
        let o = Ontology::builtin();
        let t = TemplateSet::builtin(&o);
        (o, t)
    }

    pub(crate) fn table6_state() -> StructuredState {
        [
            SlotValue::new("train", "departure", "london kings cross"),
            SlotValue::new("train", "destination", "cambridge"),
            SlotValue::new("train", "day", "monday"),
            SlotValue::new("train", "leaveat", "07:00"),
        ]
        .into_iter()
        .collect()
    }

    #[test]
    fn empty_state_sentence() {
        let (_, t) = setup();
        let nl = verbalize(&StructuredState::new(), &t).unwrap();
        assert_eq!(nl.text(), "user has not stated any constraints");
    }

    #[test]
    fn train_state() {
        let (_, t) = setup();
        let nl = verbalize(&table6_state(), &t).unwrap();
        assert_eq!(
            nl.text(),
            "user is looking for a train from london kings cross to cambridge departing at 07:00 on monday"
        );
    }

    #[test]
    fn restaurant_food() {
        let (_, t) = setup();
        let s: StructuredState = [SlotValue::new("restaurant", "food", "italian")]
            .into_iter()
            .collect();
        assert_eq!(
            verbalize(&s, &t).unwrap().text(),
            "user wants a restaurant serving italian food"
        );
    }

    #[test]
    fn multi_domain_joined_in_domain_order() {
        let (_, t) = setup();
        let s: StructuredState = [
            SlotValue::new("train", "day", "friday"),
            SlotValue::new("hotel", "stars", "4"),
        ]
        .into_iter()
        .collect();
        assert_eq!(
            verbalize(&s, &t).unwrap().text(),
            "user is looking for a place to stay rated 4 stars . user is looking for a train on friday"
        );
    }

    #[test]
    fn unrealized_slot_is_contract_violation() {
        let (_, t) = setup();
        let s: StructuredState = [SlotValue::new("train", "colour", "red")]
            .into_iter()
            .collect();
        assert!(matches!(verbalize(&s, &t), Err(Error::Contract(_))));
    }

    #[test]
    fn template_file_must_cover_ontology() {
        let o = Ontology::builtin();
        let text = r#"
            empty = "nothing"
            separator = "."
            [domains.train]
            intro = "a train"
            slots = [{ slot = "day", phrase = "on {value}" }]
        "#;
        assert!(TemplateSet::from_toml(text, &o).is_err());
    }
}
