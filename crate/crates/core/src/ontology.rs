//! Domains, slots, permissible values and the surface tables used to
//! normalize and realize them.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use crate::canonicalizer::normalize_time;
use crate::error::{read_to_string, Error, Result};
use crate::model::{detokenize, tokenize, SlotKey, StructuredState};
use crate::resources;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FreeKind {
    Text,
    Time,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ValueSpec {
    Closed(Vec<String>),
    /// Free-form values; `samples` feed synthetic state generation.
    Free { kind: FreeKind, samples: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotSpec {
    pub values: ValueSpec,
    /// Utterance-side phrases that introduce a value for this slot.
    pub patterns: Vec<String>,
}

impl SlotSpec {
    pub fn is_time(&self) -> bool {
        matches!(
            self.values,
            ValueSpec::Free {
                kind: FreeKind::Time,
                ..
            }
        )
    }

    /// Values a sampler may draw for this slot.
    pub fn sample_pool(&self) -> &[String] {
        match &self.values {
            ValueSpec::Closed(v) => v,
            ValueSpec::Free { samples, .. } => samples,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainSpec {
    /// Utterance-side phrases naming the domain ("a train").
    pub mentions: Vec<String>,
    pub slots: BTreeMap<String, SlotSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ontology {
    domains: BTreeMap<String, DomainSpec>,
    synonyms: BTreeMap<String, String>,
    taskmaster_labels: BTreeMap<String, SlotKey>,
    hash: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOntology {
    #[serde(default)]
    synonyms: BTreeMap<String, String>,
    #[serde(default)]
    taskmaster_labels: BTreeMap<String, String>,
    domains: BTreeMap<String, RawDomain>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDomain {
    #[serde(default)]
    mentions: Vec<String>,
    slots: BTreeMap<String, RawSlot>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSlot {
    values: Option<Vec<String>>,
    free: Option<FreeKind>,
    #[serde(default)]
    samples: Vec<String>,
    #[serde(default)]
    patterns: Vec<String>,
}

fn is_name(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

fn canonical_text(s: &str) -> String {
    detokenize(&tokenize(s))
}

impl Ontology {
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::parse(path.display().to_string(), message),
            other => other,
        })
    }

    /// The bundled seven-domain ontology.
    pub fn builtin() -> Self {
        Self::from_toml(resources::ONTOLOGY).expect("bundled ontology is valid")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: RawOntology =
            toml::from_str(text).map_err(|e| Error::parse("ontology", e.to_string()))?;
        let mut domains = BTreeMap::new();
        for (dname, rd) in raw.domains {
            if !is_name(&dname) {
                return Err(Error::parse("ontology", format!("bad domain name {dname:?}")));
            }
            let mut slots = BTreeMap::new();
            for (sname, rs) in rd.slots {
                if !is_name(&sname) {
                    return Err(Error::parse("ontology", format!("bad slot name {sname:?}")));
                }
                let ctx = format!("{dname}-{sname}");
                let values = match (rs.values, rs.free) {
                    (Some(values), None) => {
                        if values.is_empty() {
                            return Err(Error::parse("ontology", format!("{ctx}: empty value list")));
                        }
                        for v in &values {
                            if canonical_text(v) != *v {
                                return Err(Error::parse(
                                    "ontology",
                                    format!("{ctx}: value {v:?} is not in canonical form"),
                                ));
                            }
                        }
                        ValueSpec::Closed(values)
                    }
                    (None, Some(kind)) => {
                        for v in &rs.samples {
                            let ok = match kind {
                                FreeKind::Time => normalize_time(v).as_deref() == Some(v.as_str()),
                                FreeKind::Text => canonical_text(v) == *v && !v.is_empty(),
                            };
                            if !ok {
                                return Err(Error::parse(
                                    "ontology",
                                    format!("{ctx}: sample {v:?} is not in canonical form"),
                                ));
                            }
                        }
                        if rs.samples.is_empty() {
                            return Err(Error::parse("ontology", format!("{ctx}: free slot needs samples")));
                        }
                        ValueSpec::Free {
                            kind,
                            samples: rs.samples,
                        }
                    }
                    _ => {
                        return Err(Error::parse(
                            "ontology",
                            format!("{ctx}: exactly one of `values` or `free` is required"),
                        ))
                    }
                };
                slots.insert(
                    sname,
                    SlotSpec {
                        values,
                        patterns: rs.patterns,
                    },
                );
            }
            domains.insert(
                dname,
                DomainSpec {
                    mentions: rd.mentions,
                    slots,
                },
            );
        }

        let mut synonyms = BTreeMap::new();
        for (surface, target) in raw.synonyms {
            let surface = canonical_text(&surface);
            let in_some_list = domains.values().flat_map(|d| d.slots.values()).any(|s| {
                matches!(&s.values, ValueSpec::Closed(v) if v.contains(&target))
            });
            if !in_some_list {
                return Err(Error::parse(
                    "ontology",
                    format!("synonym target {target:?} is not a closed-set value"),
                ));
            }
            synonyms.insert(surface, target);
        }

        let mut taskmaster_labels = BTreeMap::new();
        for (label, target) in raw.taskmaster_labels {
            let (d, s) = target.split_once('-').ok_or_else(|| {
                Error::parse("ontology", format!("label target {target:?} is not domain-slot"))
            })?;
            if domains.get(d).and_then(|dd| dd.slots.get(s)).is_none() {
                return Err(Error::parse(
                    "ontology",
                    format!("label {label:?} maps to unknown slot {target:?}"),
                ));
            }
            taskmaster_labels.insert(label, (d.to_owned(), s.to_owned()));
        }

        Ok(Ontology {
            domains,
            synonyms,
            taskmaster_labels,
            hash: resources::hash_text(text),
        })
    }

    /// SHA-256 of the source text.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn domains(&self) -> &BTreeMap<String, DomainSpec> {
        &self.domains
    }

    pub fn domain(&self, domain: &str) -> Option<&DomainSpec> {
        self.domains.get(domain)
    }

    pub fn slot(&self, domain: &str, slot: &str) -> Option<&SlotSpec> {
        self.domains.get(domain).and_then(|d| d.slots.get(slot))
    }

    /// Every `(domain, slot)` pair in canonical order.
    pub fn slot_keys(&self) -> Vec<SlotKey> {
        self.domains
            .iter()
            .flat_map(|(d, spec)| spec.slots.keys().map(move |s| (d.clone(), s.clone())))
            .collect()
    }

    pub fn synonyms(&self) -> &BTreeMap<String, String> {
        &self.synonyms
    }

    pub fn taskmaster_label(&self, label: &str) -> Option<&SlotKey> {
        self.taskmaster_labels.get(label)
    }

    /// Maps a raw value to its canonical form for `(domain, slot)`, or `None`
    /// when the slot is unknown or the value is not permissible.
    pub fn normalize_value(&self, domain: &str, slot: &str, raw: &str) -> Option<String> {
        let spec = self.slot(domain, slot)?;
        let mut value = canonical_text(raw);
        if value.is_empty() {
            return None;
        }
        if let Some(target) = self.synonyms.get(&value) {
            if matches!(&spec.values, ValueSpec::Closed(v) if v.contains(target)) {
                value = target.clone();
            }
        }
        match &spec.values {
            ValueSpec::Closed(values) => values.contains(&value).then_some(value),
            ValueSpec::Free {
                kind: FreeKind::Time,
                ..
            } => normalize_time(&value),
            ValueSpec::Free {
                kind: FreeKind::Text,
                ..
            } => Some(value),
        }
    }

    pub fn validate_state(&self, state: &StructuredState) -> Result<()> {
        for e in state.iter() {
            let spec = self.slot(&e.domain, &e.slot).ok_or_else(|| {
                Error::contract(format!("unknown slot {}-{}", e.domain, e.slot))
            })?;
            let ok = match &spec.values {
                ValueSpec::Closed(values) => values.contains(&e.value),
                ValueSpec::Free {
                    kind: FreeKind::Time,
                    ..
                } => normalize_time(&e.value).as_deref() == Some(e.value.as_str()),
                ValueSpec::Free {
                    kind: FreeKind::Text,
                    ..
                } => !e.value.is_empty() && canonical_text(&e.value) == e.value,
            };
            if !ok {
                return Err(Error::contract(format!(
                    "value {:?} not permitted for {}-{}",
                    e.value, e.domain, e.slot
                )));
            }
        }
        Ok(())
    }
}
