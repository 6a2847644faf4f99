//! Corpus readers and writers: MultiWOZ-style and Taskmaster-style archives,
//! the canonical JSON-lines format, and seeded dialogue-level splits.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{read_to_string, Error, Result};
use crate::model::{
    detokenize, AnnotatedTurnExample, Corpus, DialogueHistory, SlotValue, Speaker, Split,
    StructuredState, Turn,
};
use crate::ontology::Ontology;
use crate::seed;
use crate::verbalizer::{verbalize, TemplateSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Multiwoz21,
    Taskmaster1,
    Canonical,
}

/// A non-fatal ingestion problem.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipEntry {
    pub reason: String,
    pub dialogue_id: String,
    pub fragment: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SkipReport {
    pub entries: Vec<SkipEntry>,
}

impl SkipReport {
    fn push(&mut self, reason: impl Into<String>, dialogue_id: &str, fragment: impl Into<String>) {
        self.entries.push(SkipEntry {
            reason: reason.into(),
            dialogue_id: dialogue_id.to_string(),
            fragment: fragment.into(),
        });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_jsonl(&self) -> String {
        self.entries
            .iter()
            .map(|e| serde_json::to_string(e).expect("skip entry serializes") + "\n")
            .collect()
    }
}

const UNSET: &[&str] = &["", "not mentioned", "none"];

fn parse_json(path: &Path) -> Result<Value> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))
}

fn malformed(dialogue_id: &str, msg: &str) -> Error {
    Error::parse(format!("dialogue {dialogue_id}"), msg)
}

/// Normalizes one raw annotation into `state`, reporting anything the
/// ontology does not know.
fn add_entry(
    ontology: &Ontology,
    state: &mut StructuredState,
    skips: &mut SkipReport,
    dialogue_id: &str,
    domain: &str,
    slot: &str,
    raw: &str,
) {
    let raw = raw.trim().to_lowercase();
    if UNSET.contains(&raw.as_str()) {
        return;
    }
    let fragment = format!("{domain}-{slot}={raw}");
    if ontology.slot(domain, slot).is_none() {
        skips.push("unknown slot", dialogue_id, fragment);
        return;
    }
    match ontology.normalize_value(domain, slot, &raw) {
        Some(v) => {
            state.insert(SlotValue::new(domain, slot, &v));
        }
        None => skips.push("value outside ontology", dialogue_id, fragment),
    }
}

fn multiwoz_belief(
    metadata: &Value,
    ontology: &Ontology,
    skips: &mut SkipReport,
    dialogue_id: &str,
) -> Result<StructuredState> {
    let domains = metadata
        .as_object()
        .ok_or_else(|| malformed(dialogue_id, "system metadata is not an object"))?;
    let mut state = StructuredState::new();
    for (domain, parts) in domains {
        for part in ["semi", "book"] {
            let Some(slots) = parts.get(part).and_then(Value::as_object) else {
                continue;
            };
            for (slot, value) in slots {
                if slot == "booked" {
                    continue;
                }
                let Some(raw) = value.as_str() else {
                    return Err(malformed(dialogue_id, &format!("non-string value for {domain}-{slot}")));
                };
                add_entry(ontology, &mut state, skips, dialogue_id, domain, &slot.to_lowercase(), raw);
            }
        }
    }
    Ok(state)
}

/// Reads a MultiWOZ-2.1-style archive: `{dialogue_id: {log: [{text, metadata}]}}`
/// with user turns at even log positions. The state of a user turn is the
/// belief annotated on the system turn that follows it.
pub fn load_multiwoz(
    path: &Path,
    ontology: &Ontology,
    templates: &TemplateSet,
) -> Result<(Corpus, SkipReport)> {
    let root = parse_json(path)?;
    let dialogues = root
        .as_object()
        .ok_or_else(|| Error::parse(path.display().to_string(), "top level is not an object"))?;
    let mut skips = SkipReport::default();
    let mut examples = Vec::new();
    // serde_json maps iterate in key order, so output order is stable.
    for (dialogue_id, body) in dialogues {
        let log = body
            .get("log")
            .and_then(Value::as_array)
            .ok_or_else(|| malformed(dialogue_id, "missing log array"))?;
        let mut turns = Vec::with_capacity(log.len());
        for (i, item) in log.iter().enumerate() {
            let text = item
                .get("text")
                .and_then(Value::as_str)
                .ok_or_else(|| malformed(dialogue_id, &format!("log entry {i} has no text")))?;
            let speaker = if i % 2 == 0 { Speaker::User } else { Speaker::System };
            turns.push(Turn::new(speaker, text, i));
        }
        if turns.is_empty() {
            continue;
        }
        let full = DialogueHistory::new(dialogue_id.clone(), turns)
            .map_err(|e| malformed(dialogue_id, &e.to_string()))?;
        for user_index in (0..log.len()).step_by(2) {
            let Some(system) = log.get(user_index + 1) else {
                skips.push("user turn without following system turn", dialogue_id, user_index.to_string());
                continue;
            };
            let metadata = system
                .get("metadata")
                .ok_or_else(|| malformed(dialogue_id, &format!("log entry {} has no metadata", user_index + 1)))?;
            let state = multiwoz_belief(metadata, ontology, &mut skips, dialogue_id)?;
            examples.push(AnnotatedTurnExample {
                history: full.prefix(user_index)?,
                gold_nl: verbalize(&state, templates)?,
                gold_structured: state,
            });
        }
    }
    Ok((Corpus::new("multiwoz21", Split::Train, examples), skips))
}

fn taskmaster_speaker(raw: &str) -> Option<Speaker> {
    match raw.to_ascii_uppercase().as_str() {
        "USER" => Some(Speaker::User),
        "ASSISTANT" | "SYSTEM" => Some(Speaker::System),
        _ => None,
    }
}

/// Reads a Taskmaster-1-style array of conversations. Segment labels are
/// mapped through the ontology's label table (a trailing `.accept` is
/// ignored); the state after each user utterance accumulates every segment
/// seen so far, later mentions overriding earlier ones.
pub fn load_taskmaster(
    path: &Path,
    ontology: &Ontology,
    templates: &TemplateSet,
) -> Result<(Corpus, SkipReport)> {
    let root = parse_json(path)?;
    let conversations = root
        .as_array()
        .ok_or_else(|| Error::parse(path.display().to_string(), "top level is not an array"))?;
    let mut skips = SkipReport::default();
    let mut examples = Vec::new();
    for (ci, conv) in conversations.iter().enumerate() {
        let dialogue_id = conv
            .get("conversation_id")
            .and_then(Value::as_str)
            .map(str::to_string)
            .unwrap_or_else(|| format!("conversation-{ci}"));
        let utterances = conv
            .get("utterances")
            .and_then(Value::as_array)
            .ok_or_else(|| malformed(&dialogue_id, "missing utterances array"))?;
        let mut turns = Vec::new();
        let mut state = StructuredState::new();
        let mut user_states = Vec::new();
        for (i, u) in utterances.iter().enumerate() {
            let text = u
                .get("text")
                .and_then(Value::as_str)
                .ok_or_else(|| malformed(&dialogue_id, &format!("utterance {i} has no text")))?;
            let speaker = u
                .get("speaker")
                .and_then(Value::as_str)
                .and_then(taskmaster_speaker)
                .ok_or_else(|| malformed(&dialogue_id, &format!("utterance {i} has no valid speaker")))?;
            turns.push(Turn::new(speaker, text, i));
            for seg in u.get("segments").and_then(Value::as_array).into_iter().flatten() {
                let value = seg.get("text").and_then(Value::as_str).unwrap_or("");
                for ann in seg.get("annotations").and_then(Value::as_array).into_iter().flatten() {
                    let Some(name) = ann.get("name").and_then(Value::as_str) else {
                        continue;
                    };
                    let label = name.strip_suffix(".accept").unwrap_or(name);
                    match ontology.taskmaster_label(label) {
                        Some((domain, slot)) => {
                            add_entry(ontology, &mut state, &mut skips, &dialogue_id, domain, slot, value)
                        }
                        None => skips.push("unmapped label", &dialogue_id, format!("{name}={value}")),
                    }
                }
            }
            if speaker == Speaker::User {
                user_states.push((i, state.clone()));
            }
        }
        if user_states.is_empty() {
            continue;
        }
        let full = DialogueHistory::new(dialogue_id.clone(), turns)
            .map_err(|e| malformed(&dialogue_id, &e.to_string()))?;
        for (i, state) in user_states {
            examples.push(AnnotatedTurnExample {
                history: full.prefix(i)?,
                gold_nl: verbalize(&state, templates)?,
                gold_structured: state,
            });
        }
    }
    Ok((Corpus::new("taskmaster1", Split::Train, examples), skips))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct CanonicalTurn {
    speaker: Speaker,
    text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct CanonicalState {
    turn_index: usize,
    entries: Vec<SlotValue>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct CanonicalDialogue {
    dialogue_id: String,
    turns: Vec<CanonicalTurn>,
    states: Vec<CanonicalState>,
}

/// Renders a corpus in the canonical format: one dialogue per line, in
/// first-appearance order.
pub fn to_canonical(corpus: &Corpus) -> Result<String> {
    let mut grouped: Vec<(String, Vec<&AnnotatedTurnExample>)> = Vec::new();
    let mut index: HashMap<&str, usize> = HashMap::new();
    for ex in &corpus.examples {
        let slot = *index.entry(ex.dialogue_id()).or_insert_with(|| {
            grouped.push((ex.dialogue_id().to_string(), Vec::new()));
            grouped.len() - 1
        });
        grouped[slot].1.push(ex);
    }
    let mut out = String::new();
    for (dialogue_id, exs) in grouped {
        let longest = exs
            .iter()
            .max_by_key(|e| e.history.turns().len())
            .expect("group is non-empty");
        let turns = longest.history.turns();
        for e in &exs {
            if e.history.turns() != &turns[..e.history.turns().len()] {
                return Err(Error::contract(format!(
                    "examples of dialogue {dialogue_id} do not share one turn sequence"
                )));
            }
        }
        let record = CanonicalDialogue {
            dialogue_id,
            turns: turns
                .iter()
                .map(|t| CanonicalTurn {
                    speaker: t.speaker,
                    text: detokenize(&t.utterance),
                })
                .collect(),
            states: exs
                .iter()
                .map(|e| CanonicalState {
                    turn_index: e.turn_index(),
                    entries: e.gold_structured.entries(),
                })
                .collect(),
        };
        writeln!(out, "{}", serde_json::to_string(&record).expect("record serializes"))
            .expect("writing to a String");
    }
    Ok(out)
}

pub fn write_canonical(corpus: &Corpus, path: &Path) -> Result<()> {
    let text = to_canonical(corpus)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parses canonical text. Values are normalized and validated against the
/// ontology; gold descriptions are regenerated with `templates`.
pub fn from_canonical(
    text: &str,
    context: &str,
    name: &str,
    split: Split,
    ontology: &Ontology,
    templates: &TemplateSet,
) -> Result<Corpus> {
    let mut examples = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let at = || format!("{context}:{}", ln + 1);
        let record: CanonicalDialogue =
            serde_json::from_str(line).map_err(|e| Error::parse(at(), e.to_string()))?;
        let turns = record
            .turns
            .iter()
            .enumerate()
            .map(|(i, t)| Turn::new(t.speaker, &t.text, i))
            .collect();
        let full = DialogueHistory::new(record.dialogue_id.clone(), turns)
            .map_err(|e| Error::parse(at(), e.to_string()))?;
        for s in record.states {
            let history = full.prefix(s.turn_index).map_err(|e| Error::parse(at(), e.to_string()))?;
            if history.turns()[s.turn_index].speaker != Speaker::User {
                return Err(Error::parse(at(), format!("state at turn {} is not on a user turn", s.turn_index)));
            }
            let mut state = StructuredState::new();
            for e in s.entries {
                let v = ontology.normalize_value(&e.domain, &e.slot, &e.value).ok_or_else(|| {
                    Error::parse(at(), format!("invalid entry {}-{}={}", e.domain, e.slot, e.value))
                })?;
                state.insert(SlotValue::new(&e.domain, &e.slot, &v));
            }
            examples.push(AnnotatedTurnExample {
                history,
                gold_nl: verbalize(&state, templates)?,
                gold_structured: state,
            });
        }
    }
    Ok(Corpus::new(name, split, examples))
}

pub fn read_canonical(
    path: &Path,
    name: &str,
    split: Split,
    ontology: &Ontology,
    templates: &TemplateSet,
) -> Result<Corpus> {
    let text = read_to_string(path)?;
    from_canonical(&text, &path.display().to_string(), name, split, ontology, templates)
}

/// Dialogue ids per split, as written next to split corpora.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub ratios: [f64; 3],
    pub train: Vec<String>,
    pub dev: Vec<String>,
    pub test: Vec<String>,
}

impl SplitManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }
}

/// Split sizes for `n` items: floor of each share, then the remaining items
/// go to the largest fractional remainders (earlier split wins ties).
pub fn split_sizes(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut sizes = [0usize; 3];
    for (s, e) in sizes.iter_mut().zip(&exact) {
        *s = (e + 1e-9).floor() as usize;
    }
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - sizes[a] as f64;
        let rb = exact[b] - sizes[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let assigned: usize = sizes.iter().sum();
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    sizes
}

/// Assigns whole dialogues to train/dev/test by a seeded shuffle.
pub fn split_corpus(corpus: &Corpus, ratios: [f64; 3], seed: u64) -> Result<([Corpus; 3], SplitManifest)> {
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::contract(format!("split ratios {ratios:?} must be in [0, 1] and sum to 1")));
    }
    if corpus.is_empty() {
        return Err(Error::contract("cannot split an empty corpus"));
    }
    let mut ids = corpus.dialogue_ids();
    ids.sort();
    ids.shuffle(&mut seed::stream(seed, &["split".into()]));
    let sizes = split_sizes(ids.len(), ratios);
    let mut assignment: BTreeMap<&str, usize> = BTreeMap::new();
    let mut groups: [Vec<String>; 3] = Default::default();
    let mut cursor = 0;
    for (s, &size) in sizes.iter().enumerate() {
        for id in &ids[cursor..cursor + size] {
            assignment.insert(id, s);
            groups[s].push(id.clone());
        }
        cursor += size;
    }
    for g in &mut groups {
        g.sort();
    }
    let splits = [Split::Train, Split::Dev, Split::Test];
    let corpora = splits.map(|split| {
        let idx = splits.iter().position(|s| *s == split).expect("listed");
        let examples = corpus
            .examples
            .iter()
            .filter(|e| assignment[e.dialogue_id()] == idx)
            .cloned()
            .collect();
        Corpus::new(corpus.name.clone(), split, examples)
    });
    let [train, dev, test] = groups;
    Ok((corpora, SplitManifest { seed, ratios, train, dev, test }))
}
