//! Random ontology states and the synthetic dialogue corpus built from them.

use rand::seq::index::sample;
use rand::seq::IndexedRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{
    AnnotatedTurnExample, Corpus, DialogueHistory, Speaker, SlotValue, Split, StructuredState,
    Turn,
};
use crate::ontology::Ontology;
use crate::seed;
use crate::verbalizer::{verbalize, TemplateSet};

/// Draws a random state: up to three domains, each with a random non-empty
/// subset of its slots, values drawn from the slot's pool.
pub fn sample_state<R: Rng + ?Sized>(ontology: &Ontology, rng: &mut R) -> StructuredState {
    let domains: Vec<_> = ontology.domains().iter().collect();
    let n_domains = rng.random_range(0..=3.min(domains.len()));
    let mut state = StructuredState::new();
    for di in sample(rng, domains.len(), n_domains) {
        let (dname, dspec) = domains[di];
        let slots: Vec<_> = dspec.slots.iter().collect();
        let n_slots = rng.random_range(1..=slots.len());
        for si in sample(rng, slots.len(), n_slots) {
            let (sname, sspec) = slots[si];
            let value = sspec
                .sample_pool()
                .choose(rng)
                .expect("ontology pools are non-empty");
            state.insert(SlotValue::new(dname, sname, value));
        }
    }
    state
}

const OPENERS: &[&str] = &[
    "i need",
    "i am looking for",
    "please find me",
    "i would like",
    "can you help me find",
];

const FOLLOW_UPS: &[&str] = &["actually for", "also for", "and for"];

const SYSTEM_REPLIES: &[&str] = &[
    "sure , what else do you need ?",
    "i can help with that .",
    "is there anything else ?",
    "okay , let me check .",
];

/// Builds `n_dialogues` dialogues of one to four user turns. Each user turn
/// names one domain and states or revises one or two of its slots; the gold
/// state accumulates across turns.
pub fn generate_synthetic_corpus(
    ontology: &Ontology,
    templates: &TemplateSet,
    n_dialogues: usize,
    seed: u64,
) -> Result<Corpus> {
    if n_dialogues == 0 {
        return Err(Error::contract("n_dialogues must be at least 1"));
    }
    let domains: Vec<_> = ontology
        .domains()
        .iter()
        .filter(|(_, d)| !d.slots.is_empty() && !d.mentions.is_empty())
        .collect();
    if domains.is_empty() {
        return Err(Error::contract("ontology has no usable domains"));
    }

    let mut examples = Vec::new();
    for d in 0..n_dialogues {
        let dialogue_id = format!("syn-{d:05}");
        let mut rng = seed::stream(seed, &["synthetic".into(), dialogue_id.as_str().into()]);
        let n_user_turns = rng.random_range(1..=4);
        let n_domains = rng.random_range(1..=2.min(domains.len()));
        let chosen: Vec<_> = sample(&mut rng, domains.len(), n_domains)
            .into_iter()
            .map(|i| domains[i])
            .collect();

        let mut turns: Vec<Turn> = Vec::new();
        let mut state = StructuredState::new();
        let mut mentioned = std::collections::HashSet::new();
        for u in 0..n_user_turns {
            if u > 0 {
                let reply = SYSTEM_REPLIES.choose(&mut rng).expect("non-empty");
                turns.push(Turn::new(Speaker::System, reply, turns.len()));
            }
            let &(dname, dspec) = if u == 0 {
                &chosen[0]
            } else {
                chosen.choose(&mut rng).expect("non-empty")
            };
            let mention = dspec.mentions.choose(&mut rng).expect("non-empty");
            let opener = if mentioned.insert(dname.clone()) {
                OPENERS.choose(&mut rng).expect("non-empty")
            } else {
                FOLLOW_UPS.choose(&mut rng).expect("non-empty")
            };
            let mut utterance = format!("{opener} {mention}");

            let slots: Vec<_> = dspec.slots.iter().filter(|(_, s)| !s.patterns.is_empty()).collect();
            let n_slots = rng.random_range(1..=2.min(slots.len()));
            let mut picked = sample(&mut rng, slots.len(), n_slots).into_vec();
            picked.sort_unstable();
            for si in picked {
                let (sname, sspec) = slots[si];
                let value = sspec.sample_pool().choose(&mut rng).expect("non-empty");
                let pattern = sspec.patterns.choose(&mut rng).expect("non-empty");
                utterance.push(' ');
                utterance.push_str(&pattern.replace("{value}", value));
                state.insert(SlotValue::new(dname, sname, value));
            }
            turns.push(Turn::new(Speaker::User, &utterance, turns.len()));

            let history = DialogueHistory::new(dialogue_id.clone(), turns.clone())?;
            examples.push(AnnotatedTurnExample {
                history,
                gold_nl: verbalize(&state, templates)?,
                gold_structured: state.clone(),
            });
        }
    }
    Ok(Corpus::new("synthetic", Split::Train, examples))
}
