//! Rule-based slot-filling baseline over raw user utterances.

use crate::canonicalizer::RuleSet;
use crate::model::{DialogueHistory, Speaker, StructuredState, Turn};
use crate::ontology::Ontology;

/// Extraction rules for utterances. Updates always override on a new mention.
#[derive(Debug, Clone)]
pub struct RuleDstConfig {
    pub rules: RuleSet,
}

impl RuleDstConfig {
    pub fn builtin(ontology: &Ontology) -> Self {
        RuleDstConfig {
            rules: RuleSet::builtin_utterance(ontology),
        }
    }
}

/// Tracker state carried between turns: the belief state plus the domain
/// last named by the user.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrackerState {
    pub state: StructuredState,
    pub active_domain: Option<String>,
}

impl TrackerState {
    /// Folds one turn in. System turns are ignored.
    pub fn update(&mut self, turn: &Turn, config: &RuleDstConfig, ontology: &Ontology) {
        if turn.speaker != Speaker::User {
            return;
        }
        config.rules.extract_into(
            &turn.utterance,
            ontology,
            &mut self.active_domain,
            &mut self.state,
        );
    }
}

/// Runs the tracker over every user turn of `history` in order.
pub fn track(history: &DialogueHistory, config: &RuleDstConfig, ontology: &Ontology) -> StructuredState {
    let mut tracker = TrackerState::default();
    for turn in history.turns() {
        tracker.update(turn, config, ontology);
    }
    tracker.state
}
