//! Seeded word-replacement noise for user utterances.
//!
//! Each token position owns a random stream keyed by
//! `(seed, dialogue_id, turn_index, position)`. The stream yields a uniform
//! draw `u` and a pool index; the token is replaced when `u < rate`. Because
//! the draws do not depend on the rate, the positions replaced at a lower
//! rate are a subset of those replaced at a higher one.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AnnotatedTurnExample, Corpus, DialogueHistory, Speaker, Token, Turn};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseConfig {
    pub rate: f64,
    pub pool: Vec<Token>,
    pub seed: u64,
}

impl NoiseConfig {
    pub fn new(rate: f64, pool: Vec<Token>, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::contract(format!("noise rate {rate} outside [0, 1]")));
        }
        if rate > 0.0 && pool.is_empty() {
            return Err(Error::contract("noise pool is empty"));
        }
        Ok(NoiseConfig { rate, pool, seed })
    }
}

/// Summary of one noising pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseStats {
    pub tokens: usize,
    pub replaced: usize,
}

fn perturb(turn: &Turn, dialogue_id: &str, config: &NoiseConfig, stats: &mut NoiseStats) -> Turn {
    if turn.speaker != Speaker::User || config.rate == 0.0 {
        return turn.clone();
    }
    let utterance = turn
        .utterance
        .iter()
        .enumerate()
        .map(|(pos, tok)| {
            stats.tokens += 1;
            let mut rng = seed::stream(
                config.seed,
                &["noise".into(), dialogue_id.into(), turn.turn_index.into(), pos.into()],
            );
            let u: f64 = rng.random();
            let pick = rng.random_range(0..config.pool.len());
            if u < config.rate {
                stats.replaced += 1;
                config.pool[pick].clone()
            } else {
                tok.clone()
            }
        })
        .collect();
    Turn {
        speaker: turn.speaker,
        utterance,
        turn_index: turn.turn_index,
    }
}

/// Replaces each token of a user turn with probability `rate` by a uniform
/// draw from the pool. System turns pass through unchanged.
pub fn inject_noise(turn: &Turn, dialogue_id: &str, config: &NoiseConfig) -> Turn {
    perturb(turn, dialogue_id, config, &mut NoiseStats::default())
}

pub fn noise_history(history: &DialogueHistory, config: &NoiseConfig) -> (DialogueHistory, NoiseStats) {
    let mut stats = NoiseStats::default();
    let turns = history
        .turns()
        .iter()
        .map(|t| perturb(t, history.dialogue_id(), config, &mut stats))
        .collect();
    let noisy = history
        .with_turns(turns)
        .expect("noise preserves turn structure");
    (noisy, stats)
}

/// Noises the inputs of every example; gold annotations are untouched.
pub fn noise_corpus(corpus: &Corpus, config: &NoiseConfig) -> (Corpus, NoiseStats) {
    let mut total = NoiseStats::default();
    let examples = corpus
        .examples
        .iter()
        .map(|ex| {
            let (history, stats) = noise_history(&ex.history, config);
            total.tokens += stats.tokens;
            total.replaced += stats.replaced;
            AnnotatedTurnExample {
                history,
                ..ex.clone()
            }
        })
        .collect();
    (
        Corpus {
            examples,
            ..corpus.clone()
        },
        total,
    )
}
