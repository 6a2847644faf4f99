//! Autoregressive generation over any [`ConditionalSequenceModel`].
//!
//! Generation starts right after the condition (whose final `state:` tag is
//! the start-of-description marker) and stops at EOS or after `max_len`
//! tokens. Marker ids reported by the model are masked to zero probability
//! and the rest renormalized before any strategy looks at a step. Ties are
//! broken by token id, then lexicographically by id sequence.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{ConditionalSequenceModel, TokenId, Vocabulary};
use crate::model::NLStateDescription;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Greedy,
    Beam,
    Nucleus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub strategy: Strategy,
    pub beam_width: usize,
    pub nucleus_p: f64,
    pub max_len: usize,
    pub seed: u64,
    pub length_penalty: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            strategy: Strategy::Beam,
            beam_width: 4,
            nucleus_p: 0.9,
            max_len: 64,
            seed: 0,
            length_penalty: 1.0,
        }
    }
}

impl DecodeConfig {
    pub fn greedy(max_len: usize) -> Self {
        DecodeConfig {
            strategy: Strategy::Greedy,
            max_len,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam_width == 0 {
            return Err(Error::contract("beam_width must be at least 1"));
        }
        if !(self.nucleus_p > 0.0 && self.nucleus_p <= 1.0) {
            return Err(Error::contract(format!(
                "nucleus_p {} outside (0, 1]",
                self.nucleus_p
            )));
        }
        if self.max_len == 0 {
            return Err(Error::contract("max_len must be at least 1"));
        }
        if !(self.length_penalty >= 0.0 && self.length_penalty.is_finite()) {
            return Err(Error::contract("length_penalty must be a non-negative number"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Eos,
    MaxLen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeResult {
    /// Generated ids, EOS excluded.
    pub ids: Vec<TokenId>,
    /// Sum of the chosen steps' log-probabilities, including the EOS step when present.
    pub log_probability: f64,
    pub terminated_by: Termination,
}

impl DecodeResult {
    pub fn to_description(&self, vocab: &Vocabulary) -> NLStateDescription {
        NLStateDescription::new(vocab.decode(&self.ids))
    }

    fn steps(&self) -> usize {
        self.ids.len() + usize::from(self.terminated_by == Termination::Eos)
    }
}

/// The model's next-token distribution with masked ids zeroed and renormalized.
pub fn step_distribution<M: ConditionalSequenceModel + ?Sized>(
    model: &M,
    condition: &[TokenId],
    prefix: &[TokenId],
) -> Vec<f64> {
    let mut probs = model.next_token_distribution(condition, prefix);
    for &m in model.masked_ids() {
        if let Some(p) = probs.get_mut(m as usize) {
            *p = 0.0;
        }
    }
    let mass: f64 = probs.iter().sum();
    if mass > 0.0 {
        for p in &mut probs {
            *p /= mass;
        }
    } else {
        probs.fill(0.0);
        probs[model.eos_id() as usize] = 1.0;
    }
    probs
}

/// Log-probability of an already generated result under `model`, recomputed step by step.
pub fn sequence_log_probability<M: ConditionalSequenceModel + ?Sized>(
    model: &M,
    condition: &[TokenId],
    ids: &[TokenId],
    terminated_by: Termination,
) -> f64 {
    let mut logp = 0.0;
    let eos = model.eos_id();
    let steps = ids
        .iter()
        .copied()
        .chain((terminated_by == Termination::Eos).then_some(eos));
    for (j, w) in steps.enumerate() {
        logp += step_distribution(model, condition, &ids[..j])[w as usize].ln();
    }
    logp
}

pub fn decode<M: ConditionalSequenceModel + ?Sized>(
    model: &M,
    condition: &[TokenId],
    config: &DecodeConfig,
) -> Result<DecodeResult> {
    config.validate()?;
    Ok(match config.strategy {
        Strategy::Greedy => decode_greedy(model, condition, config),
        Strategy::Beam => decode_beam(model, condition, config),
        Strategy::Nucleus => decode_nucleus(model, condition, config),
    })
}

fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

/// Picks the most probable token at every step, lowest id on ties.
pub fn decode_greedy<M: ConditionalSequenceModel + ?Sized>(
    model: &M,
    condition: &[TokenId],
    config: &DecodeConfig,
) -> DecodeResult {
    let eos = model.eos_id();
    let mut ids = Vec::new();
    let mut logp = 0.0;
    while ids.len() < config.max_len {
        let probs = step_distribution(model, condition, &ids);
        let best = argmax(&probs);
        logp += probs[best].ln();
        if best as TokenId == eos {
            return DecodeResult {
                ids,
                log_probability: logp,
                terminated_by: Termination::Eos,
            };
        }
        ids.push(best as TokenId);
    }
    DecodeResult {
        ids,
        log_probability: logp,
        terminated_by: Termination::MaxLen,
    }
}

#[derive(Debug, Clone)]
struct Candidate {
    ids: Vec<TokenId>,
    logp: f64,
    eos: bool,
}

impl Candidate {
    /// Sequence used for lexicographic tie-breaking; EOS counts as its id.
    fn cmp_key(&self, eos_id: TokenId) -> impl Iterator<Item = TokenId> + '_ {
        self.ids.iter().copied().chain(self.eos.then_some(eos_id))
    }
}

fn rank(a: &Candidate, b: &Candidate, eos_id: TokenId) -> Ordering {
    b.logp
        .total_cmp(&a.logp)
        .then_with(|| a.cmp_key(eos_id).cmp(b.cmp_key(eos_id)))
}

/// Beam search over summed log-probabilities.
///
/// Each step expands every live hypothesis, keeps the `beam_width` best
/// candidates overall, and retires those ending in EOS or reaching
/// `max_len` into a finished pool. The winner maximizes
/// `log_prob / steps^length_penalty`, where `steps` counts EOS.
pub fn decode_beam<M: ConditionalSequenceModel + ?Sized>(
    model: &M,
    condition: &[TokenId],
    config: &DecodeConfig,
) -> DecodeResult {
    let eos = model.eos_id();
    let width = config.beam_width;
    let mut alive = vec![Candidate {
        ids: Vec::new(),
        logp: 0.0,
        eos: false,
    }];
    let mut finished: Vec<DecodeResult> = Vec::new();

    while !alive.is_empty() {
        let mut candidates = Vec::new();
        for hyp in &alive {
            let probs = step_distribution(model, condition, &hyp.ids);
            // Extensions of one hypothesis share its ids, so they rank by
            // (logp desc, token id). Only the best `width` can make the global cut.
            let mut local: Vec<(TokenId, f64)> = probs
                .iter()
                .enumerate()
                .filter(|(_, p)| **p > 0.0)
                .map(|(w, p)| (w as TokenId, hyp.logp + p.ln()))
                .collect();
            let by_rank = |a: &(TokenId, f64), b: &(TokenId, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
            if local.len() > width {
                local.select_nth_unstable_by(width - 1, by_rank);
                local.truncate(width);
            }
            local.sort_by(by_rank);
            candidates.extend(local.into_iter().map(|(w, logp)| {
                let mut ids = hyp.ids.clone();
                if w != eos {
                    ids.push(w);
                }
                Candidate { ids, logp, eos: w == eos }
            }));
        }
        candidates.sort_by(|a, b| rank(a, b, eos));
        candidates.truncate(width);

        alive = Vec::new();
        for c in candidates {
            if c.eos {
                finished.push(DecodeResult {
                    ids: c.ids,
                    log_probability: c.logp,
                    terminated_by: Termination::Eos,
                });
            } else if c.ids.len() >= config.max_len {
                finished.push(DecodeResult {
                    ids: c.ids,
                    log_probability: c.logp,
                    terminated_by: Termination::MaxLen,
                });
            } else {
                alive.push(c);
            }
        }
    }

    let score = |r: &DecodeResult| {
        let steps = r.steps().max(1) as f64;
        r.log_probability / steps.powf(config.length_penalty)
    };
    finished
        .into_iter()
        .min_by(|a, b| {
            score(b).total_cmp(&score(a)).then_with(|| {
                let ka = a.ids.iter().copied().chain((a.terminated_by == Termination::Eos).then_some(eos));
                let kb = b.ids.iter().copied().chain((b.terminated_by == Termination::Eos).then_some(eos));
                ka.cmp(kb)
            })
        })
        .expect("beam search always finishes at least one hypothesis")
}

/// Smallest highest-probability prefix of tokens whose mass reaches `p`
/// (the crossing token included), renormalized. Order: probability
/// descending, then id. Zero-probability tokens never enter.
pub fn nucleus_filter(probs: &[f64], p: f64) -> Vec<(TokenId, f64)> {
    let mut order: Vec<usize> = (0..probs.len()).filter(|&i| probs[i] > 0.0).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut kept = Vec::new();
    let mut cum = 0.0;
    for i in order {
        kept.push(i);
        cum += probs[i];
        // Absorb rounding in the running sum so that e.g. 0.5 + 0.2 reaches 0.7.
        if cum >= p - 1e-12 {
            break;
        }
    }
    let mass: f64 = kept.iter().map(|&i| probs[i]).sum();
    kept.into_iter()
        .map(|i| (i as TokenId, probs[i] / mass))
        .collect()
}

/// Draws one id from a renormalized nucleus.
pub fn sample_nucleus<R: Rng + ?Sized>(nucleus: &[(TokenId, f64)], rng: &mut R) -> TokenId {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    for &(id, q) in nucleus {
        cum += q;
        if u < cum {
            return id;
        }
    }
    nucleus.last().expect("nucleus is non-empty").0
}

/// Nucleus sampling, fully determined by `config.seed`.
pub fn decode_nucleus<M: ConditionalSequenceModel + ?Sized>(
    model: &M,
    condition: &[TokenId],
    config: &DecodeConfig,
) -> DecodeResult {
    let eos = model.eos_id();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut ids = Vec::new();
    let mut logp = 0.0;
    while ids.len() < config.max_len {
        let probs = step_distribution(model, condition, &ids);
        let nucleus = nucleus_filter(&probs, config.nucleus_p);
        let w = sample_nucleus(&nucleus, &mut rng);
        logp += probs[w as usize].ln();
        if w == eos {
            return DecodeResult {
                ids,
                log_probability: logp,
                terminated_by: Termination::Eos,
            };
        }
        ids.push(w);
    }
    DecodeResult {
        ids,
        log_probability: logp,
        terminated_by: Termination::MaxLen,
    }
}
