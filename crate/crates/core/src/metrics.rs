//! Joint goal accuracy, slot accuracy, BLEU, ROUGE and per-domain scores.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AnnotatedTurnExample, NLStateDescription, StructuredState, Token, TurnKey};
use crate::ontology::Ontology;
use crate::parallel::{self, ExecMode};

/// One system output for one gold user turn.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TurnPrediction {
    pub key: TurnKey,
    pub predicted_structured: StructuredState,
    /// Absent for structured-output systems.
    pub predicted_nl: Option<NLStateDescription>,
    /// Set when the system failed on this turn; the prediction is then empty.
    pub error: Option<String>,
}

impl TurnPrediction {
    pub fn new(key: TurnKey, predicted_structured: StructuredState) -> Self {
        TurnPrediction {
            key,
            predicted_structured,
            predicted_nl: None,
            error: None,
        }
    }

    pub fn failed(key: TurnKey, error: impl Into<String>) -> Self {
        TurnPrediction {
            key,
            predicted_structured: StructuredState::new(),
            predicted_nl: None,
            error: Some(error.into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RougeVariant {
    R1,
    R2,
    Rl,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainScores {
    pub jga: f64,
    pub slot_accuracy: f64,
    pub n_turns: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Percentage.
    pub jga: f64,
    /// Percentage.
    pub slot_accuracy: f64,
    /// Mean sentence BLEU-4 in [0, 1]; `None` when no prediction carries text.
    pub bleu: Option<f64>,
    pub rouge_1: Option<f64>,
    pub rouge_2: Option<f64>,
    pub rouge_l: Option<f64>,
    pub per_domain: BTreeMap<String, DomainScores>,
    pub n_turns: usize,
    /// Turns whose prediction carries an error flag.
    pub n_failed: usize,
}

/// Pairs predictions with gold examples in sorted key order, rejecting
/// missing, extra or duplicated keys.
fn align<'a>(
    preds: &'a [TurnPrediction],
    golds: &'a [AnnotatedTurnExample],
) -> Result<Vec<(&'a TurnPrediction, &'a AnnotatedTurnExample)>> {
    let mut gold_by_key: BTreeMap<TurnKey, &AnnotatedTurnExample> = BTreeMap::new();
    for g in golds {
        if gold_by_key.insert(g.key(), g).is_some() {
            return Err(Error::contract(format!("duplicate gold turn {}", g.key())));
        }
    }
    let mut pred_by_key: HashMap<&TurnKey, &TurnPrediction> = HashMap::new();
    let mut duplicate = Vec::new();
    for p in preds {
        if pred_by_key.insert(&p.key, p).is_some() {
            duplicate.push(p.key.to_string());
        }
    }
    let missing: Vec<String> = gold_by_key
        .keys()
        .filter(|k| !pred_by_key.contains_key(k))
        .map(ToString::to_string)
        .collect();
    let extra: BTreeSet<String> = pred_by_key
        .keys()
        .filter(|k| !gold_by_key.contains_key(**k))
        .map(ToString::to_string)
        .collect();
    if !missing.is_empty() || !extra.is_empty() || !duplicate.is_empty() {
        return Err(Error::contract(format!(
            "prediction keys do not match gold: missing [{}], extra [{}], duplicate [{}]",
            missing.join(", "),
            extra.into_iter().collect::<Vec<_>>().join(", "),
            duplicate.join(", ")
        )));
    }
    if gold_by_key.is_empty() {
        return Err(Error::contract("no turns to score"));
    }
    Ok(gold_by_key
        .into_iter()
        .map(|(k, g)| (pred_by_key[&k], g))
        .collect())
}

fn percent(hits: usize, total: usize) -> f64 {
    100.0 * hits as f64 / total as f64
}

/// Percentage of turns whose predicted state equals the gold state exactly.
pub fn joint_goal_accuracy(preds: &[TurnPrediction], golds: &[AnnotatedTurnExample]) -> Result<f64> {
    let pairs = align(preds, golds)?;
    let hits = pairs
        .iter()
        .filter(|(p, g)| p.predicted_structured == g.gold_structured)
        .count();
    Ok(percent(hits, pairs.len()))
}

fn slot_hits(
    pred: &StructuredState,
    gold: &StructuredState,
    slots: &[(String, String)],
) -> usize {
    slots
        .iter()
        .filter(|(d, s)| pred.get(d, s) == gold.get(d, s))
        .count()
}

/// Percentage of `(turn, ontology slot)` pairs predicted correctly, absence
/// on both sides counting as the value "none".
pub fn slot_accuracy(
    preds: &[TurnPrediction],
    golds: &[AnnotatedTurnExample],
    ontology: &Ontology,
) -> Result<f64> {
    let pairs = align(preds, golds)?;
    let slots = ontology.slot_keys();
    if slots.is_empty() {
        return Err(Error::contract("ontology has no slots"));
    }
    let hits: usize = pairs
        .iter()
        .map(|(p, g)| slot_hits(&p.predicted_structured, &g.gold_structured, &slots))
        .sum();
    Ok(percent(hits, pairs.len() * slots.len()))
}

/// Scores restricted to each domain, over the turns where gold or prediction
/// mentions it.
pub fn per_domain_breakdown(
    preds: &[TurnPrediction],
    golds: &[AnnotatedTurnExample],
    ontology: &Ontology,
) -> Result<BTreeMap<String, DomainScores>> {
    let pairs = align(preds, golds)?;
    let mut out = BTreeMap::new();
    for (domain, spec) in ontology.domains() {
        let slots: Vec<(String, String)> = spec
            .slots
            .keys()
            .map(|s| (domain.clone(), s.clone()))
            .collect();
        let mut turns = 0;
        let mut joint = 0;
        let mut slot_ok = 0;
        for (p, g) in &pairs {
            let ps = p.predicted_structured.restrict(domain);
            let gs = g.gold_structured.restrict(domain);
            if ps.is_empty() && gs.is_empty() {
                continue;
            }
            turns += 1;
            joint += usize::from(ps == gs);
            slot_ok += slot_hits(&ps, &gs, &slots);
        }
        if turns > 0 {
            out.insert(
                domain.clone(),
                DomainScores {
                    jga: percent(joint, turns),
                    slot_accuracy: percent(slot_ok, turns * slots.len()),
                    n_turns: turns,
                },
            );
        }
    }
    Ok(out)
}

fn ngram_counts(tokens: &[Token], n: usize) -> HashMap<&[Token], usize> {
    let mut counts = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

fn clipped_overlap(cand: &HashMap<&[Token], usize>, reference: &HashMap<&[Token], usize>) -> usize {
    cand.iter()
        .map(|(g, &c)| c.min(reference.get(g).copied().unwrap_or(0)))
        .sum()
}

/// Sentence BLEU against a single reference.
///
/// Geometric mean of clipped n-gram precisions for `n = 1..=max_order`
/// times the brevity penalty. A zero precision is floored at
/// `1 / (2 * candidate n-gram count)`; orders for which the candidate has no
/// n-grams at all are left out of the mean. An empty candidate scores 0.
pub fn bleu(candidate: &NLStateDescription, reference: &NLStateDescription, max_order: usize) -> Result<f64> {
    if max_order == 0 {
        return Err(Error::contract("BLEU max_order must be at least 1"));
    }
    let c = candidate.tokens.len();
    let r = reference.tokens.len();
    if c == 0 {
        return Ok(0.0);
    }
    let mut product = 1.0;
    let mut orders = 0;
    for n in 1..=max_order.min(c) {
        let cand = ngram_counts(&candidate.tokens, n);
        let refc = ngram_counts(&reference.tokens, n);
        let total = c - n + 1;
        let matched = clipped_overlap(&cand, &refc);
        let precision = if matched == 0 {
            1.0 / (2.0 * total as f64)
        } else {
            matched as f64 / total as f64
        };
        product *= precision;
        orders += 1;
    }
    let geo = product.powf(1.0 / orders as f64);
    let bp = if c >= r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    Ok(geo * bp)
}

fn lcs_len(a: &[Token], b: &[Token]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE F1 (unigram, bigram or longest common subsequence).
pub fn rouge(candidate: &NLStateDescription, reference: &NLStateDescription, variant: RougeVariant) -> f64 {
    let (c, r) = (&candidate.tokens, &reference.tokens);
    if c.is_empty() && r.is_empty() {
        return 1.0;
    }
    if c.is_empty() || r.is_empty() {
        return 0.0;
    }
    let (overlap, nc, nr) = match variant {
        RougeVariant::Rl => (lcs_len(c, r), c.len(), r.len()),
        RougeVariant::R1 | RougeVariant::R2 => {
            let n = if variant == RougeVariant::R1 { 1 } else { 2 };
            let gc = ngram_counts(c, n);
            let gr = ngram_counts(r, n);
            let nc = c.len().saturating_sub(n - 1);
            let nr = r.len().saturating_sub(n - 1);
            if nc == 0 && nr == 0 {
                // Both too short to hold an n-gram.
                return if c == r { 1.0 } else { 0.0 };
            }
            (clipped_overlap(&gc, &gr), nc, nr)
        }
    };
    if overlap == 0 {
        return 0.0;
    }
    // F1 = 2PR / (P + R) with P = o/nc, R = o/nr.
    2.0 * overlap as f64 / (nc + nr) as f64
}

/// Text-similarity scores of one turn.
#[derive(Debug, Clone, Copy)]
struct TextScores {
    bleu: f64,
    r1: f64,
    r2: f64,
    rl: f64,
}

/// Full report. Per-turn scores are computed under `mode` and reduced in
/// sorted key order, so the result does not depend on threading or on the
/// order of `preds`.
pub fn evaluate(
    preds: &[TurnPrediction],
    golds: &[AnnotatedTurnExample],
    ontology: &Ontology,
    mode: ExecMode,
) -> Result<MetricReport> {
    let pairs = align(preds, golds)?;
    let jga = joint_goal_accuracy(preds, golds)?;
    let slot_accuracy = slot_accuracy(preds, golds, ontology)?;
    let per_domain = per_domain_breakdown(preds, golds, ontology)?;

    let text: Vec<Option<TextScores>> = parallel::map(mode, &pairs, |(p, g)| {
        p.predicted_nl.as_ref().map(|nl| TextScores {
            bleu: bleu(nl, &g.gold_nl, 4).expect("max_order 4 is valid"),
            r1: rouge(nl, &g.gold_nl, RougeVariant::R1),
            r2: rouge(nl, &g.gold_nl, RougeVariant::R2),
            rl: rouge(nl, &g.gold_nl, RougeVariant::Rl),
        })
    });
    let scored: Vec<TextScores> = text.into_iter().flatten().collect();
    let mean = |f: fn(&TextScores) -> f64| {
        (!scored.is_empty()).then(|| scored.iter().map(f).sum::<f64>() / scored.len() as f64)
    };

    Ok(MetricReport {
        jga,
        slot_accuracy,
        bleu: mean(|s| s.bleu),
        rouge_1: mean(|s| s.r1),
        rouge_2: mean(|s| s.r2),
        rouge_l: mean(|s| s.rl),
        per_domain,
        n_turns: pairs.len(),
        n_failed: pairs.iter().filter(|(p, _)| p.error.is_some()).count(),
    })
}
