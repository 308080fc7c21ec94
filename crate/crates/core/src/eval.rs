//! Classification metrics, held-out precision/recall, the likelihood-ranked
//! selection baseline, and selection audits against known noise flags.

use std::collections::{HashMap, HashSet};

use serde::Serialize;

use crate::classifier::{view_all, CnnParams, EncodedSentence};
use crate::corpus::{Corpus, NA_ID};
use crate::error::{Error, Result};
use crate::linalg::argmax;
use crate::selector::Decision;

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionRecord {
    pub id: u64,
    pub head: String,
    pub tail: String,
    pub gold: usize,
    pub predicted: usize,
    pub scores: Vec<f64>,
}

/// Eval-mode predictions for every sentence; `inputs` aligns with `corpus.sentences()`.
pub fn predict_records(corpus: &Corpus, inputs: &[EncodedSentence], params: &CnnParams) -> Result<Vec<PredictionRecord>> {
    if inputs.len() != corpus.len() {
        return Err(Error::Shape("encoded inputs do not match corpus".into()));
    }
    let views = view_all(inputs, params)?;
    Ok(corpus
        .sentences()
        .iter()
        .zip(views)
        .map(|(s, v)| {
            let scores: Vec<f64> = v.log_probs.iter().map(|l| l.exp()).collect();
            PredictionRecord {
                id: s.id,
                head: s.head.clone(),
                tail: s.tail.clone(),
                gold: s.relation,
                predicted: argmax(&scores),
                scores,
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub relation: usize,
    pub gold: usize,
    pub predicted: usize,
    pub correct: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Whether the class counts toward the macro average.
    pub in_macro: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SentenceMetrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub exclude_na: bool,
    /// Macro average covers classes with at least one gold instance.
    pub macro_convention: &'static str,
    pub per_class: Vec<ClassMetrics>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn sentence_metrics(records: &[PredictionRecord], n_relations: usize, exclude_na: bool) -> Result<SentenceMetrics> {
    if records.is_empty() {
        return Err(Error::Empty("no prediction records"));
    }
    let mut gold = vec![0usize; n_relations];
    let mut predicted = vec![0usize; n_relations];
    let mut correct = vec![0usize; n_relations];
    for r in records {
        if r.gold >= n_relations || r.predicted >= n_relations {
            return Err(Error::Validation(format!("record {} has a relation outside [0, {n_relations})", r.id)));
        }
        gold[r.gold] += 1;
        predicted[r.predicted] += 1;
        if r.gold == r.predicted {
            correct[r.gold] += 1;
        }
    }
    let per_class: Vec<ClassMetrics> = (0..n_relations)
        .map(|c| {
            let precision = ratio(correct[c], predicted[c]);
            let recall = ratio(correct[c], gold[c]);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                relation: c,
                gold: gold[c],
                predicted: predicted[c],
                correct: correct[c],
                precision,
                recall,
                f1,
                in_macro: gold[c] > 0 && !(exclude_na && c == NA_ID),
            }
        })
        .collect();
    let counted: Vec<f64> = per_class.iter().filter(|c| c.in_macro).map(|c| c.f1).collect();
    let macro_f1 = if counted.is_empty() {
        0.0
    } else {
        counted.iter().sum::<f64>() / counted.len() as f64
    };
    Ok(SentenceMetrics {
        accuracy: ratio(correct.iter().sum(), records.len()),
        macro_f1,
        exclude_na,
        macro_convention: "classes with gold support",
        per_class,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Held-out style precision/recall over relational facts.
///
/// Gold facts are the distinct (head, tail, relation) triples with a non-NA
/// gold label. Each record proposes the fact for its predicted relation
/// (skipped when NA) with that relation's score; a fact proposed by several
/// sentences keeps its highest score. One point per distinct score, sweeping
/// from the most to the least confident.
pub fn pr_curve(records: &[PredictionRecord], na: usize) -> Result<Vec<PrPoint>> {
    let gold: HashSet<(&str, &str, usize)> = records
        .iter()
        .filter(|r| r.gold != na)
        .map(|r| (r.head.as_str(), r.tail.as_str(), r.gold))
        .collect();
    if gold.is_empty() {
        return Err(Error::Empty("no positive gold facts"));
    }
    let mut best: HashMap<(&str, &str, usize), f64> = HashMap::new();
    for r in records {
        if r.predicted == na {
            continue;
        }
        let score = *r
            .scores
            .get(r.predicted)
            .ok_or_else(|| Error::Validation(format!("record {} has no score for its prediction", r.id)))?;
        let e = best.entry((r.head.as_str(), r.tail.as_str(), r.predicted)).or_insert(score);
        if score > *e {
            *e = score;
        }
    }
    let mut ranked: Vec<(f64, bool)> = best.iter().map(|(k, s)| (*s, gold.contains(k))).collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut points = Vec::new();
    let (mut taken, mut hits) = (0usize, 0usize);
    let mut i = 0;
    while i < ranked.len() {
        let threshold = ranked[i].0;
        while i < ranked.len() && ranked[i].0 == threshold {
            taken += 1;
            hits += usize::from(ranked[i].1);
            i += 1;
        }
        points.push(PrPoint {
            threshold,
            precision: hits as f64 / taken as f64,
            recall: hits as f64 / gold.len() as f64,
        });
    }
    Ok(points)
}

/// The `n` highest-scoring ids, ties broken by ascending id. Returned ascending.
pub fn greedy_select(scored: &[(u64, f64)], n: usize) -> Result<Vec<u64>> {
    if n == 0 {
        return Err(Error::Validation("selection size must be positive".into()));
    }
    if n > scored.len() {
        return Err(Error::Validation(format!("cannot select {n} of {} sentences", scored.len())));
    }
    let mut order: Vec<(u64, f64)> = scored.to_vec();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut out: Vec<u64> = order[..n].iter().map(|(id, _)| *id).collect();
    out.sort_unstable();
    Ok(out)
}

/// `log p(r_i | x_i)` of every sentence under `params`.
pub fn label_log_likelihoods(corpus: &Corpus, inputs: &[EncodedSentence], params: &CnnParams) -> Result<Vec<(u64, f64)>> {
    if inputs.len() != corpus.len() {
        return Err(Error::Shape("encoded inputs do not match corpus".into()));
    }
    let views = view_all(inputs, params)?;
    Ok(corpus
        .sentences()
        .iter()
        .zip(views)
        .map(|(s, v)| (s.id, v.log_probs[s.relation]))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AuditRecord {
    pub id: u64,
    pub action: bool,
    pub noise_flag: Option<bool>,
}

impl From<&Decision> for AuditRecord {
    fn from(d: &Decision) -> Self {
        AuditRecord {
            id: d.id,
            action: d.action,
            noise_flag: d.noise_flag,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AuditSummary {
    pub accuracy: f64,
    pub total: usize,
    pub kept: usize,
    pub kept_clean: usize,
    pub rejected: usize,
    pub noisy_rejected: usize,
}

/// A decision is correct when it keeps a clean sentence or rejects a noisy one.
pub fn selection_audit(records: &[AuditRecord]) -> Result<AuditSummary> {
    if records.is_empty() {
        return Err(Error::Empty("no audit records"));
    }
    let mut s = AuditSummary {
        accuracy: 0.0,
        total: records.len(),
        kept: 0,
        kept_clean: 0,
        rejected: 0,
        noisy_rejected: 0,
    };
    for r in records {
        let noisy = r
            .noise_flag
            .ok_or_else(|| Error::Validation(format!("sentence {} has no noise flag", r.id)))?;
        if r.action {
            s.kept += 1;
            s.kept_clean += usize::from(!noisy);
        } else {
            s.rejected += 1;
            s.noisy_rejected += usize::from(noisy);
        }
    }
    s.accuracy = (s.kept_clean + s.noisy_rejected) as f64 / s.total as f64;
    Ok(s)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NoisyBagStats {
    pub filtered: usize,
    /// Fraction of filtered bags whose sentences are all noisy; absent when none were filtered.
    pub all_noisy_fraction: Option<f64>,
}

/// A bag is filtered when none of its sentences were kept.
pub fn noisy_bag_stats(decisions: &[Decision], corpus: &Corpus) -> Result<NoisyBagStats> {
    let action: HashMap<u64, bool> = decisions.iter().map(|d| (d.id, d.action)).collect();
    let mut filtered = 0;
    let mut all_noisy = 0;
    for bag in corpus.bags() {
        let mut acts = Vec::with_capacity(bag.len());
        for id in &bag.sentence_ids {
            match action.get(id) {
                Some(a) => acts.push(*a),
                None => break,
            }
        }
        if acts.len() != bag.len() || acts.iter().any(|a| *a) {
            continue;
        }
        filtered += 1;
        let mut noisy = true;
        for id in &bag.sentence_ids {
            let flag = corpus
                .sentence(*id)
                .and_then(|s| s.noise_flag)
                .ok_or_else(|| Error::Validation(format!("sentence {id} has no noise flag")))?;
            noisy &= flag;
        }
        all_noisy += usize::from(noisy);
    }
    Ok(NoisyBagStats {
        filtered,
        all_noisy_fraction: (filtered > 0).then(|| all_noisy as f64 / filtered as f64),
    })
}
