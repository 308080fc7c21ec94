#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use relex_core::classifier::{encode, loss_and_grads, CnnParams, CnnShape, EncodedSentence, Mode};
use relex_core::corpus::position_index;
use relex_core::eval::{PrPoint, PredictionRecord};
use relex_core::selector::{log_prob_grad, policy_prob, policy_update, PolicyParams, SelectorState, Trajectory};

/// `|a − n| / max(|a|, |n|, floor)`; the floor keeps entries that are zero
/// up to rounding from dominating.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub fn gradcheck_shape(n_relations: usize, len: usize) -> CnnShape {
    CnnShape {
        vocab_size: 3 + len.min(20),
        n_relations,
        word_dim: 4,
        pos_dim: 2,
        filters: 6,
        max_rel: 5,
    }
}

fn random_sentence(len: usize, shape: &CnnShape, rng: &mut ChaCha8Rng) -> EncodedSentence {
    let head = rng.gen_range(0..len);
    let tail = if len == 1 { head } else { (head + rng.gen_range(1..len)) % len };
    let n = len as i64;
    let offsets = |anchor: usize| -> Vec<usize> {
        (-1..=n).map(|i| position_index(i - anchor as i64, shape.max_rel)).collect()
    };
    let mut words = vec![0];
    words.extend((0..len).map(|_| rng.gen_range(0..shape.vocab_size)));
    words.push(0);
    EncodedSentence { words, head_pos: offsets(head), tail_pos: offsets(tail) }
}

fn random_params(shape: CnnShape, rng: &mut ChaCha8Rng) -> CnnParams {
    let mut p = CnnParams::zeros(shape);
    for t in p.tensors_mut() {
        for v in t.iter_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
    }
    p
}

/// Smallest gap between the winning and runner-up window over all filters.
fn pooling_margin(batch: &[(EncodedSentence, usize)], params: &CnnParams) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut margin = f64::INFINITY;
    for (x, _) in batch {
        let trace = encode(x, params, Mode::Eval, &mut rng).unwrap();
        for j in 0..params.shape.filters {
            let mut col: Vec<f64> = (0..trace.conv.rows()).map(|w| trace.conv.get(w, j)).collect();
            if col.len() < 2 {
                continue;
            }
            col.sort_by(|a, b| b.total_cmp(a));
            margin = margin.min(col[0] - col[1]);
        }
    }
    margin
}

pub struct GradCheck {
    pub max_rel_err: f64,
    pub entries: usize,
}

/// Central differences on every entry of every classifier tensor for a
/// random batch of sentences of length `len`, dropout off. Instances whose
/// max-pool winners are nearly tied are redrawn so that no perturbation
/// crosses a kink.
pub fn classifier_gradcheck(n_relations: usize, len: usize, batch: usize, seed: u64) -> GradCheck {
    let shape = gradcheck_shape(n_relations, len);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-5;
    let (data, mut params) = loop {
        let params = random_params(shape, &mut rng);
        let data: Vec<(EncodedSentence, usize)> = (0..batch)
            .map(|_| (random_sentence(len, &shape, &mut rng), rng.gen_range(0..n_relations)))
            .collect();
        if pooling_margin(&data, &params) > 1e-3 {
            break (data, params);
        }
    };
    let refs: Vec<(&EncodedSentence, usize)> = data.iter().map(|(x, r)| (x, *r)).collect();
    let mut dummy = ChaCha8Rng::seed_from_u64(0);
    let (_, grads) = loss_and_grads(&refs, &params, None, &mut dummy).unwrap();
    let analytic: Vec<Vec<f64>> = vec![
        grads.dense_word_emb(shape.vocab_size, shape.word_dim).into_vec(),
        grads.pos_head.as_slice().to_vec(),
        grads.pos_tail.as_slice().to_vec(),
        grads.conv_w.as_slice().to_vec(),
        grads.conv_b.clone(),
        grads.out_w.as_slice().to_vec(),
        grads.out_b.clone(),
    ];
    let mut worst: f64 = 0.0;
    let mut entries = 0;
    for (t, grad) in analytic.iter().enumerate() {
        for (k, &a) in grad.iter().enumerate() {
            let orig = params.tensors_mut()[t][k];
            params.tensors_mut()[t][k] = orig + h;
            let up = loss_and_grads(&refs, &params, None, &mut dummy).unwrap().0;
            params.tensors_mut()[t][k] = orig - h;
            let down = loss_and_grads(&refs, &params, None, &mut dummy).unwrap().0;
            params.tensors_mut()[t][k] = orig;
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max(rel_err(a, numeric, 1e-5));
            entries += 1;
        }
    }
    GradCheck { max_rel_err: worst, entries }
}

fn random_state(filters: usize, entity_dim: usize, rng: &mut ChaCha8Rng) -> SelectorState {
    let mut v = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect() };
    SelectorState { cur_repr: v(filters), chosen_avg: v(filters), head_emb: v(entity_dim), tail_emb: v(entity_dim) }
}

/// Weight `k`, or the bias when `k` is past the last weight.
fn param(p: &PolicyParams, k: usize) -> f64 {
    p.w.get(k).copied().unwrap_or(p.b)
}

fn set_param(p: &mut PolicyParams, k: usize, v: f64) {
    match p.w.get_mut(k) {
        Some(w) => *w = v,
        None => p.b = v,
    }
}

/// Central differences of `log π(s, a)` with respect to every weight and the bias.
pub fn policy_gradcheck(seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let state = random_state(8, 3, &mut rng);
    let dim = state.len();
    let mut policy = PolicyParams {
        w: (0..dim).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        b: rng.gen_range(-0.5..0.5),
    };
    let action = rng.gen_bool(0.5);
    let (gw, gb) = log_prob_grad(&state, action, &policy).unwrap();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let logp = |p: &PolicyParams| policy_prob(&state, action, p).unwrap().ln();
    let analytic = gw.iter().copied().chain(std::iter::once(gb));
    for (k, a) in analytic.enumerate() {
        let orig = param(&policy, k);
        set_param(&mut policy, k, orig + h);
        let up = logp(&policy);
        set_param(&mut policy, k, orig - h);
        let down = logp(&policy);
        set_param(&mut policy, k, orig);
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max(rel_err(a, numeric, 1e-5));
    }
    GradCheck { max_rel_err: worst, entries: dim + 1 }
}

/// One state, reward +1 for selecting and −1 for rejecting; actions sampled
/// on-policy. Returns π(select) after `updates` REINFORCE steps.
pub fn bandit(seed: u64, updates: usize, lr: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let state = SelectorState { cur_repr: vec![1.0], chosen_avg: vec![0.0], head_emb: vec![], tail_emb: vec![] };
    let mut policy = PolicyParams::zeros(state.len());
    for _ in 0..updates {
        let p = policy_prob(&state, true, &policy).unwrap();
        let action = rng.gen::<f64>() < p;
        let traj = Trajectory {
            relation: 1,
            sentence_ids: vec![0],
            states: vec![state.clone()],
            probs: vec![p],
            actions: vec![action],
            terminal_reward: Some(if action { 1.0 } else { -1.0 }),
        };
        policy_update(&traj, &mut policy, lr).unwrap();
    }
    policy_prob(&state, true, &policy).unwrap()
}

/// Random prediction records over a few entity pairs, with coarse scores so
/// that ties occur.
pub fn random_records(rng: &mut ChaCha8Rng, n_relations: usize) -> Vec<PredictionRecord> {
    let n = rng.gen_range(1..25);
    (0..n)
        .map(|i| {
            let pair = rng.gen_range(0..5);
            let mut raw: Vec<f64> = (0..n_relations).map(|_| rng.gen_range(1..8) as f64).collect();
            let total: f64 = raw.iter().sum();
            for v in &mut raw {
                *v /= total;
            }
            let predicted = rng.gen_range(0..n_relations);
            PredictionRecord {
                id: i as u64,
                head: format!("h{pair}"),
                tail: format!("t{pair}"),
                gold: rng.gen_range(0..n_relations),
                predicted,
                scores: raw,
            }
        })
        .collect()
}

pub struct BruteMetrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub f1: Vec<f64>,
}

/// Confusion-matrix recount of accuracy and macro-F1 over classes that
/// have gold instances.
pub fn brute_sentence_metrics(records: &[PredictionRecord], n_relations: usize, exclude_na: bool) -> BruteMetrics {
    let mut confusion = vec![vec![0usize; n_relations]; n_relations];
    for r in records {
        confusion[r.gold][r.predicted] += 1;
    }
    let diag: usize = (0..n_relations).map(|c| confusion[c][c]).sum();
    let accuracy = diag as f64 / records.len() as f64;
    let mut f1 = Vec::new();
    let mut counted = Vec::new();
    for (c, row) in confusion.iter().enumerate() {
        let tp = row[c];
        let gold: usize = row.iter().sum();
        let pred: usize = (0..n_relations).map(|g| confusion[g][c]).sum();
        let p = if pred == 0 { 0.0 } else { tp as f64 / pred as f64 };
        let r = if gold == 0 { 0.0 } else { tp as f64 / gold as f64 };
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        f1.push(f);
        if gold > 0 && !(exclude_na && c == 0) {
            counted.push(f);
        }
    }
    let macro_f1 = if counted.is_empty() { 0.0 } else { counted.iter().sum::<f64>() / counted.len() as f64 };
    BruteMetrics { accuracy, macro_f1, f1 }
}

/// For every distinct candidate score t (descending), counts the facts whose
/// best score is at least t.
pub fn brute_pr_curve(records: &[PredictionRecord], na: usize) -> Vec<PrPoint> {
    let gold: BTreeSet<(String, String, usize)> = records
        .iter()
        .filter(|r| r.gold != na)
        .map(|r| (r.head.clone(), r.tail.clone(), r.gold))
        .collect();
    let mut facts: BTreeMap<(String, String, usize), f64> = BTreeMap::new();
    for r in records.iter().filter(|r| r.predicted != na) {
        let s = r.scores[r.predicted];
        let e = facts.entry((r.head.clone(), r.tail.clone(), r.predicted)).or_insert(f64::NEG_INFINITY);
        *e = e.max(s);
    }
    let mut thresholds: Vec<f64> = facts.values().copied().collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    thresholds
        .into_iter()
        .map(|t| {
            let above: Vec<_> = facts.iter().filter(|(_, s)| **s >= t).map(|(k, _)| k).collect();
            let hits = above.iter().filter(|k| gold.contains(**k)).count();
            PrPoint {
                threshold: t,
                precision: hits as f64 / above.len() as f64,
                recall: hits as f64 / gold.len() as f64,
            }
        })
        .collect()
}
