//! Policy-gradient instance selector.
//!
//! Sentences of a bag are visited in id order. At each step a logistic
//! policy over the state `[current sentence ‖ mean of chosen sentences ‖
//! head entity ‖ tail entity]` decides whether to keep the sentence. The
//! only reward arrives after the last sentence: the mean log-likelihood of
//! the bag label over the kept sentences.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{view_all, CnnParams, EncodedSentence, SentenceView};
use crate::corpus::{Bag, Corpus, RelationMap};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, sigmoid};

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    pub w: Vec<f64>,
    pub b: f64,
}

impl PolicyParams {
    pub fn zeros(dim: usize) -> Self {
        PolicyParams { w: vec![0.0; dim], b: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn logit(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.w.len() {
            return Err(Error::Shape(format!(
                "state has {} features, policy expects {}",
                features.len(),
                self.w.len()
            )));
        }
        Ok(dot(&self.w, features) + self.b)
    }

    pub fn is_finite(&self) -> bool {
        self.b.is_finite() && self.w.iter().all(|v| v.is_finite())
    }
}

/// `2 · filters + 2 · entity_dim`
pub fn state_dim(filters: usize, entity_dim: usize) -> usize {
    2 * filters + 2 * entity_dim
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectorState {
    pub cur_repr: Vec<f64>,
    pub chosen_avg: Vec<f64>,
    pub head_emb: Vec<f64>,
    pub tail_emb: Vec<f64>,
}

impl SelectorState {
    pub fn features(&self) -> Vec<f64> {
        let mut f = Vec::with_capacity(self.len());
        f.extend_from_slice(&self.cur_repr);
        f.extend_from_slice(&self.chosen_avg);
        f.extend_from_slice(&self.head_emb);
        f.extend_from_slice(&self.tail_emb);
        f
    }

    pub fn len(&self) -> usize {
        self.cur_repr.len() + self.chosen_avg.len() + self.head_emb.len() + self.tail_emb.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Eval-mode outputs of one fixed classifier for every sentence of a corpus.
#[derive(Clone, Debug)]
pub struct Snapshot {
    views: Vec<SentenceView>,
    index: HashMap<u64, usize>,
}

impl Snapshot {
    pub fn new(ids: impl IntoIterator<Item = u64>, views: Vec<SentenceView>) -> Result<Self> {
        let index: HashMap<u64, usize> = ids.into_iter().enumerate().map(|(i, id)| (id, i)).collect();
        if index.len() != views.len() {
            return Err(Error::Shape(format!(
                "{} sentence ids for {} views",
                index.len(),
                views.len()
            )));
        }
        Ok(Snapshot { views, index })
    }

    /// Runs `params` over `inputs`, which must align with `corpus.sentences()`.
    pub fn compute(corpus: &Corpus, inputs: &[EncodedSentence], params: &CnnParams) -> Result<Self> {
        if inputs.len() != corpus.len() {
            return Err(Error::Shape("encoded inputs do not match corpus".into()));
        }
        let views = view_all(inputs, params)?;
        Snapshot::new(corpus.sentences().iter().map(|s| s.id), views)
    }

    pub fn view(&self, id: u64) -> Result<&SentenceView> {
        self.index
            .get(&id)
            .map(|i| &self.views[*i])
            .ok_or_else(|| Error::Unknown { kind: "sentence", name: id.to_string() })
    }

    pub fn log_prob(&self, id: u64, relation: usize) -> Result<f64> {
        let v = self.view(id)?;
        v.log_probs
            .get(relation)
            .copied()
            .ok_or_else(|| Error::Validation(format!("relation {relation} out of range")))
    }

    pub fn views(&self) -> &[SentenceView] {
        &self.views
    }
}

fn entity<'a>(table: &'a EmbeddingTable, name: &str) -> Result<&'a [f64]> {
    table
        .get(name)
        .ok_or_else(|| Error::Unknown { kind: "entity", name: name.to_string() })
}

fn mean_of(sum: &[f64], count: usize) -> Vec<f64> {
    if count == 0 {
        vec![0.0; sum.len()]
    } else {
        sum.iter().map(|v| v / count as f64).collect()
    }
}

/// State for sentence `i` (0-based) of `bag` given the ids chosen so far.
pub fn state_features(
    bag: &Bag,
    i: usize,
    chosen_so_far: &[u64],
    snapshot: &Snapshot,
    entities: &EmbeddingTable,
) -> Result<SelectorState> {
    let id = *bag
        .sentence_ids
        .get(i)
        .ok_or_else(|| Error::Validation(format!("step {i} outside bag of {}", bag.len())))?;
    let prefix = &bag.sentence_ids[..i];
    if let Some(c) = chosen_so_far.iter().find(|c| !prefix.contains(c)) {
        return Err(Error::Validation(format!(
            "chosen sentence {c} is not among the first {i} of the bag"
        )));
    }
    let cur = &snapshot.view(id)?.hidden;
    let mut sum = vec![0.0; cur.len()];
    for c in chosen_so_far {
        axpy(1.0, &snapshot.view(*c)?.hidden, &mut sum);
    }
    Ok(SelectorState {
        cur_repr: cur.clone(),
        chosen_avg: mean_of(&sum, chosen_so_far.len()),
        head_emb: entity(entities, &bag.head)?.to_vec(),
        tail_emb: entity(entities, &bag.tail)?.to_vec(),
    })
}

/// π(s, a): `σ(W·F(s) + b)` for a = 1, its complement for a = 0.
pub fn policy_prob(state: &SelectorState, action: bool, policy: &PolicyParams) -> Result<f64> {
    let p1 = sigmoid(policy.logit(&state.features())?);
    Ok(if action { p1 } else { 1.0 - p1 })
}

/// `∇_Θ log π(s, a)` as (∂W, ∂b).
pub fn log_prob_grad(state: &SelectorState, action: bool, policy: &PolicyParams) -> Result<(Vec<f64>, f64)> {
    let f = state.features();
    let s = sigmoid(policy.logit(&f)?);
    let coef = if action { 1.0 - s } else { -s };
    Ok((f.iter().map(|v| coef * v).collect(), coef))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub relation: usize,
    pub sentence_ids: Vec<u64>,
    pub states: Vec<SelectorState>,
    /// `π(s_i, 1)` under the policy that produced the actions.
    pub probs: Vec<f64>,
    pub actions: Vec<bool>,
    pub terminal_reward: Option<f64>,
}

impl Trajectory {
    pub fn chosen(&self) -> Vec<u64> {
        self.sentence_ids
            .iter()
            .zip(&self.actions)
            .filter(|(_, a)| **a)
            .map(|(id, _)| *id)
            .collect()
    }
}

fn walk_bag(
    bag: &Bag,
    policy: &PolicyParams,
    snapshot: &Snapshot,
    entities: &EmbeddingTable,
    mut decide: impl FnMut(f64) -> bool,
) -> Result<Trajectory> {
    let head = entity(entities, &bag.head)?;
    let tail = entity(entities, &bag.tail)?;
    let mut states = Vec::with_capacity(bag.len());
    let mut probs = Vec::with_capacity(bag.len());
    let mut actions = Vec::with_capacity(bag.len());
    let mut sum: Option<Vec<f64>> = None;
    let mut count = 0;
    for id in &bag.sentence_ids {
        let cur = &snapshot.view(*id)?.hidden;
        let sum = sum.get_or_insert_with(|| vec![0.0; cur.len()]);
        let state = SelectorState {
            cur_repr: cur.clone(),
            chosen_avg: mean_of(sum, count),
            head_emb: head.to_vec(),
            tail_emb: tail.to_vec(),
        };
        let p = sigmoid(policy.logit(&state.features())?);
        let a = decide(p);
        if a {
            axpy(1.0, cur, sum);
            count += 1;
        }
        states.push(state);
        probs.push(p);
        actions.push(a);
    }
    Ok(Trajectory {
        relation: bag.relation,
        sentence_ids: bag.sentence_ids.clone(),
        states,
        probs,
        actions,
        terminal_reward: None,
    })
}

/// Draws `a_i ~ Bernoulli(π(s_i, 1))` for every sentence of the bag in order.
pub fn sample_trajectory<R: Rng>(
    bag: &Bag,
    policy: &PolicyParams,
    snapshot: &Snapshot,
    entities: &EmbeddingTable,
    rng: &mut R,
) -> Result<Trajectory> {
    walk_bag(bag, policy, snapshot, entities, |p| rng.gen::<f64>() < p)
}

/// Samples every bag against the same fixed policy. Per-bag seeds come from
/// `rng` in bag order, so the result does not depend on scheduling.
pub fn sample_trajectories(
    bags: &[&Bag],
    policy: &PolicyParams,
    snapshot: &Snapshot,
    entities: &EmbeddingTable,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Trajectory>> {
    let seeds: Vec<u64> = bags.iter().map(|_| rng.gen()).collect();
    bags.par_iter()
        .zip(seeds)
        .map(|(bag, seed)| {
            let mut local = ChaCha8Rng::seed_from_u64(seed);
            sample_trajectory(bag, policy, snapshot, entities, &mut local)
        })
        .collect()
}

/// Mean `log p(r | x)` over the chosen sentences, or `fallback` when none were chosen.
pub fn bag_reward(chosen: &[u64], relation: usize, snapshot: &Snapshot, fallback: f64) -> Result<f64> {
    if chosen.is_empty() {
        return Ok(fallback);
    }
    let mut total = 0.0;
    for id in chosen {
        total += snapshot.log_prob(*id, relation)?;
    }
    Ok(total / chosen.len() as f64)
}

/// REINFORCE step `Θ ← Θ + lr · Σ_i v_i ∇ log π_Θ(s_i, a_i)` with every
/// `v_i` equal to the terminal reward. All gradients are taken at the
/// incoming Θ before any change is applied.
pub fn policy_update(trajectory: &Trajectory, policy: &mut PolicyParams, lr: f64) -> Result<()> {
    let reward = trajectory
        .terminal_reward
        .ok_or_else(|| Error::Validation("trajectory has no terminal reward".into()))?;
    let mut gw = vec![0.0; policy.dim()];
    let mut gb = 0.0;
    for (state, action) in trajectory.states.iter().zip(&trajectory.actions) {
        let (w, b) = log_prob_grad(state, *action, policy)?;
        axpy(1.0, &w, &mut gw);
        gb += b;
    }
    axpy(lr * reward, &gw, &mut policy.w);
    policy.b += lr * reward * gb;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectMode {
    /// Keep iff `σ(z) ≥ 0.5`.
    Greedy,
    Sample,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decision {
    pub id: u64,
    pub head: String,
    pub tail: String,
    pub relation: usize,
    /// `None` when the bag bypassed the selector.
    pub prob: Option<f64>,
    pub action: bool,
    pub noise_flag: Option<bool>,
}

impl Decision {
    pub fn bypassed(&self) -> bool {
        self.prob.is_none()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    /// Kept sentence ids, ascending.
    pub selected: Vec<u64>,
    /// One per sentence, in bag order.
    pub decisions: Vec<Decision>,
}

/// Cleanses a corpus bag by bag. Bags labeled NA keep every sentence
/// without consulting the policy unless `select_na_bags` is set.
pub fn select_corpus(
    corpus: &Corpus,
    policy: &PolicyParams,
    snapshot: &Snapshot,
    entities: &EmbeddingTable,
    mode: SelectMode,
    select_na_bags: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Selection> {
    let na = corpus.relations().na_id();
    let seeds: Vec<u64> = match mode {
        SelectMode::Sample => corpus.bags().iter().map(|_| rng.gen()).collect(),
        SelectMode::Greedy => vec![0; corpus.bags().len()],
    };
    let per_bag: Vec<Result<Vec<Decision>>> = corpus
        .bags()
        .par_iter()
        .zip(seeds)
        .map(|(bag, seed)| {
            let flag = |id: u64| corpus.sentence(id).and_then(|s| s.noise_flag);
            if bag.relation == na && !select_na_bags {
                return Ok(bag
                    .sentence_ids
                    .iter()
                    .map(|id| Decision {
                        id: *id,
                        head: bag.head.clone(),
                        tail: bag.tail.clone(),
                        relation: bag.relation,
                        prob: None,
                        action: true,
                        noise_flag: flag(*id),
                    })
                    .collect());
            }
            let traj = match mode {
                SelectMode::Greedy => walk_bag(bag, policy, snapshot, entities, |p| p >= 0.5)?,
                SelectMode::Sample => {
                    let mut local = ChaCha8Rng::seed_from_u64(seed);
                    sample_trajectory(bag, policy, snapshot, entities, &mut local)?
                }
            };
            Ok(traj
                .sentence_ids
                .iter()
                .zip(traj.probs.iter().zip(&traj.actions))
                .map(|(id, (p, a))| Decision {
                    id: *id,
                    head: bag.head.clone(),
                    tail: bag.tail.clone(),
                    relation: bag.relation,
                    prob: Some(*p),
                    action: *a,
                    noise_flag: flag(*id),
                })
                .collect())
        })
        .collect();
    let mut decisions = Vec::with_capacity(corpus.len());
    for d in per_bag {
        decisions.extend(d?);
    }
    let mut selected: Vec<u64> = decisions.iter().filter(|d| d.action).map(|d| d.id).collect();
    selected.sort_unstable();
    Ok(Selection { selected, decisions })
}

const DECISIONS_HEADER: &str = "id\thead\ttail\trelation\tprob\taction\tnoise_flag";

fn flag_text(f: Option<bool>) -> &'static str {
    match f {
        Some(true) => "1",
        Some(false) => "0",
        None => "-",
    }
}

/// Tab-separated, one line per sentence, after a header line.
pub fn write_decisions(path: impl AsRef<Path>, decisions: &[Decision], relations: &RelationMap) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        writeln!(out, "{DECISIONS_HEADER}")?;
        for d in decisions {
            let prob = d.prob.map_or_else(|| "-".to_string(), |p| p.to_string());
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                d.id,
                d.head,
                d.tail,
                relations.name(d.relation),
                prob,
                u8::from(d.action),
                flag_text(d.noise_flag)
            )?;
        }
        out.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

pub fn read_decisions(path: impl AsRef<Path>, relations: &RelationMap) -> Result<Vec<Decision>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if n == 0 {
            if line != DECISIONS_HEADER {
                return Err(Error::parse(path, 1, "missing decisions header"));
            }
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 7 {
            return Err(Error::parse(path, n + 1, format!("expected 7 fields, found {}", f.len())));
        }
        let bad = |what: &str| Error::parse(path, n + 1, format!("invalid {what}"));
        let relation = relations
            .id(f[3])
            .ok_or_else(|| Error::parse(path, n + 1, format!("unknown relation `{}`", f[3])))?;
        out.push(Decision {
            id: f[0].parse().map_err(|_| bad("id"))?,
            head: f[1].to_string(),
            tail: f[2].to_string(),
            relation,
            prob: match f[4] {
                "-" => None,
                p => Some(p.parse().map_err(|_| bad("prob"))?),
            },
            action: match f[5] {
                "1" => true,
                "0" => false,
                _ => return Err(bad("action")),
            },
            noise_flag: match f[6] {
                "1" => Some(true),
                "0" => Some(false),
                "-" => None,
                _ => return Err(bad("noise flag")),
            },
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{RelationMap, Sentence};
    use crate::linalg::Matrix;

    fn toy_corpus() -> Corpus {
        let mk = |id: u64, head: &str, tail: &str, rel: usize| Sentence {
            id,
            tokens: vec![head.into(), "x".into(), tail.into()],
            head: head.into(),
            tail: tail.into(),
            head_index: 0,
            tail_index: 2,
            relation: rel,
            noise_flag: Some(id.is_multiple_of(2)),
        };
        let rels = RelationMap::ordered(vec!["NA".into(), "r1".into()]).unwrap();
        Corpus::from_sentences(
            vec![
                mk(1, "a", "b", 1),
                mk(2, "a", "b", 1),
                mk(3, "c", "d", 1),
                mk(4, "e", "f", 1),
                mk(5, "e", "f", 1),
                mk(6, "e", "f", 0),
            ],
            rels,
        )
        .unwrap()
    }

    fn toy_snapshot(corpus: &Corpus, ds: usize) -> Snapshot {
        let views = corpus
            .sentences()
            .iter()
            .map(|s| SentenceView {
                hidden: (0..ds).map(|k| ((s.id as f64) * 0.37 + k as f64).sin()).collect(),
                log_probs: vec![-(s.id as f64), -1.0 / (s.id as f64)],
            })
            .collect();
        Snapshot::new(corpus.sentences().iter().map(|s| s.id), views).unwrap()
    }

    fn toy_entities(corpus: &Corpus, de: usize) -> EmbeddingTable {
        let names = corpus.entities().names().to_vec();
        let n = names.len();
        EmbeddingTable::new(names, Matrix::from_fn(n, de, |r, c| (r as f64 - c as f64) * 0.1)).unwrap()
    }

    #[test]
    fn first_step_has_zero_chosen_average() {
        let c = toy_corpus();
        let s = state_features(&c.bags()[0], 0, &[], &toy_snapshot(&c, 3), &toy_entities(&c, 2)).unwrap();
        assert_eq!(s.chosen_avg, vec![0.0; 3]);
        assert_eq!(s.len(), 10);
    }

    #[test]
    fn chosen_average_is_the_mean() {
        let c = toy_corpus();
        let snap = toy_snapshot(&c, 3);
        let bag = c.bags().iter().find(|b| b.len() == 2 && b.relation == 1 && b.head == "e").unwrap();
        let s = state_features(bag, 1, &[4], &snap, &toy_entities(&c, 2)).unwrap();
        assert_eq!(s.chosen_avg, snap.view(4).unwrap().hidden);
        let big = Bag {
            head: "a".into(),
            tail: "b".into(),
            relation: 1,
            sentence_ids: vec![1, 2, 3],
        };
        let s = state_features(&big, 2, &[1, 2], &snap, &toy_entities(&c, 2)).unwrap();
        let (u, v) = (&snap.view(1).unwrap().hidden, &snap.view(2).unwrap().hidden);
        for k in 0..3 {
            assert_eq!(s.chosen_avg[k], (u[k] + v[k]) / 2.0);
        }
    }

    #[test]
    fn default_state_has_560_features() {
        assert_eq!(state_dim(230, 50), 560);
    }

    #[test]
    fn missing_entity_is_an_error() {
        let c = toy_corpus();
        let ents = EmbeddingTable::new(vec!["a".into()], Matrix::zeros(1, 2)).unwrap();
        assert!(state_features(&c.bags()[0], 0, &[], &toy_snapshot(&c, 3), &ents).is_err());
    }

    #[test]
    fn policy_probability_edge_cases() {
        let state = SelectorState {
            cur_repr: vec![0.3, -2.0],
            chosen_avg: vec![0.0, 0.0],
            head_emb: vec![1.0],
            tail_emb: vec![-1.0],
        };
        let mut p = PolicyParams::zeros(6);
        assert_eq!(policy_prob(&state, true, &p).unwrap(), 0.5);
        p.b = 20.0;
        assert!(policy_prob(&state, true, &p).unwrap() >= 1.0 - 1e-8);
        p.b = 1e3;
        assert_eq!(policy_prob(&state, true, &p).unwrap(), 1.0);
        p.b = -1e3;
        assert!(policy_prob(&state, true, &p).unwrap().is_finite());
    }

    #[test]
    fn saturated_policies_select_all_or_nothing() {
        let c = toy_corpus();
        let (snap, ents) = (toy_snapshot(&c, 3), toy_entities(&c, 2));
        let mut p = PolicyParams::zeros(10);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        p.b = 50.0;
        let t = sample_trajectory(&c.bags()[0], &p, &snap, &ents, &mut rng).unwrap();
        assert!(t.actions.iter().all(|a| *a));
        assert_eq!(t.chosen(), c.bags()[0].sentence_ids);
        p.b = -50.0;
        let t = sample_trajectory(&c.bags()[0], &p, &snap, &ents, &mut rng).unwrap();
        assert!(t.chosen().is_empty());
    }

    #[test]
    fn sampling_is_reproducible() {
        let c = toy_corpus();
        let (snap, ents) = (toy_snapshot(&c, 3), toy_entities(&c, 2));
        let p = PolicyParams::zeros(10);
        let bags: Vec<&Bag> = c.bags().iter().collect();
        let a = sample_trajectories(&bags, &p, &snap, &ents, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_trajectories(&bags, &p, &snap, &ents, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn reward_cases() {
        let c = toy_corpus();
        let snap = toy_snapshot(&c, 3);
        // Sentence 1 has log p(NA) = -1, sentence 3 has log p(NA) = -3.
        assert_eq!(bag_reward(&[1], 0, &snap, 0.0).unwrap(), -1.0);
        assert_eq!(bag_reward(&[1, 3], 0, &snap, 0.0).unwrap(), -2.0);
        assert_eq!(bag_reward(&[], 0, &snap, -4.25).unwrap(), -4.25);
    }

    #[test]
    fn zero_reward_leaves_policy_unchanged() {
        let c = toy_corpus();
        let (snap, ents) = (toy_snapshot(&c, 3), toy_entities(&c, 2));
        let mut p = PolicyParams { w: vec![0.1; 10], b: 0.2 };
        let mut t = sample_trajectory(&c.bags()[0], &p, &snap, &ents, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        t.terminal_reward = Some(0.0);
        let before = p.clone();
        policy_update(&t, &mut p, 0.5).unwrap();
        assert_eq!(p, before);
        t.terminal_reward = None;
        assert!(policy_update(&t, &mut p, 0.5).is_err());
    }

    #[test]
    fn rewarded_selection_becomes_more_likely() {
        let state = SelectorState {
            cur_repr: vec![0.5, -0.25],
            chosen_avg: vec![0.0, 0.0],
            head_emb: vec![0.1],
            tail_emb: vec![0.2],
        };
        let mut p = PolicyParams { w: vec![0.3, 0.1, 0.0, 0.0, -0.2, 0.4], b: -0.1 };
        let before = policy_prob(&state, true, &p).unwrap();
        let t = Trajectory {
            relation: 1,
            sentence_ids: vec![1],
            states: vec![state.clone()],
            probs: vec![before],
            actions: vec![true],
            terminal_reward: Some(1.0),
        };
        policy_update(&t, &mut p, 0.1).unwrap();
        assert!(policy_prob(&state, true, &p).unwrap() > before);
    }

    #[test]
    fn saturated_greedy_selection() {
        let c = toy_corpus();
        let (snap, ents) = (toy_snapshot(&c, 3), toy_entities(&c, 2));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = PolicyParams::zeros(10);
        p.b = -1.0;
        let s = select_corpus(&c, &p, &snap, &ents, SelectMode::Greedy, true, &mut rng).unwrap();
        assert!(s.selected.is_empty());
        p.b = 1.0;
        let s = select_corpus(&c, &p, &snap, &ents, SelectMode::Greedy, true, &mut rng).unwrap();
        assert_eq!(s.selected, vec![1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn na_bags_can_bypass_the_policy() {
        let c = toy_corpus();
        let (snap, ents) = (toy_snapshot(&c, 3), toy_entities(&c, 2));
        let mut p = PolicyParams::zeros(10);
        p.b = -1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = select_corpus(&c, &p, &snap, &ents, SelectMode::Greedy, false, &mut rng).unwrap();
        assert_eq!(s.selected, vec![6]);
        let d = s.decisions.iter().find(|d| d.id == 6).unwrap();
        assert!(d.bypassed() && d.action);
    }

    #[test]
    fn greedy_selection_matches_threshold_replay() {
        let c = toy_corpus();
        let (snap, ents) = (toy_snapshot(&c, 3), toy_entities(&c, 2));
        let p = PolicyParams { w: vec![0.9, -0.8, 0.7, 1.5, -1.1, 0.4, 0.3, -0.6, 0.2, 0.1], b: 0.05 };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = select_corpus(&c, &p, &snap, &ents, SelectMode::Greedy, true, &mut rng).unwrap();
        let mut expected = Vec::new();
        for bag in c.bags() {
            let mut chosen = Vec::new();
            for i in 0..bag.len() {
                let st = state_features(bag, i, &chosen, &snap, &ents).unwrap();
                if policy_prob(&st, true, &p).unwrap() >= 0.5 {
                    chosen.push(bag.sentence_ids[i]);
                }
            }
            expected.extend(chosen);
        }
        expected.sort_unstable();
        assert_eq!(s.selected, expected);
        let again = select_corpus(&c, &p, &snap, &ents, SelectMode::Greedy, true, &mut rng).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn decisions_round_trip() {
        let c = toy_corpus();
        let (snap, ents) = (toy_snapshot(&c, 3), toy_entities(&c, 2));
        let p = PolicyParams { w: vec![0.3; 10], b: -0.2 };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = select_corpus(&c, &p, &snap, &ents, SelectMode::Greedy, false, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("decisions.tsv");
        write_decisions(&path, &s.decisions, c.relations()).unwrap();
        assert_eq!(read_decisions(&path, c.relations()).unwrap(), s.decisions);
    }

    fn param_mut(p: &mut PolicyParams, k: usize) -> &mut f64 {
        match p.w.get_mut(k) {
            Some(w) => w,
            None => &mut p.b,
        }
    }

    #[test]
    fn log_prob_gradient_matches_finite_differences() {
        let state = SelectorState {
            cur_repr: vec![0.3, -0.8],
            chosen_avg: vec![0.5, 0.1],
            head_emb: vec![-0.2],
            tail_emb: vec![0.9],
        };
        let mut policy = PolicyParams { w: vec![0.4, -0.1, 0.7, 0.2, -0.6, 0.3], b: -0.25 };
        let h = 1e-6;
        for action in [true, false] {
            let (gw, gb) = log_prob_grad(&state, action, &policy).unwrap();
            for k in 0..=gw.len() {
                let orig = *param_mut(&mut policy, k);
                *param_mut(&mut policy, k) = orig + h;
                let up = policy_prob(&state, action, &policy).unwrap().ln();
                *param_mut(&mut policy, k) = orig - h;
                let down = policy_prob(&state, action, &policy).unwrap().ln();
                *param_mut(&mut policy, k) = orig;
                let numeric = (up - down) / (2.0 * h);
                let a = if k < gw.len() { gw[k] } else { gb };
                assert!((a - numeric).abs() <= 1e-6 * a.abs().max(1e-3), "{k}: {a} vs {numeric}");
            }
        }
    }
}
