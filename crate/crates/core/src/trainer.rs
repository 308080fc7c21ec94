//! Training stages: classifier pretraining on the noisy corpus, policy
//! pretraining against a fixed classifier, and joint episodes in which the
//! policy cleanses the corpus and the classifier trains on the result, with
//! slowly tracking target copies of both networks.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{loss_and_grads, sgd_step, view_all, CnnParams, CnnShape, EncodedSentence};
use crate::corpus::{Bag, Corpus, Vocab};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::eval::{predict_records, sentence_metrics};
use crate::selector::{
    bag_reward, policy_update, sample_trajectories, state_dim, PolicyParams, Snapshot,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub word_dim: usize,
    pub pos_dim: usize,
    pub filters: usize,
    pub max_rel: usize,
    pub max_len: usize,
    pub entity_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            word_dim: 50,
            pos_dim: 5,
            filters: 230,
            max_rel: 30,
            max_len: 120,
            entity_dim: 50,
        }
    }
}

impl ModelConfig {
    pub fn cnn_shape(&self, vocab_size: usize, n_relations: usize) -> CnnShape {
        CnnShape {
            vocab_size,
            n_relations,
            word_dim: self.word_dim,
            pos_dim: self.pos_dim,
            filters: self.filters,
            max_rel: self.max_rel,
        }
    }

    pub fn state_dim(&self) -> usize {
        state_dim(self.filters, self.entity_dim)
    }

    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        for (key, v) in [
            ("model.word_dim", self.word_dim),
            ("model.filters", self.filters),
            ("model.max_len", self.max_len),
            ("model.entity_dim", self.entity_dim),
        ] {
            if v == 0 {
                p.push(format!("{key} must be positive"));
            }
        }
        p
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Joint episodes.
    pub episodes: usize,
    pub batch_size: usize,
    pub cnn_lr: f64,
    pub policy_lr_pretrain: f64,
    pub policy_lr_joint: f64,
    pub tau: f64,
    pub cnn_epochs: usize,
    pub policy_episodes: usize,
    pub keep_prob: f64,
    /// When false, NA-labeled bags skip the selector and are kept whole.
    pub select_na_bags: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            episodes: 25,
            batch_size: 160,
            cnn_lr: 0.02,
            policy_lr_pretrain: 0.02,
            policy_lr_joint: 0.01,
            tau: 0.001,
            cnn_epochs: 15,
            policy_episodes: 10,
            keep_prob: 0.5,
            select_na_bags: true,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            p.push(format!("train.tau must be in (0, 1], got {}", self.tau));
        }
        for (key, v) in [
            ("train.cnn_lr", self.cnn_lr),
            ("train.policy_lr_pretrain", self.policy_lr_pretrain),
            ("train.policy_lr_joint", self.policy_lr_joint),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                p.push(format!("{key} must be positive, got {v}"));
            }
        }
        if self.batch_size == 0 {
            p.push("train.batch_size must be positive".into());
        }
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            p.push(format!("train.keep_prob must be in (0, 1], got {}", self.keep_prob));
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p.join("; ")))
        }
    }
}

/// A corpus with every sentence encoded against a fixed vocabulary.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub corpus: Corpus,
    pub inputs: Vec<EncodedSentence>,
}

impl Dataset {
    pub fn new(corpus: Corpus, vocab: &Vocab, max_rel: usize) -> Self {
        let inputs = corpus
            .sentences()
            .iter()
            .map(|s| EncodedSentence::new(s, vocab, max_rel))
            .collect();
        Dataset { corpus, inputs }
    }

    /// `(input, label)` pairs for the given corpus positions.
    pub fn examples(&self, positions: impl IntoIterator<Item = usize>) -> Vec<(&EncodedSentence, usize)> {
        positions
            .into_iter()
            .map(|i| (&self.inputs[i], self.corpus.sentences()[i].relation))
            .collect()
    }

    pub fn all_examples(&self) -> Vec<(&EncodedSentence, usize)> {
        self.examples(0..self.inputs.len())
    }
}

/// Blends `online` into `self`: `self ← τ·online + (1 − τ)·self`.
pub trait Blend {
    fn blend_from(&mut self, online: &Self, tau: f64) -> Result<()>;
}

fn blend_slice(target: &mut [f64], online: &[f64], tau: f64) {
    for (t, o) in target.iter_mut().zip(online) {
        *t = tau * o + (1.0 - tau) * *t;
    }
}

impl Blend for CnnParams {
    fn blend_from(&mut self, online: &Self, tau: f64) -> Result<()> {
        let shapes: Vec<Vec<usize>> = online.tensors().into_iter().map(|(_, s, _)| s).collect();
        let mine: Vec<Vec<usize>> = self.tensors().into_iter().map(|(_, s, _)| s).collect();
        if shapes != mine {
            return Err(Error::Shape("target and online classifiers differ in shape".into()));
        }
        let sources: Vec<Vec<f64>> = online.tensors().into_iter().map(|(_, _, v)| v.to_vec()).collect();
        for (t, o) in self.tensors_mut().into_iter().zip(&sources) {
            blend_slice(t, o, tau);
        }
        Ok(())
    }
}

impl Blend for PolicyParams {
    fn blend_from(&mut self, online: &Self, tau: f64) -> Result<()> {
        if self.dim() != online.dim() {
            return Err(Error::Shape("target and online policies differ in shape".into()));
        }
        blend_slice(&mut self.w, &online.w, tau);
        self.b = tau * online.b + (1.0 - tau) * self.b;
        Ok(())
    }
}

pub fn soft_update<T: Blend>(target: &mut T, online: &T, tau: f64) -> Result<()> {
    target.blend_from(online, tau)
}

/// Mean eval-mode `log p(r_i | x_i)` over every sentence.
pub fn avg_train_loglik(data: &Dataset, params: &CnnParams) -> Result<f64> {
    if data.inputs.is_empty() {
        return Err(Error::Empty("empty training corpus"));
    }
    let views = view_all(&data.inputs, params)?;
    let total: f64 = data
        .corpus
        .sentences()
        .iter()
        .zip(&views)
        .map(|(s, v)| v.log_probs[s.relation])
        .sum();
    Ok(total / data.inputs.len() as f64)
}

fn snapshot_avg_loglik(corpus: &Corpus, snapshot: &Snapshot) -> Result<f64> {
    let total: f64 = corpus
        .sentences()
        .iter()
        .zip(snapshot.views())
        .map(|(s, v)| v.log_probs[s.relation])
        .sum();
    Ok(total / corpus.len().max(1) as f64)
}

/// One shuffled pass over `examples` in mini-batches. Returns the mean loss.
pub fn train_epoch(
    params: &mut CnnParams,
    examples: &[(&EncodedSentence, usize)],
    batch_size: usize,
    lr: f64,
    keep: f64,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Empty("no training examples"));
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(rng);
    let keep = (keep < 1.0).then_some(keep);
    let mut total = 0.0;
    for chunk in order.chunks(batch_size.max(1)) {
        let batch: Vec<(&EncodedSentence, usize)> = chunk.iter().map(|i| examples[*i]).collect();
        let (loss, grads) = loss_and_grads(&batch, params, keep, rng)?;
        sgd_step(params, &grads, lr)?;
        total += loss * batch.len() as f64;
    }
    Ok(total / examples.len() as f64)
}

/// Trains on every (noisy) training sentence. Returns the mean loss of each epoch.
pub fn pretrain_classifier(
    data: &Dataset,
    params: &mut CnnParams,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    if data.inputs.is_empty() {
        return Err(Error::Empty("empty training corpus"));
    }
    let examples = data.all_examples();
    (0..cfg.cnn_epochs)
        .map(|_| train_epoch(params, &examples, cfg.batch_size, cfg.cnn_lr, cfg.keep_prob, rng))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Policy updates only; the classifier is held fixed.
    Policy,
    Joint,
}

impl Phase {
    fn name(self) -> &'static str {
        match self {
            Phase::Policy => "policy",
            Phase::Joint => "joint",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeMetrics {
    pub phase: Phase,
    pub episode: usize,
    /// Mean terminal reward over bags the selector decided.
    pub mean_reward: Option<f64>,
    pub selected: usize,
    pub filtered_fraction: Option<f64>,
    /// Mean classifier loss over the cleansed set, absent when no update ran.
    pub train_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

pub const METRICS_HEADER: &str = "phase\tepisode\tmean_reward\tselected\tfiltered_fraction\ttrain_loss\tval_accuracy";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| x.to_string())
}

impl EpisodeMetrics {
    pub fn line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.phase.name(),
            self.episode,
            opt(self.mean_reward),
            self.selected,
            opt(self.filtered_fraction),
            opt(self.train_loss),
            opt(self.val_accuracy)
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Networks {
    pub policy: PolicyParams,
    pub cnn: CnnParams,
    pub target_policy: PolicyParams,
    pub target_cnn: CnnParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BestCheckpoint {
    pub episode: usize,
    pub val_accuracy: Option<f64>,
    pub nets: Networks,
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub nets: Networks,
    pub episode: usize,
    pub fallback_avg_loglik: f64,
    pub log: Vec<EpisodeMetrics>,
    pub best: Option<BestCheckpoint>,
}

impl TrainState {
    /// Targets start as copies of the online networks.
    pub fn new(policy: PolicyParams, cnn: CnnParams) -> Self {
        TrainState {
            nets: Networks {
                target_policy: policy.clone(),
                target_cnn: cnn.clone(),
                policy,
                cnn,
            },
            episode: 0,
            fallback_avg_loglik: 0.0,
            log: Vec::new(),
            best: None,
        }
    }

    pub fn reset_targets(&mut self) {
        self.nets.target_policy = self.nets.policy.clone();
        self.nets.target_cnn = self.nets.cnn.clone();
    }

    /// Best-validation networks if any were recorded, else the current ones.
    pub fn best_nets(&self) -> &Networks {
        self.best.as_ref().map_or(&self.nets, |b| &b.nets)
    }

    pub fn log_text(&self) -> String {
        let mut s = String::from(METRICS_HEADER);
        s.push('\n');
        for m in &self.log {
            s.push_str(&m.line());
            s.push('\n');
        }
        s
    }
}

pub struct EpisodeData<'a> {
    pub train: &'a Dataset,
    pub entities: &'a EmbeddingTable,
    /// Held-out split for model selection during joint training.
    pub valid: Option<&'a Dataset>,
}

/// Sentence-level accuracy of `params`, or `None` for an empty split.
pub fn accuracy(data: &Dataset, params: &CnnParams) -> Result<Option<f64>> {
    if data.inputs.is_empty() {
        return Ok(None);
    }
    let records = predict_records(&data.corpus, &data.inputs, params)?;
    Ok(Some(sentence_metrics(&records, params.shape.n_relations, false)?.accuracy))
}

/// Sample with the target policy, score with the target classifier, update
/// the online policy bag by bag, then (joint phase) train the online
/// classifier for one epoch on this episode's selections, and finally move
/// both targets toward the online networks.
pub fn run_episode(
    state: &mut TrainState,
    data: &EpisodeData<'_>,
    cfg: &TrainConfig,
    phase: Phase,
    rng: &mut ChaCha8Rng,
) -> Result<EpisodeMetrics> {
    let corpus = &data.train.corpus;
    if corpus.is_empty() {
        return Err(Error::Empty("empty training corpus"));
    }
    let na = corpus.relations().na_id();
    let mut order: Vec<&Bag> = corpus.bags().iter().collect();
    order.shuffle(rng);

    let snapshot = Snapshot::compute(corpus, &data.train.inputs, &state.nets.target_cnn)?;
    let fallback = snapshot_avg_loglik(corpus, &snapshot)?;
    state.fallback_avg_loglik = fallback;

    let (decided, bypassed): (Vec<&Bag>, Vec<&Bag>) = order
        .into_iter()
        .partition(|b| cfg.select_na_bags || b.relation != na);
    let mut trajectories = sample_trajectories(
        &decided,
        &state.nets.target_policy,
        &snapshot,
        data.entities,
        rng,
    )?;

    let lr = match phase {
        Phase::Policy => cfg.policy_lr_pretrain,
        Phase::Joint => cfg.policy_lr_joint,
    };
    let mut selected: Vec<u64> = bypassed.iter().flat_map(|b| b.sentence_ids.iter().copied()).collect();
    let mut reward_sum = 0.0;
    let mut filtered = 0;
    for traj in &mut trajectories {
        let chosen = traj.chosen();
        let reward = bag_reward(&chosen, traj.relation, &snapshot, fallback)?;
        traj.terminal_reward = Some(reward);
        policy_update(traj, &mut state.nets.policy, lr)?;
        reward_sum += reward;
        filtered += usize::from(chosen.is_empty());
        selected.extend(chosen);
    }
    selected.sort_unstable();

    let train_loss = if phase == Phase::Joint && !selected.is_empty() {
        let positions: Vec<usize> = selected
            .iter()
            .map(|id| corpus.index_of(*id).expect("selected id comes from the corpus"))
            .collect();
        let examples = data.train.examples(positions);
        Some(train_epoch(
            &mut state.nets.cnn,
            &examples,
            cfg.batch_size,
            cfg.cnn_lr,
            cfg.keep_prob,
            rng,
        )?)
    } else {
        None
    };

    soft_update(&mut state.nets.target_policy, &state.nets.policy, cfg.tau)?;
    soft_update(&mut state.nets.target_cnn, &state.nets.cnn, cfg.tau)?;

    let val_accuracy = match (phase, data.valid) {
        (Phase::Joint, Some(v)) => accuracy(v, &state.nets.cnn)?,
        _ => None,
    };
    state.episode += 1;
    let n = trajectories.len();
    let metrics = EpisodeMetrics {
        phase,
        episode: state.episode,
        mean_reward: (n > 0).then(|| reward_sum / n as f64),
        selected: selected.len(),
        filtered_fraction: (n > 0).then(|| filtered as f64 / n as f64),
        train_loss,
        val_accuracy,
    };
    state.log.push(metrics.clone());
    Ok(metrics)
}

/// Policy pretraining: episodes with the classifier held fixed.
pub fn pretrain_policy(
    state: &mut TrainState,
    data: &EpisodeData<'_>,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    state.reset_targets();
    for _ in 0..cfg.policy_episodes {
        run_episode(state, data, cfg, Phase::Policy, rng)?;
    }
    Ok(())
}

/// Joint training for `cfg.episodes` episodes, tracking the networks with the
/// best validation accuracy (the latest ones when there is no validation split).
pub fn joint_train(
    state: &mut TrainState,
    data: &EpisodeData<'_>,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    state.reset_targets();
    state.best = None;
    for _ in 0..cfg.episodes {
        let m = run_episode(state, data, cfg, Phase::Joint, rng)?;
        let better = match (&state.best, m.val_accuracy) {
            (None, _) => true,
            (Some(b), Some(acc)) => b.val_accuracy.is_none_or(|best| acc > best),
            (Some(_), None) => true,
        };
        if better {
            state.best = Some(BestCheckpoint {
                episode: m.episode,
                val_accuracy: m.val_accuracy,
                nets: state.nets.clone(),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{RelationMap, Sentence};
    use crate::embeddings::init_random;
    use crate::linalg::Matrix;
    use rand::SeedableRng;

    fn separable(n_per_class: usize) -> Corpus {
        let mut sentences = Vec::new();
        let mut id = 0;
        for rel in 0..2usize {
            for k in 0..n_per_class {
                let word = |j: usize| format!("c{rel}w{}", (k + j) % 5);
                sentences.push(Sentence {
                    id,
                    tokens: vec![format!("e{k}"), word(0), word(1), word(2), format!("f{k}")],
                    head: format!("e{k}"),
                    tail: format!("f{k}"),
                    head_index: 0,
                    tail_index: 4,
                    relation: rel,
                    noise_flag: Some(false),
                });
                id += 1;
            }
        }
        Corpus::from_sentences(sentences, RelationMap::ordered(vec!["NA".into(), "r1".into()]).unwrap()).unwrap()
    }

    fn small_model() -> ModelConfig {
        ModelConfig {
            word_dim: 8,
            pos_dim: 2,
            filters: 12,
            max_rel: 5,
            max_len: 20,
            entity_dim: 4,
        }
    }

    fn setup(n_per_class: usize) -> (Dataset, EmbeddingTable, CnnParams) {
        let corpus = separable(n_per_class);
        let m = small_model();
        let shape = m.cnn_shape(corpus.vocab().len(), 2);
        let vocab = corpus.vocab().clone();
        let ents = init_random(corpus.entities().names().to_vec(), m.entity_dim, 3, 0.5).unwrap();
        (Dataset::new(corpus, &vocab, m.max_rel), ents, CnnParams::init(shape, 5))
    }

    #[test]
    fn soft_update_edge_cases() {
        let mut t = PolicyParams { w: vec![0.0], b: 0.0 };
        let o = PolicyParams { w: vec![1.0], b: 1.0 };
        soft_update(&mut t, &o, 0.001).unwrap();
        assert_eq!(t.w[0], 0.001);
        let before = t.clone();
        soft_update(&mut t, &o, 0.0).unwrap();
        assert_eq!(t, before);
        soft_update(&mut t, &o, 1.0).unwrap();
        assert_eq!(t, o);
        assert!(soft_update(&mut t, &PolicyParams::zeros(3), 0.5).is_err());
    }

    #[test]
    fn soft_update_follows_geometric_decay() {
        let shape = small_model().cnn_shape(10, 3);
        let p0 = CnnParams::init(shape, 1);
        let online = CnnParams::init(shape, 2);
        let tau = 0.05;
        let mut t = p0.clone();
        for _ in 0..40 {
            soft_update(&mut t, &online, tau).unwrap();
        }
        let decay = (1.0 - tau).powi(40);
        for ((_, _, got), ((_, _, a), (_, _, b))) in t.tensors().iter().zip(p0.tensors().iter().zip(online.tensors().iter())) {
            for k in 0..got.len() {
                assert!((got[k] - (decay * a[k] + (1.0 - decay) * b[k])).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn uniform_classifier_loglik_is_minus_ln_n() {
        let (data, _, mut p) = setup(3);
        p.out_w = Matrix::zeros(2, p.shape.filters);
        let v = avg_train_loglik(&data, &p).unwrap();
        assert!((v + 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let (data, _, p0) = setup(3);
        let mut p = p0.clone();
        let cfg = TrainConfig { cnn_epochs: 0, ..Default::default() };
        pretrain_classifier(&data, &mut p, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(p, p0);
    }

    #[test]
    fn separable_corpus_is_learned() {
        let (data, _, mut p) = setup(20);
        let cfg = TrainConfig { cnn_epochs: 30, batch_size: 8, cnn_lr: 0.05, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        pretrain_classifier(&data, &mut p, &cfg, &mut rng).unwrap();
        let acc = accuracy(&data, &p).unwrap().unwrap();
        assert!(acc >= 0.95, "accuracy {acc}");
    }

    #[test]
    fn first_epoch_lowers_the_loss() {
        let (data, _, mut p) = setup(20);
        let cfg = TrainConfig { cnn_epochs: 1, batch_size: 8, ..Default::default() };
        let before = -avg_train_loglik(&data, &p).unwrap();
        pretrain_classifier(&data, &mut p, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let after = -avg_train_loglik(&data, &p).unwrap();
        assert!(after < before, "{before} -> {after}");
    }

    #[test]
    fn zero_policy_episodes_leave_policy_unchanged() {
        let (data, ents, p) = setup(3);
        let policy = PolicyParams { w: vec![0.1; small_model().state_dim()], b: 0.3 };
        let mut state = TrainState::new(policy.clone(), p);
        let cfg = TrainConfig { policy_episodes: 0, ..Default::default() };
        let ep = EpisodeData { train: &data, entities: &ents, valid: None };
        pretrain_policy(&mut state, &ep, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(state.nets.policy, policy);
    }

    #[test]
    fn fallback_reads_the_target_classifier() {
        let (data, ents, p) = setup(4);
        let other = CnnParams::init(p.shape, 99);
        let mut state = TrainState::new(PolicyParams::zeros(small_model().state_dim()), p.clone());
        state.nets.target_cnn = other.clone();
        let ep = EpisodeData { train: &data, entities: &ents, valid: None };
        run_episode(&mut state, &ep, &TrainConfig::default(), Phase::Policy, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(state.fallback_avg_loglik, avg_train_loglik(&data, &other).unwrap());
        assert_ne!(state.fallback_avg_loglik, avg_train_loglik(&data, &p).unwrap());
    }

    #[test]
    fn full_tau_copies_online_into_targets() {
        let (data, ents, p) = setup(4);
        let mut state = TrainState::new(PolicyParams::zeros(small_model().state_dim()), p);
        let cfg = TrainConfig { tau: 1.0, episodes: 2, batch_size: 4, ..Default::default() };
        let ep = EpisodeData { train: &data, entities: &ents, valid: None };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        run_episode(&mut state, &ep, &cfg, Phase::Joint, &mut rng).unwrap();
        assert_eq!(state.nets.target_cnn, state.nets.cnn);
        assert_eq!(state.nets.target_policy, state.nets.policy);
    }

    #[test]
    fn zero_tau_freezes_targets() {
        let (data, ents, p) = setup(4);
        let mut state = TrainState::new(PolicyParams::zeros(small_model().state_dim()), p);
        let cfg = TrainConfig { tau: 0.0, batch_size: 4, ..Default::default() };
        let ep = EpisodeData { train: &data, entities: &ents, valid: None };
        let frozen = state.nets.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..2 {
            run_episode(&mut state, &ep, &cfg, Phase::Joint, &mut rng).unwrap();
        }
        assert_eq!(state.nets.target_cnn, frozen.target_cnn);
        assert_eq!(state.nets.target_policy, frozen.target_policy);
        assert_ne!(state.nets.cnn, frozen.cnn);
    }

    #[test]
    fn episodes_are_deterministic() {
        let (data, ents, p) = setup(5);
        let cfg = TrainConfig { episodes: 3, batch_size: 4, ..Default::default() };
        let run = || {
            let mut state = TrainState::new(PolicyParams::zeros(small_model().state_dim()), p.clone());
            let ep = EpisodeData { train: &data, entities: &ents, valid: Some(&data) };
            joint_train(&mut state, &ep, &cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
            (state.log_text(), state.nets)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn config_problems_are_all_reported() {
        let cfg = TrainConfig { tau: 0.0, cnn_lr: -1.0, batch_size: 0, ..Default::default() };
        assert_eq!(cfg.problems().len(), 3);
    }
}
