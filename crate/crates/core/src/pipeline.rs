//! Stage wiring shared by the command-line tool and the benchmark: entity
//! embeddings from the training facts, classifier and policy pretraining,
//! joint training, cleansing, and the likelihood-ranked baseline.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::CnnParams;
use crate::corpus::{generate_synthetic, SynthConfig};
use crate::corpus::{Corpus, Lexicon, RelationMap, Vocab};
use crate::embeddings::{transe_train, EmbeddingTable, TransEConfig, Triple};
use crate::error::{Error, Result};
use crate::eval::{
    greedy_select, label_log_likelihoods, noisy_bag_stats, selection_audit, AuditRecord, AuditSummary, NoisyBagStats,
};
use crate::selector::{select_corpus, PolicyParams, SelectMode, Selection, Snapshot};
use crate::trainer::{
    accuracy, joint_train, pretrain_classifier, pretrain_policy, train_epoch, Dataset, EpisodeData, ModelConfig, TrainConfig,
    TrainState,
};

/// Independent random streams per stage, all derived from one seed.
#[derive(Clone, Copy, Debug)]
pub enum Stage {
    CnnInit = 1,
    CnnPretrain = 2,
    PolicyPretrain = 3,
    Joint = 4,
    Select = 5,
    Baseline = 6,
}

pub fn stage_rng(seed: u64, stage: Stage) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stage as u64);
    rng
}

fn stage_seed(seed: u64, stage: Stage) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stage as u64)
}

/// Distinct `(head, relation, tail)` facts behind the non-NA bags.
pub fn kb_triples(corpus: &Corpus) -> Vec<(String, String, String)> {
    let na = corpus.relations().na_id();
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for b in corpus.bags().iter().filter(|b| b.relation != na) {
        let t = (b.head.clone(), corpus.relations().name(b.relation).to_string(), b.tail.clone());
        if seen.insert(t.clone()) {
            out.push(t);
        }
    }
    out
}

pub struct KgTables {
    pub entities: EmbeddingTable,
    pub relations: EmbeddingTable,
    pub epoch_losses: Vec<f64>,
}

/// TransE on the given facts, then seeded-random vectors for every entity in
/// `all_entities` that no fact mentions.
pub fn train_kg<'a>(
    triples: &[(String, String, String)],
    all_entities: impl IntoIterator<Item = &'a str>,
    cfg: &TransEConfig,
) -> Result<KgTables> {
    let mut ents = Lexicon::default();
    let mut rels = Lexicon::default();
    let ids: Vec<Triple> = triples
        .iter()
        .map(|(h, r, t)| Triple {
            head: ents.insert(h.clone()),
            relation: rels.insert(r.clone()),
            tail: ents.insert(t.clone()),
        })
        .collect();
    let model = transe_train(&ids, ents.len(), rels.len(), cfg)?;
    let mut entities = EmbeddingTable::new(ents.names().to_vec(), model.entities)?;
    entities.complete(all_entities, cfg.seed.wrapping_add(1), 1.0 / (cfg.dim as f64).sqrt());
    let relations = EmbeddingTable::new(rels.names().to_vec(), model.relations)?;
    Ok(KgTables { entities, relations, epoch_losses: model.epoch_losses })
}

pub fn init_classifier(model: &ModelConfig, vocab: &Vocab, relations: &RelationMap, seed: u64) -> CnnParams {
    CnnParams::init(model.cnn_shape(vocab.len(), relations.len()), stage_seed(seed, Stage::CnnInit))
}

pub fn init_policy(model: &ModelConfig) -> PolicyParams {
    PolicyParams::zeros(model.state_dim())
}

/// Fresh classifier trained for `cfg.cnn_epochs` on the listed sentences only.
pub fn train_on_subset(
    data: &Dataset,
    ids: &[u64],
    model: &ModelConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<CnnParams> {
    let corpus = &data.corpus;
    let positions = ids
        .iter()
        .map(|id| corpus.index_of(*id).ok_or_else(|| Error::Unknown { kind: "sentence", name: id.to_string() }))
        .collect::<Result<Vec<_>>>()?;
    let examples = data.examples(positions);
    let mut params = init_classifier(model, corpus.vocab(), corpus.relations(), seed);
    let mut rng = stage_rng(seed, Stage::Baseline);
    for _ in 0..cfg.cnn_epochs {
        train_epoch(&mut params, &examples, cfg.batch_size, cfg.cnn_lr, cfg.keep_prob, &mut rng)?;
    }
    Ok(params)
}

/// Final cleansing with the policy and the target classifier's view.
pub fn cleanse(
    data: &Dataset,
    policy: &PolicyParams,
    snapshot_cnn: &CnnParams,
    entities: &EmbeddingTable,
    mode: SelectMode,
    select_na_bags: bool,
    seed: u64,
) -> Result<Selection> {
    let snapshot = Snapshot::compute(&data.corpus, &data.inputs, snapshot_cnn)?;
    let mut rng = stage_rng(seed, Stage::Select);
    select_corpus(&data.corpus, policy, &snapshot, entities, mode, select_na_bags, &mut rng)
}

/// Audit over the sentences the selector actually decided.
pub fn audit(selection: &Selection, corpus: &Corpus) -> Result<(AuditSummary, NoisyBagStats)> {
    let records: Vec<AuditRecord> = selection
        .decisions
        .iter()
        .filter(|d| !d.bypassed())
        .map(AuditRecord::from)
        .collect();
    Ok((selection_audit(&records)?, noisy_bag_stats(&selection.decisions, corpus)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub synth: SynthConfig,
    pub split: [f64; 3],
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub transe: TransEConfig,
}

impl Default for BenchmarkConfig {
    /// Training settings scaled to a corpus of about a thousand training
    /// sentences: smaller classifier batches, on-policy sampling (`tau` 1) and
    /// a policy step small enough that one episode of sequential bag updates
    /// stays close to the sampling policy.
    fn default() -> Self {
        BenchmarkConfig {
            synth: SynthConfig::default(),
            split: [0.7, 0.1, 0.2],
            model: ModelConfig::default(),
            train: TrainConfig {
                batch_size: 16,
                cnn_lr: 0.05,
                policy_lr_pretrain: 7e-4,
                policy_lr_joint: 7e-4,
                tau: 1.0,
                select_na_bags: false,
                ..TrainConfig::default()
            },
            transe: TransEConfig::default(),
        }
    }
}

impl BenchmarkConfig {
    /// One seed drives both corpus generation and training.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.synth.rng_seed = seed;
        self.train.seed = seed;
        self
    }
}

#[derive(Clone, Debug)]
pub struct BenchmarkReport {
    pub audit: AuditSummary,
    pub bags: NoisyBagStats,
    /// Classifier pretrained on the noisy training split.
    pub noisy_accuracy: f64,
    /// Best-validation classifier from joint training.
    pub joint_accuracy: f64,
    /// Fresh classifier trained on the policy's selection.
    pub rl_subset_accuracy: f64,
    /// Fresh classifier trained on the same number of top-likelihood sentences.
    pub greedy_subset_accuracy: f64,
    pub selected: usize,
    pub train_sentences: usize,
    /// Mean selection probability over decided noisy and clean sentences.
    pub mean_prob_noisy: f64,
    pub mean_prob_clean: f64,
    pub metric_log: String,
    pub selection: Selection,
}

fn mean_prob(selection: &Selection, noisy: bool) -> f64 {
    let probs: Vec<f64> = selection
        .decisions
        .iter()
        .filter(|d| d.noise_flag == Some(noisy))
        .filter_map(|d| d.prob)
        .collect();
    probs.iter().sum::<f64>() / probs.len().max(1) as f64
}

/// Generates a synthetic corpus and runs every stage end to end.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkReport> {
    cfg.train.validate()?;
    let synth = generate_synthetic(&cfg.synth)?;
    let [train, valid, test] = synth.split(cfg.split)?;
    let vocab = train.vocab().clone();
    let all_entities: Vec<String> = synth.corpus.entities().names().to_vec();
    let train = Dataset::new(train, &vocab, cfg.model.max_rel);
    let valid = Dataset::new(valid, &vocab, cfg.model.max_rel);
    let test = Dataset::new(test, &vocab, cfg.model.max_rel);
    let seed = cfg.train.seed;

    let kg = train_kg(&kb_triples(&train.corpus), all_entities.iter().map(String::as_str), &cfg.transe)?;

    let mut cnn = init_classifier(&cfg.model, &vocab, train.corpus.relations(), seed);
    pretrain_classifier(&train, &mut cnn, &cfg.train, &mut stage_rng(seed, Stage::CnnPretrain))?;
    let noisy_cnn = cnn.clone();

    let mut state = TrainState::new(init_policy(&cfg.model), cnn);
    let data = EpisodeData { train: &train, entities: &kg.entities, valid: Some(&valid) };
    pretrain_policy(&mut state, &data, &cfg.train, &mut stage_rng(seed, Stage::PolicyPretrain))?;
    joint_train(&mut state, &data, &cfg.train, &mut stage_rng(seed, Stage::Joint))?;
    let best = state.best_nets().clone();

    let selection = cleanse(
        &train,
        &best.policy,
        &best.target_cnn,
        &kg.entities,
        SelectMode::Greedy,
        cfg.train.select_na_bags,
        seed,
    )?;
    let (audit, bags) = audit(&selection, &train.corpus)?;

    let n = selection.selected.len();
    let ranked = label_log_likelihoods(&train.corpus, &train.inputs, &noisy_cnn)?;
    let greedy = greedy_select(&ranked, n.max(1))?;
    let rl_cnn = train_on_subset(&train, &selection.selected, &cfg.model, &cfg.train, seed)?;
    let greedy_cnn = train_on_subset(&train, &greedy, &cfg.model, &cfg.train, seed)?;

    let acc = |p: &CnnParams| -> Result<f64> {
        accuracy(&test, p)?.ok_or(Error::Empty("empty test split"))
    };
    Ok(BenchmarkReport {
        audit,
        bags,
        noisy_accuracy: acc(&noisy_cnn)?,
        joint_accuracy: acc(&best.cnn)?,
        rl_subset_accuracy: acc(&rl_cnn)?,
        greedy_subset_accuracy: acc(&greedy_cnn)?,
        selected: n,
        train_sentences: train.corpus.len(),
        mean_prob_noisy: mean_prob(&selection, true),
        mean_prob_clean: mean_prob(&selection, false),
        metric_log: state.log_text(),
        selection,
    })
}
