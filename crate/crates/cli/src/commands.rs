//! One function per subcommand. Each reads its inputs from the run
//! directory, writes its artifacts there, and records the effective
//! configuration as `<command>.config.toml`.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use relex_core::checkpoint::Checkpoint;
use relex_core::corpus::{generate_synthetic, load_corpus, Corpus, LoadOptions, RelationMap};
use relex_core::embeddings::{load_embeddings, load_triples, save_triples, EmbeddingTable};
use relex_core::eval::{pr_curve, predict_records, sentence_metrics, AuditSummary, NoisyBagStats, PrPoint, PredictionRecord, SentenceMetrics};
use relex_core::pipeline::{audit, cleanse, init_classifier, init_policy, kb_triples, stage_rng, train_kg, Stage};
use relex_core::selector::write_decisions;
use relex_core::trainer::{joint_train, pretrain_classifier, pretrain_policy, Dataset, EpisodeData, TrainState};

use crate::config::RunConfig;

pub const CNN_CKPT: &str = "cnn.ckpt.json";
pub const POLICY_CKPT: &str = "policy.ckpt.json";
pub const MODEL_CKPT: &str = "model.ckpt.json";
pub const ENTITY_EMB: &str = "entity_emb.txt";
pub const RELATION_EMB: &str = "relation_emb.txt";

fn require(path: PathBuf) -> Result<PathBuf> {
    if !path.exists() {
        bail!("missing artifact: {}", path.display());
    }
    Ok(path)
}

fn prepare(cfg: &RunConfig, command: &str) -> Result<()> {
    let out = &cfg.paths.out;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let path = out.join(format!("{command}.config.toml"));
    fs::write(&path, cfg.to_toml()?).with_context(|| format!("writing {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_split(path: PathBuf, cfg: &RunConfig, relations: Option<&RelationMap>) -> Result<Corpus> {
    let opts = LoadOptions { max_len: cfg.model.max_len, relations: relations.cloned() };
    Ok(load_corpus(require(path)?, &opts)?)
}

/// A held-out split if its file exists and is non-empty.
fn optional_split(path: PathBuf, cfg: &RunConfig, relations: &RelationMap) -> Result<Option<Corpus>> {
    if !path.exists() {
        return Ok(None);
    }
    let corpus = load_split(path, cfg, Some(relations))?;
    Ok(if corpus.is_empty() { None } else { Some(corpus) })
}

fn load_checkpoint(cfg: &RunConfig, name: &Path) -> Result<Checkpoint> {
    let path = require(cfg.paths.resolve(name))?;
    Checkpoint::load(&path).with_context(|| format!("loading {}", path.display()))
}

fn load_entities(cfg: &RunConfig, ck: &Checkpoint) -> Result<EmbeddingTable> {
    let path = require(cfg.paths.artifact(ENTITY_EMB))?;
    let table = load_embeddings(&path)?;
    if table.dim() != ck.model.entity_dim {
        bail!(
            "{} has dimension {}, the model expects {}",
            path.display(),
            table.dim(),
            ck.model.entity_dim
        );
    }
    Ok(table)
}

fn stamped(ck: &mut Checkpoint, stage: &str) {
    ck.meta.insert("stage".into(), stage.into());
}

pub fn gen_synth(cfg: &RunConfig) -> Result<()> {
    prepare(cfg, "gen-synth")?;
    let synth = generate_synthetic(&cfg.synth)?;
    let [train, valid, test] = synth.split(cfg.split)?;
    let p = &cfg.paths;
    for (corpus, path) in [(&train, &p.train), (&valid, &p.valid), (&test, &p.test)] {
        corpus.save(p.resolve(path))?;
    }
    let facts = kb_triples(&train);
    save_triples(facts.iter().map(|(h, r, t)| (h.as_str(), r.as_str(), t.as_str())), p.resolve(&p.triples))?;
    eprintln!(
        "wrote {} / {} / {} sentences and {} facts to {}",
        train.len(),
        valid.len(),
        test.len(),
        facts.len(),
        p.out.display()
    );
    Ok(())
}

pub fn pretrain_transe(cfg: &RunConfig) -> Result<()> {
    let p = &cfg.paths;
    let set = load_triples(require(p.resolve(&p.triples))?)?;
    prepare(cfg, "pretrain-transe")?;
    let facts: Vec<(String, String, String)> = set
        .triples
        .iter()
        .map(|t| {
            (
                set.entities.name(t.head).to_string(),
                set.relations.name(t.relation).to_string(),
                set.entities.name(t.tail).to_string(),
            )
        })
        .collect();
    // Entities of every available split need a vector, fact or not.
    let mut seen = BTreeSet::new();
    let mut names = Vec::new();
    for path in [&p.train, &p.valid, &p.test] {
        let path = p.resolve(path);
        if path.exists() {
            let corpus = load_split(path, cfg, None)?;
            for name in corpus.entities().names() {
                if seen.insert(name.clone()) {
                    names.push(name.clone());
                }
            }
        }
    }
    let kg = train_kg(&facts, names.iter().map(String::as_str), &cfg.transe)?;
    kg.entities.save(p.artifact(ENTITY_EMB))?;
    kg.relations.save(p.artifact(RELATION_EMB))?;
    if let (Some(first), Some(last)) = (kg.epoch_losses.first(), kg.epoch_losses.last()) {
        eprintln!("TransE mean hinge {first:.4} -> {last:.4} over {} epochs", kg.epoch_losses.len());
    }
    Ok(())
}

pub fn pretrain_cnn(cfg: &RunConfig) -> Result<()> {
    let p = &cfg.paths;
    let train = load_split(p.resolve(&p.train), cfg, None)?;
    prepare(cfg, "pretrain-cnn")?;
    let vocab = train.vocab().clone();
    let relations = train.relations().clone();
    let data = Dataset::new(train, &vocab, cfg.model.max_rel);
    let seed = cfg.train.seed;
    let mut cnn = init_classifier(&cfg.model, &vocab, &relations, seed);
    if !p.word_vectors.as_os_str().is_empty() {
        let table = load_embeddings(require(p.resolve(&p.word_vectors))?)?;
        let hits = cnn.load_word_vectors(&vocab, &table)?;
        eprintln!("initialized {hits} of {} word vectors from {}", vocab.len(), p.word_vectors.display());
    }
    let losses = pretrain_classifier(&data, &mut cnn, &cfg.train, &mut stage_rng(seed, Stage::CnnPretrain))?;
    let mut ck = Checkpoint::new(cfg.model.clone(), &vocab, &relations);
    ck.put_cnn("cnn", &cnn)?;
    stamped(&mut ck, "pretrain-cnn");
    ck.save(p.artifact(CNN_CKPT))?;
    if let Some(last) = losses.last() {
        eprintln!("classifier loss after {} epochs: {last:.4}", losses.len());
    }
    Ok(())
}

pub fn pretrain_policy_cmd(cfg: &RunConfig) -> Result<()> {
    let p = &cfg.paths;
    let ck = load_checkpoint(cfg, Path::new(CNN_CKPT))?;
    let (vocab, relations) = (ck.vocab()?, ck.relations()?);
    let entities = load_entities(cfg, &ck)?;
    let train = Dataset::new(load_split(p.resolve(&p.train), cfg, Some(&relations))?, &vocab, ck.model.max_rel);
    let valid = optional_split(p.resolve(&p.valid), cfg, &relations)?.map(|c| Dataset::new(c, &vocab, ck.model.max_rel));
    prepare(cfg, "pretrain-policy")?;

    let mut state = TrainState::new(init_policy(&ck.model), ck.cnn("cnn")?);
    let data = EpisodeData { train: &train, entities: &entities, valid: valid.as_ref() };
    pretrain_policy(&mut state, &data, &cfg.train, &mut stage_rng(cfg.train.seed, Stage::PolicyPretrain))?;
    // Joint training starts from target copies of the pretrained networks.
    state.reset_targets();

    let mut out = Checkpoint::new(ck.model.clone(), &vocab, &relations);
    out.put_networks(&state.nets)?;
    stamped(&mut out, "pretrain-policy");
    out.save(p.artifact(POLICY_CKPT))?;
    fs::write(p.artifact("policy_metrics.tsv"), state.log_text())?;
    Ok(())
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let p = &cfg.paths;
    let ck = load_checkpoint(cfg, Path::new(POLICY_CKPT))?;
    let (vocab, relations) = (ck.vocab()?, ck.relations()?);
    let entities = load_entities(cfg, &ck)?;
    let train = Dataset::new(load_split(p.resolve(&p.train), cfg, Some(&relations))?, &vocab, ck.model.max_rel);
    let valid = optional_split(p.resolve(&p.valid), cfg, &relations)?.map(|c| Dataset::new(c, &vocab, ck.model.max_rel));
    prepare(cfg, "train")?;

    let nets = ck.networks()?;
    let mut state = TrainState::new(nets.policy.clone(), nets.cnn.clone());
    state.nets = nets;
    let data = EpisodeData { train: &train, entities: &entities, valid: valid.as_ref() };
    joint_train(&mut state, &data, &cfg.train, &mut stage_rng(cfg.train.seed, Stage::Joint))?;

    let mut out = Checkpoint::new(ck.model.clone(), &vocab, &relations);
    out.put_networks(state.best_nets())?;
    stamped(&mut out, "train");
    if let Some(best) = &state.best {
        out.meta.insert("best_episode".into(), best.episode.to_string());
    }
    out.save(p.artifact(MODEL_CKPT))?;
    fs::write(p.artifact("metrics.tsv"), state.log_text())?;
    Ok(())
}

#[derive(Serialize)]
struct AuditReport {
    sentences: usize,
    selected: usize,
    /// Present when every decided sentence carries a noise flag.
    audit: Option<AuditSummary>,
    bags: Option<NoisyBagStats>,
}

pub fn select(cfg: &RunConfig) -> Result<()> {
    let p = &cfg.paths;
    let ck = load_checkpoint(cfg, Path::new(MODEL_CKPT))?;
    let (vocab, relations) = (ck.vocab()?, ck.relations()?);
    let entities = load_entities(cfg, &ck)?;
    let train = Dataset::new(load_split(p.resolve(&p.train), cfg, Some(&relations))?, &vocab, ck.model.max_rel);
    prepare(cfg, "select")?;

    let nets = ck.networks()?;
    let selection = cleanse(
        &train,
        &nets.policy,
        &nets.target_cnn,
        &entities,
        cfg.select.mode,
        cfg.train.select_na_bags,
        cfg.train.seed,
    )?;
    let kept: HashSet<u64> = selection.selected.iter().copied().collect();
    train.corpus.subset(&kept)?.save(p.artifact("cleansed.jsonl"))?;
    write_decisions(p.artifact("decisions.tsv"), &selection.decisions, &relations)?;

    let flagged = selection.decisions.iter().filter(|d| !d.bypassed()).all(|d| d.noise_flag.is_some());
    let any_decided = selection.decisions.iter().any(|d| !d.bypassed());
    let (audit, bags) = if flagged && any_decided {
        let (a, b) = audit(&selection, &train.corpus)?;
        (Some(a), Some(b))
    } else {
        (None, None)
    };
    let report = AuditReport { sentences: train.corpus.len(), selected: selection.selected.len(), audit, bags };
    write_json(&p.artifact("audit.json"), &report)?;
    eprintln!("kept {} of {} sentences", report.selected, report.sentences);
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct EvalSummary {
    pub sentences: usize,
    pub metrics: SentenceMetrics,
    pub pr_points: usize,
}

pub fn summarize(records: &[PredictionRecord], n_relations: usize, exclude_na: bool) -> Result<(EvalSummary, Vec<PrPoint>)> {
    let metrics = sentence_metrics(records, n_relations, exclude_na)?;
    // A test split without positive facts has no curve.
    let pr = if records.iter().any(|r| r.gold != 0) { pr_curve(records, 0)? } else { Vec::new() };
    Ok((EvalSummary { sentences: records.len(), metrics, pr_points: pr.len() }, pr))
}

pub fn eval(cfg: &RunConfig) -> Result<()> {
    let p = &cfg.paths;
    let ck = load_checkpoint(cfg, &cfg.eval.checkpoint)?;
    let (vocab, relations) = (ck.vocab()?, ck.relations()?);
    let test = Dataset::new(load_split(p.resolve(&p.test), cfg, Some(&relations))?, &vocab, ck.model.max_rel);
    prepare(cfg, "eval")?;

    let cnn = ck.cnn("cnn")?;
    let records = predict_records(&test.corpus, &test.inputs, &cnn)?;
    let (summary, pr) = summarize(&records, relations.len(), cfg.eval.exclude_na)?;
    write_json(&p.artifact("metrics.json"), &summary)?;
    let mut text = String::from("threshold\tprecision\trecall\n");
    for pt in &pr {
        text.push_str(&format!("{}\t{}\t{}\n", pt.threshold, pt.precision, pt.recall));
    }
    fs::write(p.artifact("pr.tsv"), text)?;
    eprintln!(
        "accuracy {:.4}, macro-F1 {:.4} over {} sentences",
        summary.metrics.accuracy, summary.metrics.macro_f1, summary.sentences
    );
    Ok(())
}
