//! Sentences, bags, and the vocabularies built over them.
//!
//! A corpus is immutable once constructed. Sentences are kept in ascending id
//! order and every sentence belongs to exactly one bag, keyed by
//! `(head entity, tail entity, relation)`.

mod synth;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use synth::{
    generate_synthetic, NoiseSource, PerRelation, SynthConfig, SyntheticCorpus,
};

use crate::error::{Error, Result};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const NA: &str = "NA";

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const NA_ID: usize = 0;

pub const DEFAULT_MAX_REL: usize = 30;
pub const DEFAULT_MAX_LEN: usize = 120;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sentence {
    pub id: u64,
    pub tokens: Vec<String>,
    pub head: String,
    pub tail: String,
    pub head_index: usize,
    pub tail_index: usize,
    pub relation: usize,
    /// Synthetic corpora only: `true` means the label does not describe the sentence.
    pub noise_flag: Option<bool>,
}

impl Sentence {
    pub fn bag_key(&self) -> BagKey {
        BagKey {
            head: self.head.clone(),
            tail: self.tail.clone(),
            relation: self.relation,
        }
    }

    fn check(&self, n_relations: usize) -> std::result::Result<(), String> {
        if self.tokens.is_empty() {
            return Err("sentence has no tokens".into());
        }
        let n = self.tokens.len();
        if self.head_index >= n || self.tail_index >= n {
            return Err(format!(
                "entity index out of range (head {}, tail {}, {} tokens)",
                self.head_index, self.tail_index, n
            ));
        }
        if self.head_index == self.tail_index {
            return Err(format!("head and tail share token index {}", self.head_index));
        }
        if self.relation >= n_relations {
            return Err(format!("relation id {} out of range", self.relation));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BagKey {
    pub head: String,
    pub tail: String,
    pub relation: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bag {
    pub head: String,
    pub tail: String,
    pub relation: usize,
    pub sentence_ids: Vec<u64>,
}

impl Bag {
    pub fn len(&self) -> usize {
        self.sentence_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentence_ids.is_empty()
    }

    pub fn key(&self) -> BagKey {
        BagKey {
            head: self.head.clone(),
            tail: self.tail.clone(),
            relation: self.relation,
        }
    }
}

/// Dense name-to-index map. Used for words, relations, and entities.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Lexicon {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Lexicon {
    pub fn from_names<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut lex = Lexicon::default();
        for name in names {
            let name = name.into();
            if lex.index.contains_key(&name) {
                return Err(Error::Validation(format!("duplicate name `{name}`")));
            }
            lex.insert(name);
        }
        Ok(lex)
    }

    /// Returns the existing id or assigns the next one.
    pub fn insert(&mut self, name: String) -> usize {
        if let Some(&id) = self.index.get(&name) {
            return id;
        }
        let id = self.names.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        id
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// Word vocabulary with `PAD` at 0 and `UNK` at 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab(Lexicon);

impl Vocab {
    pub fn from_sentences<'a>(sentences: impl IntoIterator<Item = &'a Sentence>) -> Self {
        let mut lex = Lexicon::default();
        lex.insert(PAD.to_string());
        lex.insert(UNK.to_string());
        for s in sentences {
            for t in &s.tokens {
                lex.insert(t.clone());
            }
        }
        Vocab(lex)
    }

    pub fn from_words(words: Vec<String>) -> Result<Self> {
        if words.len() < 2 || words[PAD_ID] != PAD || words[UNK_ID] != UNK {
            return Err(Error::Validation(format!(
                "vocabulary must start with `{PAD}` and `{UNK}`"
            )));
        }
        Ok(Vocab(Lexicon::from_names(words)?))
    }

    pub fn id(&self, word: &str) -> usize {
        self.0.get(word).unwrap_or(UNK_ID)
    }

    pub fn words(&self) -> &[String] {
        self.0.names()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Relation label map; `NA` always has id 0.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelationMap(Lexicon);

impl RelationMap {
    /// `NA` first, then the remaining names in sorted order.
    pub fn from_names<'a>(names: impl IntoIterator<Item = &'a str>) -> Self {
        let mut rest: Vec<&str> = names.into_iter().filter(|n| *n != NA).collect();
        rest.sort_unstable();
        rest.dedup();
        let mut lex = Lexicon::default();
        lex.insert(NA.to_string());
        for n in rest {
            lex.insert(n.to_string());
        }
        RelationMap(lex)
    }

    /// Keeps the given order; the first name must be `NA`.
    pub fn ordered(names: Vec<String>) -> Result<Self> {
        if names.first().map(String::as_str) != Some(NA) {
            return Err(Error::Validation(format!("relation list must start with `{NA}`")));
        }
        Ok(RelationMap(Lexicon::from_names(names)?))
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.0.get(name)
    }

    pub fn name(&self, id: usize) -> &str {
        self.0.name(id)
    }

    pub fn names(&self) -> &[String] {
        self.0.names()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn na_id(&self) -> usize {
        NA_ID
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    sentences: Vec<Sentence>,
    position: HashMap<u64, usize>,
    bags: Vec<Bag>,
    vocab: Vocab,
    relations: RelationMap,
    entities: Lexicon,
    rejected: usize,
}

#[derive(Clone, Debug)]
pub struct LoadOptions {
    pub max_len: usize,
    /// Fixed relation ids (e.g. from a trained model). Unknown relations are an error.
    pub relations: Option<RelationMap>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            max_len: DEFAULT_MAX_LEN,
            relations: None,
        }
    }
}

impl Corpus {
    /// Validates, sorts by id, groups into bags, and builds the vocabularies.
    pub fn from_sentences(mut sentences: Vec<Sentence>, relations: RelationMap) -> Result<Self> {
        sentences.sort_by_key(|s| s.id);
        let mut position = HashMap::with_capacity(sentences.len());
        for (i, s) in sentences.iter().enumerate() {
            if position.insert(s.id, i).is_some() {
                return Err(Error::Validation(format!("duplicate sentence id {}", s.id)));
            }
            s.check(relations.len())
                .map_err(|m| Error::Validation(format!("sentence {}: {m}", s.id)))?;
        }
        let bags = build_bags(&sentences);
        let vocab = Vocab::from_sentences(&sentences);
        let mut names: Vec<&str> = sentences
            .iter()
            .flat_map(|s| [s.head.as_str(), s.tail.as_str()])
            .collect();
        names.sort_unstable();
        names.dedup();
        let entities = Lexicon::from_names(names)?;
        Ok(Corpus {
            sentences,
            position,
            bags,
            vocab,
            relations,
            entities,
            rejected: 0,
        })
    }

    pub fn sentences(&self) -> &[Sentence] {
        &self.sentences
    }

    pub fn bags(&self) -> &[Bag] {
        &self.bags
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn relations(&self) -> &RelationMap {
        &self.relations
    }

    pub fn entities(&self) -> &Lexicon {
        &self.entities
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Sentences dropped at load because truncation could not keep both entities.
    pub fn rejected(&self) -> usize {
        self.rejected
    }

    pub fn sentence(&self, id: u64) -> Option<&Sentence> {
        self.position.get(&id).map(|&i| &self.sentences[i])
    }

    /// Position of sentence `id` in [`Corpus::sentences`].
    pub fn index_of(&self, id: u64) -> Option<usize> {
        self.position.get(&id).copied()
    }

    /// Subset with the given ids, keeping this corpus's relation map.
    pub fn subset(&self, ids: &HashSet<u64>) -> Result<Corpus> {
        let picked = self
            .sentences
            .iter()
            .filter(|s| ids.contains(&s.id))
            .cloned()
            .collect();
        Corpus::from_sentences(picked, self.relations.clone())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_sentences(&self.sentences, &self.relations, path)
    }
}

/// Groups sentences by `(head, tail, relation)`. Bags are ordered by their
/// smallest sentence id; members are in ascending id order.
pub fn build_bags(sentences: &[Sentence]) -> Vec<Bag> {
    let mut groups: BTreeMap<BagKey, Vec<u64>> = BTreeMap::new();
    for s in sentences {
        groups.entry(s.bag_key()).or_default().push(s.id);
    }
    let mut bags: Vec<Bag> = groups
        .into_iter()
        .map(|(key, mut ids)| {
            ids.sort_unstable();
            Bag {
                head: key.head,
                tail: key.tail,
                relation: key.relation,
                sentence_ids: ids,
            }
        })
        .collect();
    bags.sort_by_key(|b| b.sentence_ids[0]);
    bags
}

/// Relative distances of every token to the head and tail entity, clipped to
/// `[-max_rel, max_rel]` and shifted into `[0, 2 * max_rel]`.
pub fn position_features(sentence: &Sentence, max_rel: usize) -> (Vec<usize>, Vec<usize>) {
    let n = sentence.tokens.len() as i64;
    let head = (0..n)
        .map(|i| position_index(i - sentence.head_index as i64, max_rel))
        .collect();
    let tail = (0..n)
        .map(|i| position_index(i - sentence.tail_index as i64, max_rel))
        .collect();
    (head, tail)
}

#[inline]
pub fn position_index(offset: i64, max_rel: usize) -> usize {
    let m = max_rel as i64;
    (offset.clamp(-m, m) + m) as usize
}

/// One line of the corpus-jsonl format.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub id: u64,
    pub tokens: Vec<String>,
    pub head: String,
    pub tail: String,
    pub head_index: usize,
    pub tail_index: usize,
    pub relation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_flag: Option<bool>,
}

pub fn load_corpus(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<Corpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SentenceRecord =
            serde_json::from_str(&line).map_err(|e| Error::parse(path, n + 1, e.to_string()))?;
        records.push((n + 1, rec));
    }
    if records.is_empty() {
        return Err(Error::Empty("no sentences"));
    }

    let relations = match &opts.relations {
        Some(map) => map.clone(),
        None => RelationMap::from_names(records.iter().map(|(_, r)| r.relation.as_str())),
    };

    let mut sentences = Vec::with_capacity(records.len());
    let mut rejected = 0;
    for (line, rec) in records {
        let relation = relations.id(&rec.relation).ok_or_else(|| {
            Error::parse(path, line, format!("unknown relation `{}`", rec.relation))
        })?;
        let mut s = Sentence {
            id: rec.id,
            tokens: rec.tokens,
            head: rec.head,
            tail: rec.tail,
            head_index: rec.head_index,
            tail_index: rec.tail_index,
            relation,
            noise_flag: rec.noise_flag,
        };
        s.check(relations.len())
            .map_err(|m| Error::Validation(format!("{}:{line}: {m}", path.display())))?;
        if !truncate(&mut s, opts.max_len) {
            rejected += 1;
            continue;
        }
        sentences.push(s);
    }
    if sentences.is_empty() {
        return Err(Error::Empty("no sentences"));
    }
    let mut corpus = Corpus::from_sentences(sentences, relations)?;
    corpus.rejected = rejected;
    Ok(corpus)
}

/// Cuts a sentence to `max_len` tokens around its entities. Returns `false`
/// when the entities are too far apart to fit.
fn truncate(s: &mut Sentence, max_len: usize) -> bool {
    let n = s.tokens.len();
    if n <= max_len {
        return true;
    }
    let lo = s.head_index.min(s.tail_index);
    let hi = s.head_index.max(s.tail_index);
    if hi - lo + 1 > max_len {
        return false;
    }
    // Centre the entity span in the kept window.
    let slack = max_len - (hi - lo + 1);
    let start = lo.saturating_sub(slack / 2).min(n - max_len);
    s.tokens = s.tokens[start..start + max_len].to_vec();
    s.head_index -= start;
    s.tail_index -= start;
    true
}

pub fn save_sentences(
    sentences: &[Sentence],
    relations: &RelationMap,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for s in sentences {
        let rec = SentenceRecord {
            id: s.id,
            tokens: s.tokens.clone(),
            head: s.head.clone(),
            tail: s.tail.clone(),
            head_index: s.head_index,
            tail_index: s.tail_index,
            relation: relations.name(s.relation).to_string(),
            noise_flag: s.noise_flag,
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
