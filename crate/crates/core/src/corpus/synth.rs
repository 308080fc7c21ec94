//! Seeded generator for distantly supervised corpora with known noise.
//!
//! Every relation (including `NA`) owns a family of sentence templates built
//! from its own keywords plus shared filler words. A clean sentence is drawn
//! from its label's family; a noisy sentence is drawn from another family but
//! keeps the bag label, and carries `noise_flag = true`.

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Bag, Corpus, RelationMap, Sentence, NA, NA_ID};
use crate::error::{Error, Result};

/// A rate given once for every relation or once per relation id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerRelation {
    All(f64),
    Each(Vec<f64>),
}

impl PerRelation {
    pub fn get(&self, relation: usize) -> f64 {
        match self {
            PerRelation::All(v) => *v,
            PerRelation::Each(v) => v[relation],
        }
    }
}

/// Where a noisy sentence's content comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSource {
    /// Positive bags take noise from the `NA` family (the sentence expresses
    /// no relation); `NA` bags take it uniformly from the positive families.
    Na,
    /// Any other family, uniformly.
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Number of relation labels, `NA` included.
    pub n_relations: usize,
    pub n_entities: usize,
    pub n_bags: usize,
    /// Inclusive.
    pub bag_size_range: (usize, usize),
    pub noise_rate: PerRelation,
    pub all_noisy_bag_rate: f64,
    /// Distinct non-entity words (keywords plus filler).
    pub vocab_size: usize,
    /// Inclusive.
    pub template_length_range: (usize, usize),
    pub templates_per_relation: usize,
    /// Bag label distribution; uniform when absent.
    pub relation_weights: Option<Vec<f64>>,
    pub noise_source: NoiseSource,
    pub rng_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_relations: 5,
            n_entities: 200,
            n_bags: 600,
            bag_size_range: (2, 6),
            noise_rate: PerRelation::Each(vec![0.0, 0.4, 0.4, 0.4, 0.4]),
            all_noisy_bag_rate: 0.2,
            vocab_size: 400,
            template_length_range: (8, 16),
            templates_per_relation: 4,
            relation_weights: Some(vec![0.15, 0.40, 0.15, 0.15, 0.15]),
            noise_source: NoiseSource::Na,
            rng_seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let n = self.n_relations;
        if n == 0 {
            problems.push("n_relations must be at least 1".to_string());
        }
        if let PerRelation::Each(v) = &self.noise_rate {
            if v.len() != n {
                problems.push(format!("noise_rate has {} entries for {n} relations", v.len()));
            }
        }
        let rates: Vec<f64> = match &self.noise_rate {
            PerRelation::All(v) => vec![*v],
            PerRelation::Each(v) => v.clone(),
        };
        if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            problems.push("noise_rate entries must lie in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.all_noisy_bag_rate) {
            problems.push("all_noisy_bag_rate must lie in [0, 1]".into());
        }
        let noisy = rates.iter().any(|r| *r > 0.0) || self.all_noisy_bag_rate > 0.0;
        if n < 2 && noisy {
            problems.push("noise needs at least two relation families".into());
        }
        let (lo, hi) = self.bag_size_range;
        if lo == 0 || lo > hi {
            problems.push(format!("bag_size_range ({lo}, {hi}) is empty or starts at 0"));
        }
        let (tlo, thi) = self.template_length_range;
        if tlo < 3 || tlo > thi {
            problems.push(format!(
                "template_length_range ({tlo}, {thi}) must be non-empty with lengths >= 3"
            ));
        }
        if self.templates_per_relation == 0 {
            problems.push("templates_per_relation must be positive".into());
        }
        if self.vocab_size < 2 * n.max(1) {
            problems.push(format!("vocab_size must be at least {}", 2 * n.max(1)));
        }
        if self.n_entities < 2 {
            problems.push("n_entities must be at least 2".into());
        }
        let capacity = self.n_entities.saturating_mul(self.n_entities.saturating_sub(1));
        if self.n_bags > capacity.saturating_mul(n) {
            problems.push("n_bags exceeds the number of distinct (pair, relation) keys".into());
        }
        if let Some(w) = &self.relation_weights {
            if w.len() != n {
                problems.push(format!("relation_weights has {} entries for {n} relations", w.len()));
            } else if w.iter().any(|x| !x.is_finite() || *x < 0.0) || w.iter().sum::<f64>() <= 0.0 {
                problems.push("relation_weights must be non-negative with a positive sum".into());
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    /// Chance that an ordinary bag of this relation ends up all-noisy.
    fn chance_all_noisy(&self, relation: usize) -> f64 {
        let p = self.noise_rate.get(relation);
        let (lo, hi) = self.bag_size_range;
        (lo..=hi).map(|k| p.powi(k as i32)).sum::<f64>() / (hi - lo + 1) as f64
    }

    /// Rate at which bags are forced all-noisy so that, counting bags that
    /// become all-noisy by chance, the total matches `all_noisy_bag_rate`.
    /// Relations with zero noise rate are exempt.
    fn forced_all_noisy_rate(&self, relation: usize) -> f64 {
        if self.noise_rate.get(relation) == 0.0 {
            return 0.0;
        }
        let q = self.chance_all_noisy(relation);
        if q >= 1.0 {
            return 1.0;
        }
        ((self.all_noisy_bag_rate - q) / (1.0 - q)).max(0.0)
    }
}

#[derive(Clone, Debug)]
struct Template {
    len: usize,
    head: usize,
    tail: usize,
    keyword_slots: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    /// Distant-supervision labels with noise flags.
    pub corpus: Corpus,
    /// Relation whose family actually produced each sentence.
    pub true_relation: HashMap<u64, usize>,
}

impl SyntheticCorpus {
    /// Knowledge-base facts behind the positive bags: `(head, relation, tail)`.
    pub fn facts(&self) -> Vec<(String, String, String)> {
        let rel = self.corpus.relations();
        self.corpus
            .bags()
            .iter()
            .filter(|b| b.relation != NA_ID)
            .map(|b| (b.head.clone(), rel.name(b.relation).to_string(), b.tail.clone()))
            .collect()
    }

    /// Sentences of `bags` with their true relation as label and no noise.
    pub fn relabeled(&self, bags: &[Bag]) -> Result<Corpus> {
        let sentences = self.collect(bags, true);
        Corpus::from_sentences(sentences, self.corpus.relations().clone())
    }

    /// Sentences of `bags` exactly as generated.
    pub fn noisy(&self, bags: &[Bag]) -> Result<Corpus> {
        let sentences = self.collect(bags, false);
        Corpus::from_sentences(sentences, self.corpus.relations().clone())
    }

    fn collect(&self, bags: &[Bag], clean: bool) -> Vec<Sentence> {
        bags.iter()
            .flat_map(|b| b.sentence_ids.iter())
            .map(|id| {
                let mut s = self.corpus.sentence(*id).expect("bag member").clone();
                if clean {
                    s.relation = self.true_relation[id];
                    s.noise_flag = Some(false);
                }
                s
            })
            .collect()
    }

    /// Splits bags in generation order by the given ratios. The first part
    /// keeps distant-supervision labels; the others are relabeled with the
    /// true relation (the hand-annotated analogue used for evaluation).
    pub fn split(&self, ratios: [f64; 3]) -> Result<[Corpus; 3]> {
        if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || ratios.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("split ratios must be non-negative with a positive sum".into()));
        }
        // Bags are listed by first sentence id, which is generation order.
        let bags = self.corpus.bags();
        let total: f64 = ratios.iter().sum();
        let n = bags.len() as f64;
        let a = (n * ratios[0] / total).round() as usize;
        let b = (n * (ratios[0] + ratios[1]) / total).round() as usize;
        let (a, b) = (a.min(bags.len()), b.min(bags.len()).max(a.min(bags.len())));
        Ok([
            self.noisy(&bags[..a])?,
            self.relabeled(&bags[a..b])?,
            self.relabeled(&bags[b..])?,
        ])
    }
}

pub fn generate_synthetic(config: &SynthConfig) -> Result<SyntheticCorpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let n_rel = config.n_relations;

    let relation_names: Vec<String> = std::iter::once(NA.to_string())
        .chain((1..n_rel).map(|r| format!("rel_{r}")))
        .collect();
    let relations = RelationMap::ordered(relation_names)?;

    let per_family = (config.vocab_size / (2 * n_rel)).max(1);
    let keywords: Vec<Vec<String>> = (0..n_rel)
        .map(|r| (0..per_family).map(|j| format!("kw{r}_{j}")).collect())
        .collect();
    let filler: Vec<String> = (0..config.vocab_size - per_family * n_rel)
        .map(|j| format!("w{j}"))
        .collect();
    let entities: Vec<String> = (0..config.n_entities).map(|i| format!("ent{i}")).collect();

    let templates: Vec<Vec<Template>> = (0..n_rel)
        .map(|_| {
            (0..config.templates_per_relation)
                .map(|_| make_template(config.template_length_range, &mut rng))
                .collect()
        })
        .collect();

    let weights: Vec<f64> = config
        .relation_weights
        .clone()
        .unwrap_or_else(|| vec![1.0; n_rel]);
    let weight_sum: f64 = weights.iter().sum();
    let forced: Vec<f64> = (0..n_rel).map(|r| config.forced_all_noisy_rate(r)).collect();

    let mut used = HashSet::new();
    let mut sentences = Vec::new();
    let mut true_relation = HashMap::new();
    let mut next_id = 0u64;

    for _ in 0..config.n_bags {
        let relation = sample_weighted(&weights, weight_sum, &mut rng);
        let (head, tail) = loop {
            let h = rng.gen_range(0..config.n_entities);
            let t = rng.gen_range(0..config.n_entities);
            if h != t && used.insert((h, t, relation)) {
                break (h, t);
            }
        };
        let size = rng.gen_range(config.bag_size_range.0..=config.bag_size_range.1);
        let all_noisy = rng.gen_bool(forced[relation]);
        let p = config.noise_rate.get(relation);

        for _ in 0..size {
            let noisy = all_noisy || rng.gen_bool(p);
            let family = if noisy {
                noise_family(relation, n_rel, config.noise_source, &mut rng)
            } else {
                relation
            };
            let template = &templates[family][rng.gen_range(0..templates[family].len())];
            let tokens = (0..template.len)
                .map(|i| {
                    if i == template.head {
                        entities[head].clone()
                    } else if i == template.tail {
                        entities[tail].clone()
                    } else if template.keyword_slots.contains(&i) {
                        keywords[family].choose(&mut rng).unwrap().clone()
                    } else {
                        filler.choose(&mut rng).unwrap().clone()
                    }
                })
                .collect();
            sentences.push(Sentence {
                id: next_id,
                tokens,
                head: entities[head].clone(),
                tail: entities[tail].clone(),
                head_index: template.head,
                tail_index: template.tail,
                relation,
                noise_flag: Some(noisy),
            });
            true_relation.insert(next_id, family);
            next_id += 1;
        }
    }

    let corpus = Corpus::from_sentences(sentences, relations)?;
    Ok(SyntheticCorpus {
        corpus,
        true_relation,
    })
}

fn make_template(length: (usize, usize), rng: &mut ChaCha8Rng) -> Template {
    let len = rng.gen_range(length.0..=length.1);
    let mut slots: Vec<usize> = (0..len).collect();
    slots.shuffle(rng);
    let n_keywords = (len / 4).max(1);
    Template {
        len,
        head: slots[0],
        tail: slots[1],
        keyword_slots: slots[2..2 + n_keywords].to_vec(),
    }
}

fn sample_weighted(weights: &[f64], total: f64, rng: &mut ChaCha8Rng) -> usize {
    let mut x = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

fn noise_family(relation: usize, n_rel: usize, source: NoiseSource, rng: &mut ChaCha8Rng) -> usize {
    match source {
        NoiseSource::Na if relation != NA_ID => NA_ID,
        NoiseSource::Na => rng.gen_range(1..n_rel),
        NoiseSource::Uniform => {
            let other = rng.gen_range(0..n_rel - 1);
            if other >= relation {
                other + 1
            } else {
                other
            }
        }
    }
}
