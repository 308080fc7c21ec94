//! Embedding tables and TransE training for entity/relation vectors.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Lexicon;
use crate::error::{Error, Result};
use crate::linalg::{l2_norm, Matrix};

/// Named rows of a dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    names: Lexicon,
    values: Matrix,
}

impl EmbeddingTable {
    pub fn new(names: Vec<String>, values: Matrix) -> Result<Self> {
        if values.cols() == 0 {
            return Err(Error::Validation("embedding dimension must be positive".into()));
        }
        if names.len() != values.rows() {
            return Err(Error::Shape(format!(
                "{} names for {} embedding rows",
                names.len(),
                values.rows()
            )));
        }
        Ok(EmbeddingTable {
            names: Lexicon::from_names(names)?,
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    pub fn names(&self) -> &[String] {
        self.names.names()
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.get(name)
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.names.get(name).map(|i| self.values.row(i))
    }

    /// Appends seeded-random rows for every name not yet in the table.
    pub fn complete<'a>(
        &mut self,
        names: impl IntoIterator<Item = &'a str>,
        seed: u64,
        scale: f64,
    ) -> usize {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = self.dim();
        let mut added = 0;
        for name in names {
            if self.names.get(name).is_some() {
                continue;
            }
            let row: Vec<f64> = (0..dim).map(|_| uniform(&mut rng, scale)).collect();
            self.names.insert(name.to_string());
            self.values.push_row(&row).expect("row has table width");
            added += 1;
        }
        added
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for (i, name) in self.names().iter().enumerate() {
            let mut line = name.clone();
            for v in self.values.row(i) {
                line.push(' ');
                line.push_str(&v.to_string());
            }
            line.push('\n');
            out.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }
}

#[inline]
fn uniform(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    if scale == 0.0 {
        0.0
    } else {
        rng.gen_range(-scale..=scale)
    }
}

/// Table with i.i.d. entries uniform in `[-scale, scale]`.
pub fn init_random(names: Vec<String>, dim: usize, seed: u64, scale: f64) -> Result<EmbeddingTable> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = Matrix::from_fn(names.len(), dim, |_, _| uniform(&mut rng, scale));
    EmbeddingTable::new(names, values)
}

/// Reads `name v1 ... v_dim` lines.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut names = Vec::new();
    let mut seen = HashMap::new();
    let mut values: Option<Matrix> = None;
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut fields = line.split_whitespace();
        let Some(name) = fields.next() else { continue };
        let row = fields
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(path, n + 1, e.to_string()))?;
        if row.is_empty() {
            return Err(Error::parse(path, n + 1, "row has no values"));
        }
        if let Some(prev) = seen.insert(name.to_string(), n + 1) {
            return Err(Error::Validation(format!(
                "{}: `{name}` on lines {prev} and {}",
                path.display(),
                n + 1
            )));
        }
        let m = values.get_or_insert_with(|| Matrix::zeros(0, row.len()));
        if row.len() != m.cols() {
            return Err(Error::parse(
                path,
                n + 1,
                format!("expected {} values, found {}", m.cols(), row.len()),
            ));
        }
        m.push_row(&row)?;
        names.push(name.to_string());
    }
    let values = values.ok_or(Error::Empty("embedding file has no rows"))?;
    EmbeddingTable::new(names, values)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Triple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

/// Triples file: `head<TAB>relation<TAB>tail` per line.
pub struct TripleSet {
    pub triples: Vec<Triple>,
    pub entities: Lexicon,
    pub relations: Lexicon,
}

pub fn load_triples(path: impl AsRef<Path>) -> Result<TripleSet> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut set = TripleSet {
        triples: Vec::new(),
        entities: Lexicon::default(),
        relations: Lexicon::default(),
    };
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 3 {
            return Err(Error::parse(path, n + 1, "expected three tab-separated fields"));
        }
        set.triples.push(Triple {
            head: set.entities.insert(parts[0].to_string()),
            relation: set.relations.insert(parts[1].to_string()),
            tail: set.entities.insert(parts[2].to_string()),
        });
    }
    Ok(set)
}

pub fn save_triples<'a>(
    triples: impl IntoIterator<Item = (&'a str, &'a str, &'a str)>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for (h, r, t) in triples {
        writeln!(out, "{h}\t{r}\t{t}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// `-‖h + r − t‖₂`; zero exactly when `t = h + r`.
pub fn transe_score(h: &[f64], r: &[f64], t: &[f64]) -> Result<f64> {
    if h.len() != r.len() || r.len() != t.len() {
        return Err(Error::Shape(format!(
            "TransE vectors of lengths {}, {}, {}",
            h.len(),
            r.len(),
            t.len()
        )));
    }
    Ok(-translation_distance(h, r, t))
}

fn translation_distance(h: &[f64], r: &[f64], t: &[f64]) -> f64 {
    h.iter()
        .zip(r)
        .zip(t)
        .map(|((h, r), t)| {
            let d = h + r - t;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransEConfig {
    pub dim: usize,
    pub margin: f64,
    pub lr: f64,
    pub epochs: usize,
    pub neg_per_pos: usize,
    pub seed: u64,
}

impl Default for TransEConfig {
    fn default() -> Self {
        TransEConfig {
            dim: 50,
            margin: 1.0,
            lr: 0.01,
            epochs: 200,
            neg_per_pos: 1,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TransEModel {
    pub entities: Matrix,
    pub relations: Matrix,
    /// Mean hinge loss over each epoch's (positive, corrupted) pairs.
    pub epoch_losses: Vec<f64>,
}

/// Hinge loss on one (positive, negative) pair and its gradients with
/// respect to the five vectors involved. Gradients are zero when inactive.
pub struct HingeTerm {
    pub loss: f64,
    pub grad_h: Vec<f64>,
    pub grad_r: Vec<f64>,
    pub grad_t: Vec<f64>,
    pub grad_neg_h: Vec<f64>,
    pub grad_neg_t: Vec<f64>,
}

pub fn hinge_term(
    h: &[f64],
    r: &[f64],
    t: &[f64],
    neg_h: &[f64],
    neg_t: &[f64],
    margin: f64,
) -> HingeTerm {
    let dim = h.len();
    let d_pos = translation_distance(h, r, t);
    let d_neg = translation_distance(neg_h, r, neg_t);
    let loss = (margin + d_pos - d_neg).max(0.0);
    let mut term = HingeTerm {
        loss,
        grad_h: vec![0.0; dim],
        grad_r: vec![0.0; dim],
        grad_t: vec![0.0; dim],
        grad_neg_h: vec![0.0; dim],
        grad_neg_t: vec![0.0; dim],
    };
    if loss <= 0.0 {
        return term;
    }
    for k in 0..dim {
        // d‖x‖/dx = x/‖x‖; the distance is not differentiable at 0, use 0 there.
        let up = if d_pos > 0.0 { (h[k] + r[k] - t[k]) / d_pos } else { 0.0 };
        let un = if d_neg > 0.0 { (neg_h[k] + r[k] - neg_t[k]) / d_neg } else { 0.0 };
        term.grad_h[k] = up;
        term.grad_t[k] = -up;
        term.grad_neg_h[k] = -un;
        term.grad_neg_t[k] = un;
        term.grad_r[k] = up - un;
    }
    term
}

pub fn transe_train(
    triples: &[Triple],
    n_entities: usize,
    n_relations: usize,
    config: &TransEConfig,
) -> Result<TransEModel> {
    if triples.is_empty() {
        return Err(Error::Empty("TransE needs at least one triple"));
    }
    if config.margin <= 0.0 {
        return Err(Error::Config("TransE margin must be positive".into()));
    }
    if config.dim == 0 {
        return Err(Error::Config("TransE dimension must be positive".into()));
    }
    for t in triples {
        if t.head >= n_entities || t.tail >= n_entities || t.relation >= n_relations {
            return Err(Error::Validation(format!("triple {t:?} out of range")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let bound = 6.0 / (config.dim as f64).sqrt();
    let mut entities = Matrix::from_fn(n_entities, config.dim, |_, _| uniform(&mut rng, bound));
    let mut relations = Matrix::from_fn(n_relations, config.dim, |_, _| uniform(&mut rng, bound));
    for r in 0..n_relations {
        normalize(relations.row_mut(r), 1.0, true);
    }
    for e in 0..n_entities {
        normalize(entities.row_mut(e), 1.0, false);
    }

    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..triples.len()).collect();
    for _ in 0..config.epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut count = 0usize;
        for &i in &order {
            let pos = triples[i];
            for _ in 0..config.neg_per_pos {
                let neg = corrupt(pos, n_entities, &mut rng);
                let term = hinge_term(
                    entities.row(pos.head),
                    relations.row(pos.relation),
                    entities.row(pos.tail),
                    entities.row(neg.head),
                    entities.row(neg.tail),
                    config.margin,
                );
                total += term.loss;
                count += 1;
                if term.loss > 0.0 {
                    let lr = config.lr;
                    step(entities.row_mut(pos.head), &term.grad_h, lr);
                    step(entities.row_mut(pos.tail), &term.grad_t, lr);
                    step(entities.row_mut(neg.head), &term.grad_neg_h, lr);
                    step(entities.row_mut(neg.tail), &term.grad_neg_t, lr);
                    step(relations.row_mut(pos.relation), &term.grad_r, lr);
                }
            }
        }
        for e in 0..n_entities {
            normalize(entities.row_mut(e), 1.0, false);
        }
        epoch_losses.push(total / count as f64);
    }
    Ok(TransEModel {
        entities,
        relations,
        epoch_losses,
    })
}

fn corrupt(pos: Triple, n_entities: usize, rng: &mut ChaCha8Rng) -> Triple {
    let replace_head = rng.gen_bool(0.5);
    let original = if replace_head { pos.head } else { pos.tail };
    let mut e = rng.gen_range(0..n_entities);
    if n_entities > 1 {
        while e == original {
            e = rng.gen_range(0..n_entities);
        }
    }
    if replace_head {
        Triple { head: e, ..pos }
    } else {
        Triple { tail: e, ..pos }
    }
}

fn step(row: &mut [f64], grad: &[f64], lr: f64) {
    for (v, g) in row.iter_mut().zip(grad) {
        *v -= lr * g;
    }
}

/// Scales `v` to norm `target`; when `exact` is false only shrinks.
fn normalize(v: &mut [f64], target: f64, exact: bool) {
    let n = l2_norm(v);
    if n > 0.0 && (exact || n > target) {
        for x in v.iter_mut() {
            *x *= target / n;
        }
    }
}
