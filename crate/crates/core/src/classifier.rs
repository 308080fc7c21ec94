//! Convolutional relation classifier.
//!
//! Each token is the concatenation of its word embedding and two position
//! embeddings (distance to head and to tail). A single convolution over
//! windows of three tokens is max-pooled per filter, passed through `tanh`,
//! and projected onto the relation logits. Gradients are computed by hand.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{position_index, Sentence, Vocab, PAD_ID};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, dot2, log_softmax, softmax, Matrix};

/// Tokens per convolution window.
pub const WINDOW: usize = 3;

/// Batch members per parallel gradient chunk. Fixed so results do not depend
/// on the number of worker threads.
const GRAD_CHUNK: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnnShape {
    pub vocab_size: usize,
    pub n_relations: usize,
    pub word_dim: usize,
    pub pos_dim: usize,
    pub filters: usize,
    pub max_rel: usize,
}

impl CnnShape {
    /// Width of one input row.
    pub fn token_dim(&self) -> usize {
        self.word_dim + 2 * self.pos_dim
    }

    pub fn positions(&self) -> usize {
        2 * self.max_rel + 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CnnParams {
    pub shape: CnnShape,
    pub word_emb: Matrix,
    pub pos_head: Matrix,
    pub pos_tail: Matrix,
    /// `filters × (WINDOW · token_dim)`
    pub conv_w: Matrix,
    pub conv_b: Vec<f64>,
    /// `n_relations × filters`
    pub out_w: Matrix,
    pub out_b: Vec<f64>,
}

fn xavier(rows: usize, cols: usize, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-bound..=bound))
}

impl CnnParams {
    /// Glorot-uniform initialization of every tensor, seeded. Biases start at zero.
    pub fn init(shape: CnnShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = shape.token_dim();
        let p = shape.positions();
        let word_emb = xavier(shape.vocab_size, shape.word_dim, shape.vocab_size, shape.word_dim, &mut rng);
        let pos_head = xavier(p, shape.pos_dim, p, shape.pos_dim, &mut rng);
        let pos_tail = xavier(p, shape.pos_dim, p, shape.pos_dim, &mut rng);
        let conv_w = xavier(shape.filters, WINDOW * d, WINDOW * d, shape.filters, &mut rng);
        let out_w = xavier(shape.n_relations, shape.filters, shape.filters, shape.n_relations, &mut rng);
        CnnParams {
            shape,
            word_emb,
            pos_head,
            pos_tail,
            conv_w,
            conv_b: vec![0.0; shape.filters],
            out_w,
            out_b: vec![0.0; shape.n_relations],
        }
    }

    pub fn zeros(shape: CnnShape) -> Self {
        let d = shape.token_dim();
        let p = shape.positions();
        CnnParams {
            shape,
            word_emb: Matrix::zeros(shape.vocab_size, shape.word_dim),
            pos_head: Matrix::zeros(p, shape.pos_dim),
            pos_tail: Matrix::zeros(p, shape.pos_dim),
            conv_w: Matrix::zeros(shape.filters, WINDOW * d),
            conv_b: vec![0.0; shape.filters],
            out_w: Matrix::zeros(shape.n_relations, shape.filters),
            out_b: vec![0.0; shape.n_relations],
        }
    }

    /// Copies pretrained vectors into the rows of known words. Returns how many matched.
    pub fn load_word_vectors(&mut self, vocab: &Vocab, table: &EmbeddingTable) -> Result<usize> {
        if table.dim() != self.shape.word_dim {
            return Err(Error::Shape(format!(
                "word vectors have dimension {}, model expects {}",
                table.dim(),
                self.shape.word_dim
            )));
        }
        let mut hits = 0;
        for (i, w) in vocab.words().iter().enumerate() {
            if let Some(v) = table.get(w) {
                self.word_emb.row_mut(i).copy_from_slice(v);
                hits += 1;
            }
        }
        Ok(hits)
    }

    /// Every tensor by name, flattened row-major, with its shape.
    pub fn tensors(&self) -> Vec<(&'static str, Vec<usize>, &[f64])> {
        vec![
            ("word_emb", vec![self.word_emb.rows(), self.word_emb.cols()], self.word_emb.as_slice()),
            ("pos_head", vec![self.pos_head.rows(), self.pos_head.cols()], self.pos_head.as_slice()),
            ("pos_tail", vec![self.pos_tail.rows(), self.pos_tail.cols()], self.pos_tail.as_slice()),
            ("conv_w", vec![self.conv_w.rows(), self.conv_w.cols()], self.conv_w.as_slice()),
            ("conv_b", vec![self.conv_b.len()], &self.conv_b),
            ("out_w", vec![self.out_w.rows(), self.out_w.cols()], self.out_w.as_slice()),
            ("out_b", vec![self.out_b.len()], &self.out_b),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.word_emb.as_mut_slice(),
            self.pos_head.as_mut_slice(),
            self.pos_tail.as_mut_slice(),
            self.conv_w.as_mut_slice(),
            &mut self.conv_b,
            self.out_w.as_mut_slice(),
            &mut self.out_b,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, _, v)| v.iter().all(|x| x.is_finite()))
    }
}

/// A sentence mapped to word ids and position-table rows, with one `PAD` on each end.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedSentence {
    pub words: Vec<usize>,
    pub head_pos: Vec<usize>,
    pub tail_pos: Vec<usize>,
}

impl EncodedSentence {
    pub fn new(sentence: &Sentence, vocab: &Vocab, max_rel: usize) -> Self {
        let n = sentence.tokens.len() as i64;
        let mut words = Vec::with_capacity(n as usize + 2);
        words.push(PAD_ID);
        words.extend(sentence.tokens.iter().map(|t| vocab.id(t)));
        words.push(PAD_ID);
        // Padded rows sit at token positions -1 and n.
        let offsets = |anchor: usize| -> Vec<usize> {
            (-1..=n)
                .map(|i| position_index(i - anchor as i64, max_rel))
                .collect()
        };
        EncodedSentence {
            words,
            head_pos: offsets(sentence.head_index),
            tail_pos: offsets(sentence.tail_index),
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Number of convolution windows.
    pub fn windows(&self) -> usize {
        self.words.len().saturating_sub(WINDOW - 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mode {
    Eval,
    /// Inverted dropout on the sentence representation.
    Train { keep: f64 },
}

#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub input: Matrix,
    /// `windows × filters`, before pooling.
    pub conv: Matrix,
    /// Winning window per filter.
    pub argmax: Vec<usize>,
    /// Max-pooled features `L`.
    pub pooled: Vec<f64>,
    /// `tanh(L)`: the sentence representation.
    pub hidden: Vec<f64>,
    /// Per-unit dropout multiplier (0 or 1/keep) in train mode.
    pub mask: Option<Vec<f64>>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl ForwardTrace {
    /// Hidden vector after dropout, as fed to the output layer.
    fn output_input(&self) -> Vec<f64> {
        match &self.mask {
            Some(m) => self.hidden.iter().zip(m).map(|(h, m)| h * m).collect(),
            None => self.hidden.clone(),
        }
    }
}

fn check_input(input: &EncodedSentence, shape: &CnnShape) -> Result<()> {
    if input.head_pos.len() != input.len() || input.tail_pos.len() != input.len() {
        return Err(Error::Shape("position features do not cover every token".into()));
    }
    if let Some(w) = input.words.iter().find(|w| **w >= shape.vocab_size) {
        return Err(Error::Validation(format!(
            "word id {w} outside vocabulary of {}",
            shape.vocab_size
        )));
    }
    let p = shape.positions();
    if input.head_pos.iter().chain(&input.tail_pos).any(|i| *i >= p) {
        return Err(Error::Validation("position index outside table".into()));
    }
    Ok(())
}

/// Row `i` is `[word_emb(w_i) ‖ pos_head(i) ‖ pos_tail(i)]`.
pub fn embed_input(input: &EncodedSentence, params: &CnnParams) -> Result<Matrix> {
    check_input(input, &params.shape)?;
    let s = &params.shape;
    let mut m = Matrix::zeros(input.len(), s.token_dim());
    for i in 0..input.len() {
        let row = m.row_mut(i);
        row[..s.word_dim].copy_from_slice(params.word_emb.row(input.words[i]));
        row[s.word_dim..s.word_dim + s.pos_dim].copy_from_slice(params.pos_head.row(input.head_pos[i]));
        row[s.word_dim + s.pos_dim..].copy_from_slice(params.pos_tail.row(input.tail_pos[i]));
    }
    Ok(m)
}

fn convolve(x: &Matrix, params: &CnnParams) -> Result<Matrix> {
    if x.rows() < WINDOW {
        return Err(Error::Validation(format!(
            "sentence of {} rows is shorter than the convolution window",
            x.rows()
        )));
    }
    let windows = x.rows() - WINDOW + 1;
    let f = params.shape.filters;
    let mut conv = Matrix::zeros(windows, f);
    let mut w = 0;
    while w + 1 < windows {
        let (p0, p1) = (x.rows_slice(w, WINDOW), x.rows_slice(w + 1, WINDOW));
        for j in 0..f {
            let (a, b) = dot2(params.conv_w.row(j), p0, p1);
            conv.set(w, j, a + params.conv_b[j]);
            conv.set(w + 1, j, b + params.conv_b[j]);
        }
        w += 2;
    }
    if w < windows {
        let patch = x.rows_slice(w, WINDOW);
        for j in 0..f {
            conv.set(w, j, dot(params.conv_w.row(j), patch) + params.conv_b[j]);
        }
    }
    Ok(conv)
}

fn max_pool(conv: &Matrix) -> (Vec<f64>, Vec<usize>) {
    let f = conv.cols();
    let mut pooled = conv.row(0).to_vec();
    let mut argmax = vec![0; f];
    for w in 1..conv.rows() {
        for (j, v) in conv.row(w).iter().enumerate() {
            if *v > pooled[j] {
                pooled[j] = *v;
                argmax[j] = w;
            }
        }
    }
    (pooled, argmax)
}

fn output_layer(hidden: &[f64], params: &CnnParams) -> Vec<f64> {
    (0..params.shape.n_relations)
        .map(|r| dot(params.out_w.row(r), hidden) + params.out_b[r])
        .collect()
}

/// Full forward pass, keeping every activation needed for backprop.
pub fn encode<R: Rng>(
    input: &EncodedSentence,
    params: &CnnParams,
    mode: Mode,
    rng: &mut R,
) -> Result<ForwardTrace> {
    let x = embed_input(input, params)?;
    let conv = convolve(&x, params)?;
    let (pooled, argmax) = max_pool(&conv);
    let hidden: Vec<f64> = pooled.iter().map(|v| v.tanh()).collect();
    let mask = match mode {
        Mode::Eval => None,
        Mode::Train { keep } => Some(
            (0..hidden.len())
                .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                .collect::<Vec<_>>(),
        ),
    };
    let mut trace = ForwardTrace {
        input: x,
        conv,
        argmax,
        pooled,
        hidden,
        mask,
        logits: Vec::new(),
        probs: Vec::new(),
    };
    trace.logits = output_layer(&trace.output_input(), params);
    trace.probs = softmax(&trace.logits);
    Ok(trace)
}

/// Eval-mode sentence representation `tanh(L)` and log-probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct SentenceView {
    pub hidden: Vec<f64>,
    pub log_probs: Vec<f64>,
}

pub fn view(input: &EncodedSentence, params: &CnnParams) -> Result<SentenceView> {
    let x = embed_input(input, params)?;
    let conv = convolve(&x, params)?;
    let (pooled, _) = max_pool(&conv);
    let hidden: Vec<f64> = pooled.iter().map(|v| v.tanh()).collect();
    let log_probs = log_softmax(&output_layer(&hidden, params));
    Ok(SentenceView { hidden, log_probs })
}

/// [`view`] over many sentences on the worker pool; output order matches input.
pub fn view_all(inputs: &[EncodedSentence], params: &CnnParams) -> Result<Vec<SentenceView>> {
    inputs.par_iter().map(|x| view(x, params)).collect()
}

/// Relation distribution in eval mode.
pub fn predict(input: &EncodedSentence, params: &CnnParams) -> Result<Vec<f64>> {
    let v = view(input, params)?;
    Ok(v.log_probs.iter().map(|l| l.exp()).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct CnnGrads {
    /// Only rows touched by the batch.
    pub word_emb: BTreeMap<usize, Vec<f64>>,
    pub pos_head: Matrix,
    pub pos_tail: Matrix,
    pub conv_w: Matrix,
    pub conv_b: Vec<f64>,
    pub out_w: Matrix,
    pub out_b: Vec<f64>,
}

impl CnnGrads {
    pub fn zeros(shape: CnnShape) -> Self {
        let z = CnnParams::zeros(shape);
        CnnGrads {
            word_emb: BTreeMap::new(),
            pos_head: z.pos_head,
            pos_tail: z.pos_tail,
            conv_w: z.conv_w,
            conv_b: z.conv_b,
            out_w: z.out_w,
            out_b: z.out_b,
        }
    }

    fn add(&mut self, other: &CnnGrads) {
        for (row, g) in &other.word_emb {
            match self.word_emb.get_mut(row) {
                Some(acc) => axpy(1.0, g, acc),
                None => {
                    self.word_emb.insert(*row, g.clone());
                }
            }
        }
        axpy(1.0, other.pos_head.as_slice(), self.pos_head.as_mut_slice());
        axpy(1.0, other.pos_tail.as_slice(), self.pos_tail.as_mut_slice());
        axpy(1.0, other.conv_w.as_slice(), self.conv_w.as_mut_slice());
        axpy(1.0, &other.conv_b, &mut self.conv_b);
        axpy(1.0, other.out_w.as_slice(), self.out_w.as_mut_slice());
        axpy(1.0, &other.out_b, &mut self.out_b);
    }

    /// Dense copy of the word-embedding gradient.
    pub fn dense_word_emb(&self, vocab_size: usize, word_dim: usize) -> Matrix {
        let mut m = Matrix::zeros(vocab_size, word_dim);
        for (row, g) in &self.word_emb {
            m.row_mut(*row).copy_from_slice(g);
        }
        m
    }
}

/// Adds `scale · ∂(−log p(label))/∂θ` for one traced sentence.
fn backward(
    input: &EncodedSentence,
    trace: &ForwardTrace,
    label: usize,
    scale: f64,
    params: &CnnParams,
    grads: &mut CnnGrads,
) {
    let s = &params.shape;
    let f = s.filters;
    let d = s.token_dim();

    let mut dlogits = trace.probs.clone();
    dlogits[label] -= 1.0;
    for v in &mut dlogits {
        *v *= scale;
    }

    let fed = trace.output_input();
    let mut dfed = vec![0.0; f];
    for (r, g) in dlogits.iter().enumerate() {
        axpy(*g, &fed, grads.out_w.row_mut(r));
        grads.out_b[r] += g;
        axpy(*g, params.out_w.row(r), &mut dfed);
    }

    // Through dropout and tanh.
    let dpooled: Vec<f64> = (0..f)
        .map(|j| {
            let m = trace.mask.as_ref().map_or(1.0, |m| m[j]);
            dfed[j] * m * (1.0 - trace.hidden[j] * trace.hidden[j])
        })
        .collect();

    // Max pooling routes each filter's gradient to its winning window.
    let mut dx = Matrix::zeros(trace.input.rows(), d);
    for (j, &g) in dpooled.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let w = trace.argmax[j];
        grads.conv_b[j] += g;
        axpy(g, trace.input.rows_slice(w, WINDOW), grads.conv_w.row_mut(j));
        let start = w * d;
        let dpatch = &mut dx.as_mut_slice()[start..start + WINDOW * d];
        axpy(g, params.conv_w.row(j), dpatch);
    }

    for i in 0..input.len() {
        let row = dx.row(i);
        let word = grads
            .word_emb
            .entry(input.words[i])
            .or_insert_with(|| vec![0.0; s.word_dim]);
        axpy(1.0, &row[..s.word_dim], word);
        axpy(1.0, &row[s.word_dim..s.word_dim + s.pos_dim], grads.pos_head.row_mut(input.head_pos[i]));
        axpy(1.0, &row[s.word_dim + s.pos_dim..], grads.pos_tail.row_mut(input.tail_pos[i]));
    }
}

/// Mean cross-entropy `−(1/|batch|) Σ log p(rᵢ|xᵢ)` and its gradient.
///
/// With `keep = Some(p)` each sentence gets its own dropout mask, seeded from
/// `rng` in batch order. Work is split into fixed-size chunks evaluated on
/// the worker pool and summed in chunk order, so results are identical for
/// any thread count.
pub fn loss_and_grads(
    batch: &[(&EncodedSentence, usize)],
    params: &CnnParams,
    keep: Option<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, CnnGrads)> {
    if batch.is_empty() {
        return Err(Error::Empty("empty training batch"));
    }
    let seeds: Vec<u64> = match keep {
        Some(_) => batch.iter().map(|_| rng.gen()).collect(),
        None => vec![0; batch.len()],
    };
    let scale = 1.0 / batch.len() as f64;
    let indices: Vec<usize> = (0..batch.len()).collect();
    let partials: Vec<Result<(f64, CnnGrads)>> = indices
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut grads = CnnGrads::zeros(params.shape);
            let mut loss = 0.0;
            for &i in chunk {
                let (input, label) = batch[i];
                if label >= params.shape.n_relations {
                    return Err(Error::Validation(format!("label {label} out of range")));
                }
                let mut local = ChaCha8Rng::seed_from_u64(seeds[i]);
                let mode = match keep {
                    Some(keep) => Mode::Train { keep },
                    None => Mode::Eval,
                };
                let trace = encode(input, params, mode, &mut local)?;
                loss -= log_softmax(&trace.logits)[label];
                backward(input, &trace, label, scale, params, &mut grads);
            }
            Ok((loss, grads))
        })
        .collect();

    let mut total = 0.0;
    let mut grads = CnnGrads::zeros(params.shape);
    for part in partials {
        let (l, g) = part?;
        total += l;
        grads.add(&g);
    }
    Ok((total * scale, grads))
}

/// `θ ← θ − lr · g` for every tensor.
pub fn sgd_step(params: &mut CnnParams, grads: &CnnGrads, lr: f64) -> Result<()> {
    let s = params.shape;
    let same = grads.pos_head.shape() == params.pos_head.shape()
        && grads.pos_tail.shape() == params.pos_tail.shape()
        && grads.conv_w.shape() == params.conv_w.shape()
        && grads.conv_b.len() == params.conv_b.len()
        && grads.out_w.shape() == params.out_w.shape()
        && grads.out_b.len() == params.out_b.len()
        && grads
            .word_emb
            .iter()
            .all(|(r, g)| *r < s.vocab_size && g.len() == s.word_dim);
    if !same {
        return Err(Error::Shape("gradient does not match parameter shapes".into()));
    }
    for (row, g) in &grads.word_emb {
        axpy(-lr, g, params.word_emb.row_mut(*row));
    }
    axpy(-lr, grads.pos_head.as_slice(), params.pos_head.as_mut_slice());
    axpy(-lr, grads.pos_tail.as_slice(), params.pos_tail.as_mut_slice());
    axpy(-lr, grads.conv_w.as_slice(), params.conv_w.as_mut_slice());
    axpy(-lr, &grads.conv_b, &mut params.conv_b);
    axpy(-lr, grads.out_w.as_slice(), params.out_w.as_mut_slice());
    axpy(-lr, &grads.out_b, &mut params.out_b);
    Ok(())
}
