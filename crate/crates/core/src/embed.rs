//! Paragraph-vector (distributed memory) document embeddings.
//!
//! For a document `d` and a target position `t` with window context `C`:
//!
//! ```text
//! h    = (D[d] + Σ_{c∈C} T[c]) / (1 + |C|)
//! loss = −log σ(u_t·h + b_t) − Σ_{n∈neg} log σ(−(u_n·h + b_n))
//! ```
//!
//! `u`/`b` are the per-token output weights and bias. Negatives are drawn
//! from the unigram distribution raised to 0.75. Plain SGD with a learning
//! rate decayed linearly from `learning_rate` to `min_learning_rate`
//! updates D, T, u and b.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textprep::Descriptor;

const MAGIC: &[u8; 4] = b"PVDM";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("no token reaches min_count {0}")]
    AllTokensFiltered(u32),
    #[error("invalid training config: {0}")]
    InvalidConfig(&'static str),
    #[error("document tag {0} appears more than once")]
    DuplicateTag(u32),
    #[error("descriptor for `{0}` has no tag")]
    MissingTag(String),
    #[error("unknown document tag {0}")]
    UnknownTag(u32),
    #[error("no document has an in-vocabulary token")]
    NoTrainableDocuments,
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub dim: usize,
    pub epochs: u32,
    pub min_count: u32,
    /// Context half-width.
    pub window: usize,
    pub negative_samples: usize,
    pub learning_rate: f64,
    pub min_learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            dim: 50,
            epochs: 40,
            min_count: 2,
            window: 2,
            negative_samples: 5,
            learning_rate: 0.025,
            min_learning_rate: 0.0001,
            seed: 42,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.dim == 0 {
            return Err(EmbedError::InvalidConfig("dim must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(EmbedError::InvalidConfig("epochs must be at least 1"));
        }
        if self.min_count == 0 {
            return Err(EmbedError::InvalidConfig("min_count must be at least 1"));
        }
        if self.window == 0 {
            return Err(EmbedError::InvalidConfig("window must be at least 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0)
            || !(self.min_learning_rate.is_finite() && self.min_learning_rate >= 0.0)
        {
            return Err(EmbedError::InvalidConfig("learning rates must be finite and positive"));
        }
        Ok(())
    }
}

/// Token table ordered by frequency (descending), then token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmbedVocab {
    tokens: Vec<String>,
    freqs: Vec<u64>,
    index: HashMap<String, usize>,
}

impl EmbedVocab {
    fn from_entries(entries: Vec<(String, u64)>) -> Self {
        let index = entries.iter().enumerate().map(|(i, (t, _))| (t.clone(), i)).collect();
        let (tokens, freqs) = entries.into_iter().unzip();
        EmbedVocab { tokens, freqs, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn freq(&self, token: &str) -> Option<u64> {
        self.index.get(token).map(|&i| self.freqs[i])
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }
}

pub fn build_embedding_vocab(docs: &[Descriptor], min_count: u32) -> Result<EmbedVocab, EmbedError> {
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    for d in docs {
        for t in &d.tokens {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(EmbedError::EmptyCorpus);
    }
    let mut entries: Vec<(String, u64)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_count as u64)
        .map(|(t, c)| (t.to_string(), c))
        .collect();
    if entries.is_empty() {
        return Err(EmbedError::AllTokensFiltered(min_count));
    }
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(EmbedVocab::from_entries(entries))
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `−log σ(x)`, stable for large |x|.
#[inline]
fn neg_log_sigmoid(x: f64) -> f64 {
    if x > 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One output unit: weight row and bias.
#[derive(Debug, Clone, Copy)]
pub struct OutputUnit<'a> {
    pub weights: &'a [f64],
    pub bias: f64,
}

/// Loss of one prediction from combined context `h`, the gradient with
/// respect to `h`, and the scalar coefficient `g` of every output unit
/// (target first), so that `∂loss/∂u = g·h` and `∂loss/∂b = g`.
pub fn ns_objective(h: &[f64], target: OutputUnit<'_>, negatives: &[OutputUnit<'_>]) -> (f64, Vec<f64>, Vec<f64>) {
    let mut grad_h = vec![0.0; h.len()];
    let mut coeffs = Vec::with_capacity(1 + negatives.len());
    let s = dot(&target.weights[..h.len()], h) + target.bias;
    let mut loss = neg_log_sigmoid(s);
    let g = sigmoid(s) - 1.0;
    coeffs.push(g);
    for (gh, u) in grad_h.iter_mut().zip(target.weights) {
        *gh += g * u;
    }
    for n in negatives {
        let s = dot(&n.weights[..h.len()], h) + n.bias;
        loss += neg_log_sigmoid(-s);
        let g = sigmoid(s);
        coeffs.push(g);
        for (gh, u) in grad_h.iter_mut().zip(n.weights) {
            *gh += g * u;
        }
    }
    (loss, grad_h, coeffs)
}

/// `(doc + Σ ctx) / (1 + |ctx|)`.
pub fn combine_context(doc: &[f64], ctx: &[&[f64]]) -> Vec<f64> {
    let mut h = doc.to_vec();
    for c in ctx {
        for (a, b) in h.iter_mut().zip(c.iter()) {
            *a += b;
        }
    }
    let scale = 1.0 / (1 + ctx.len()) as f64;
    h.iter_mut().for_each(|x| *x *= scale);
    h
}

/// Loss and its gradient with respect to the document vector.
pub fn doc_loss_and_grad(
    doc: &[f64],
    ctx: &[&[f64]],
    target: OutputUnit<'_>,
    negatives: &[OutputUnit<'_>],
) -> (f64, Vec<f64>) {
    let h = combine_context(doc, ctx);
    let (loss, grad_h, _) = ns_objective(&h, target, negatives);
    let scale = 1.0 / (1 + ctx.len()) as f64;
    (loss, grad_h.into_iter().map(|g| g * scale).collect())
}

/// Cumulative unigram^0.75 distribution for negative draws.
struct NegativeTable {
    cumulative: Vec<f64>,
}

impl NegativeTable {
    fn new(freqs: &[u64]) -> Self {
        let mut acc = 0.0;
        let cumulative = freqs
            .iter()
            .map(|&f| {
                acc += (f as f64).powf(0.75);
                acc
            })
            .collect();
        NegativeTable { cumulative }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> usize {
        let total = *self.cumulative.last().expect("vocab is nonempty");
        let x = rng.random::<f64>() * total;
        self.cumulative.partition_point(|&c| c <= x).min(self.cumulative.len() - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedDocument {
    pub tag: u32,
    pub product_ref: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    /// Mean loss per prediction for each epoch.
    pub epoch_losses: Vec<f64>,
    /// Documents left without in-vocabulary tokens; they get no vector.
    pub skipped: Vec<SkippedDocument>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    config: TrainingConfig,
    vocab: EmbedVocab,
    doc_tags: Vec<u32>,
    doc_refs: Vec<String>,
    tag_index: HashMap<u32, usize>,
    ref_index: HashMap<String, usize>,
    doc_matrix: Vec<f32>,
    token_matrix: Vec<f32>,
    out_weights: Vec<f32>,
    out_bias: Vec<f32>,
}

fn uniform_init(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<f64> {
    let half = 0.5 / dim as f64;
    (0..n).map(|_| rng.random_range(-half..half)).collect()
}

fn doc_seed(seed: u64, tag: u32) -> u64 {
    seed ^ (tag as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Trains on tagged descriptors. Document vectors are initialised from a
/// seed derived from the tag, so a document's start point does not depend
/// on corpus order.
pub fn train(docs: &[Descriptor], config: &TrainingConfig) -> Result<(EmbeddingModel, TrainingReport), EmbedError> {
    config.validate()?;
    let vocab = build_embedding_vocab(docs, config.min_count)?;
    let dim = config.dim;

    let mut tag_index = HashMap::new();
    let mut doc_tags = Vec::new();
    let mut doc_refs = Vec::new();
    let mut encoded: Vec<Vec<usize>> = Vec::new();
    let mut skipped = Vec::new();
    for d in docs {
        let tag = d.tag.ok_or_else(|| EmbedError::MissingTag(d.product_ref.clone()))?;
        if tag_index.contains_key(&tag) || skipped.iter().any(|s: &SkippedDocument| s.tag == tag) {
            return Err(EmbedError::DuplicateTag(tag));
        }
        let ids: Vec<usize> = d.tokens.iter().filter_map(|t| vocab.id(t)).collect();
        if ids.is_empty() {
            skipped.push(SkippedDocument {
                tag,
                product_ref: d.product_ref.clone(),
            });
            continue;
        }
        tag_index.insert(tag, doc_tags.len());
        doc_tags.push(tag);
        doc_refs.push(d.product_ref.clone());
        encoded.push(ids);
    }
    if encoded.is_empty() {
        return Err(EmbedError::NoTrainableDocuments);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut tokens = uniform_init(&mut rng, vocab.len() * dim, dim);
    let mut docs_m = Vec::with_capacity(encoded.len() * dim);
    for &tag in &doc_tags {
        let mut r = ChaCha8Rng::seed_from_u64(doc_seed(config.seed, tag));
        docs_m.extend(uniform_init(&mut r, dim, dim));
    }
    let mut out_w = vec![0.0f64; vocab.len() * dim];
    let mut out_b = vec![0.0f64; vocab.len()];
    let table = NegativeTable::new(&vocab.freqs);

    let total_steps = (config.epochs as usize * encoded.len()) as f64;
    let mut step = 0usize;
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs as usize);
    let mut negs = Vec::with_capacity(config.negative_samples);

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut n_pred) = (0.0, 0usize);
        for &di in &order {
            let lr = config.learning_rate
                - (config.learning_rate - config.min_learning_rate) * (step as f64 / total_steps);
            step += 1;
            let ids = &encoded[di];
            for (pos, &target) in ids.iter().enumerate() {
                let lo = pos.saturating_sub(config.window);
                let hi = (pos + config.window + 1).min(ids.len());
                let ctx: Vec<usize> = (lo..hi).filter(|&j| j != pos).map(|j| ids[j]).collect();

                let doc = &docs_m[di * dim..(di + 1) * dim];
                let ctx_rows: Vec<&[f64]> = ctx.iter().map(|&c| &tokens[c * dim..(c + 1) * dim]).collect();
                let h = combine_context(doc, &ctx_rows);

                negs.clear();
                for _ in 0..config.negative_samples {
                    let n = table.draw(&mut rng);
                    if n != target {
                        negs.push(n);
                    }
                }
                let units: Vec<OutputUnit> = std::iter::once(target)
                    .chain(negs.iter().copied())
                    .map(|o| OutputUnit {
                        weights: &out_w[o * dim..(o + 1) * dim],
                        bias: out_b[o],
                    })
                    .collect();
                let (loss, grad_h, coeffs) = ns_objective(&h, units[0], &units[1..]);
                loss_sum += loss;
                n_pred += 1;

                for (o, g) in std::iter::once(target).chain(negs.iter().copied()).zip(coeffs) {
                    for (w, x) in out_w[o * dim..(o + 1) * dim].iter_mut().zip(&h) {
                        *w -= lr * g * x;
                    }
                    out_b[o] -= lr * g;
                }
                let scale = lr / (1 + ctx.len()) as f64;
                for (v, g) in docs_m[di * dim..(di + 1) * dim].iter_mut().zip(&grad_h) {
                    *v -= scale * g;
                }
                for &c in &ctx {
                    for (v, g) in tokens[c * dim..(c + 1) * dim].iter_mut().zip(&grad_h) {
                        *v -= scale * g;
                    }
                }
            }
        }
        epoch_losses.push(if n_pred == 0 { 0.0 } else { loss_sum / n_pred as f64 });
    }

    let to_f32 = |v: Vec<f64>| v.into_iter().map(|x| x as f32).collect::<Vec<f32>>();
    let model = EmbeddingModel {
        config: config.clone(),
        vocab,
        ref_index: ref_index(&doc_refs),
        doc_tags,
        doc_refs,
        tag_index,
        doc_matrix: to_f32(docs_m),
        token_matrix: to_f32(tokens),
        out_weights: to_f32(out_w),
        out_bias: to_f32(out_b),
    };
    Ok((model, TrainingReport { epoch_losses, skipped }))
}

impl EmbeddingModel {
    pub fn config(&self) -> &TrainingConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn vocab(&self) -> &EmbedVocab {
        &self.vocab
    }

    pub fn n_docs(&self) -> usize {
        self.doc_tags.len()
    }

    pub fn tags(&self) -> &[u32] {
        &self.doc_tags
    }

    /// `(tag, product_ref)` for each trained document.
    pub fn documents(&self) -> impl Iterator<Item = (u32, &str)> {
        self.doc_tags.iter().copied().zip(self.doc_refs.iter().map(String::as_str))
    }

    pub fn doc_vector(&self, tag: u32) -> Result<&[f32], EmbedError> {
        let i = *self.tag_index.get(&tag).ok_or(EmbedError::UnknownTag(tag))?;
        Ok(&self.doc_matrix[i * self.dim()..(i + 1) * self.dim()])
    }

    /// Vector of the first document trained for `product_ref`.
    pub fn doc_vector_by_ref(&self, product_ref: &str) -> Option<&[f32]> {
        let i = *self.ref_index.get(product_ref)?;
        Some(&self.doc_matrix[i * self.dim()..(i + 1) * self.dim()])
    }

    pub fn token_vector(&self, token: &str) -> Option<&[f32]> {
        let i = self.vocab.id(token)?;
        Some(&self.token_matrix[i * self.dim()..(i + 1) * self.dim()])
    }

    pub fn all_finite(&self) -> bool {
        [&self.doc_matrix, &self.token_matrix, &self.out_weights, &self.out_bias]
            .iter()
            .all(|m| m.iter().all(|x| x.is_finite()))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), EmbedError> {
        let c = &self.config;
        w.write_all(MAGIC)?;
        for v in [
            FORMAT_VERSION,
            c.dim as u32,
            self.vocab.len() as u32,
            self.doc_tags.len() as u32,
            c.epochs,
            c.min_count,
            c.window as u32,
            c.negative_samples as u32,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&c.learning_rate.to_le_bytes())?;
        w.write_all(&c.min_learning_rate.to_le_bytes())?;
        w.write_all(&c.seed.to_le_bytes())?;
        for (t, f) in self.vocab.tokens.iter().zip(&self.vocab.freqs) {
            write_str(&mut w, t)?;
            w.write_all(&f.to_le_bytes())?;
        }
        for (tag, r) in self.doc_tags.iter().zip(&self.doc_refs) {
            w.write_all(&tag.to_le_bytes())?;
            write_str(&mut w, r)?;
        }
        for m in [&self.doc_matrix, &self.token_matrix, &self.out_weights, &self.out_bias] {
            for x in m.iter() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, EmbedError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(EmbedError::Format("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(EmbedError::Format(format!("unsupported version {version}")));
        }
        let dim = read_u32(&mut r)? as usize;
        let n_vocab = read_u32(&mut r)? as usize;
        let n_docs = read_u32(&mut r)? as usize;
        let config = TrainingConfig {
            dim,
            epochs: read_u32(&mut r)?,
            min_count: read_u32(&mut r)?,
            window: read_u32(&mut r)? as usize,
            negative_samples: read_u32(&mut r)? as usize,
            learning_rate: f64::from_le_bytes(read_array(&mut r)?),
            min_learning_rate: f64::from_le_bytes(read_array(&mut r)?),
            seed: u64::from_le_bytes(read_array(&mut r)?),
        };
        let mut entries = Vec::with_capacity(n_vocab);
        for _ in 0..n_vocab {
            let t = read_str(&mut r)?;
            entries.push((t, u64::from_le_bytes(read_array(&mut r)?)));
        }
        let mut doc_tags = Vec::with_capacity(n_docs);
        let mut doc_refs = Vec::with_capacity(n_docs);
        let mut tag_index = HashMap::with_capacity(n_docs);
        for i in 0..n_docs {
            let tag = read_u32(&mut r)?;
            if tag_index.insert(tag, i).is_some() {
                return Err(EmbedError::DuplicateTag(tag));
            }
            doc_tags.push(tag);
            doc_refs.push(read_str(&mut r)?);
        }
        let mut read_f32s = |n: usize| -> Result<Vec<f32>, EmbedError> {
            (0..n).map(|_| Ok(f32::from_le_bytes(read_array(&mut r)?))).collect()
        };
        let doc_matrix = read_f32s(n_docs * dim)?;
        let token_matrix = read_f32s(n_vocab * dim)?;
        let out_weights = read_f32s(n_vocab * dim)?;
        let out_bias = read_f32s(n_vocab)?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(EmbedError::Format("trailing bytes".into()));
        }
        Ok(EmbeddingModel {
            config,
            vocab: EmbedVocab::from_entries(entries),
            ref_index: ref_index(&doc_refs),
            doc_tags,
            doc_refs,
            tag_index,
            doc_matrix,
            token_matrix,
            out_weights,
            out_bias,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EmbedError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EmbedError> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn ref_index(refs: &[String]) -> HashMap<String, usize> {
    let mut index = HashMap::with_capacity(refs.len());
    for (i, r) in refs.iter().enumerate() {
        index.entry(r.clone()).or_insert(i);
    }
    index
}

fn write_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn read_array<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N], EmbedError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, EmbedError> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_str<R: Read>(r: &mut R) -> Result<String, EmbedError> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| EmbedError::Format("token is not utf-8".into()))
}
