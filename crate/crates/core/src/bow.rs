//! Vocabulary and binary product matrix for the bag-of-words recommenders.
//!
//! Rows are stored sparsely as sorted token ids; the L1 distance between two
//! binary rows is the size of the symmetric difference of their id sets.

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::textprep::Descriptor;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BowError {
    #[error("corpus contains no tokens")]
    EmptyCorpus,
    #[error("row {index} out of range ({rows} rows)")]
    RowOutOfRange { index: usize, rows: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in tokens {
            let t = t.into();
            if !vocab.index.contains_key(&t) {
                vocab.index.insert(t.clone(), vocab.tokens.len() as u32);
                vocab.tokens.push(t);
            }
        }
        vocab
    }
}

/// Union of all descriptor tokens in first-occurrence order.
pub fn build_vocabulary(descriptors: &[Descriptor]) -> Result<Vocabulary, BowError> {
    let vocab = Vocabulary::from_tokens(descriptors.iter().flat_map(|d| d.tokens.iter().cloned()));
    if vocab.is_empty() {
        return Err(BowError::EmptyCorpus);
    }
    Ok(vocab)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProductMatrix {
    n_cols: usize,
    rows: Vec<Vec<u32>>,
    eans: Vec<String>,
    row_index: HashMap<String, usize>,
}

impl ProductMatrix {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row_of(&self, ean: &str) -> Option<usize> {
        self.row_index.get(ean).copied()
    }

    pub fn ean(&self, row: usize) -> Option<&str> {
        self.eans.get(row).map(String::as_str)
    }

    /// Sorted ids of the 1-cells of a row.
    pub fn row_ids(&self, row: usize) -> Result<&[u32], BowError> {
        self.rows.get(row).map(Vec::as_slice).ok_or(BowError::RowOutOfRange {
            index: row,
            rows: self.rows.len(),
        })
    }

    pub fn cell(&self, row: usize, col: u32) -> Result<u8, BowError> {
        Ok(self.row_ids(row)?.binary_search(&col).is_ok() as u8)
    }

    /// Dense 0/1 view of a row.
    pub fn dense_row(&self, row: usize) -> Result<Vec<u8>, BowError> {
        let mut dense = vec![0u8; self.n_cols];
        for &id in self.row_ids(row)? {
            dense[id as usize] = 1;
        }
        Ok(dense)
    }

    /// `Σ_k |X[i,k] − X[j,k]|`.
    pub fn l1_distance(&self, i: usize, j: usize) -> Result<u32, BowError> {
        Ok(symmetric_difference_len(self.row_ids(i)?, self.row_ids(j)?))
    }

    /// Sparse text dump, one `ean: id,id,...` line per row.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (ean, row) in self.eans.iter().zip(&self.rows) {
            let ids: Vec<String> = row.iter().map(u32::to_string).collect();
            let _ = writeln!(out, "{}: {}", ean, ids.join(","));
        }
        out
    }
}

fn symmetric_difference_len(a: &[u32], b: &[u32]) -> u32 {
    let (mut i, mut j, mut common) = (0, 0, 0u32);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                common += 1;
                i += 1;
                j += 1;
            }
        }
    }
    a.len() as u32 + b.len() as u32 - 2 * common
}

/// Sorted in-vocabulary ids of a token list; unknown tokens are ignored.
pub fn encode(tokens: &[String], vocab: &Vocabulary) -> Vec<u32> {
    let mut ids: Vec<u32> = tokens.iter().filter_map(|t| vocab.id(t)).collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

/// `X[i,k] = 1` iff token `k` is in descriptor `i`.
pub fn vectorize(descriptors: &[Descriptor], vocab: &Vocabulary) -> ProductMatrix {
    let mut row_index = HashMap::with_capacity(descriptors.len());
    let mut rows = Vec::with_capacity(descriptors.len());
    let mut eans = Vec::with_capacity(descriptors.len());
    for (i, d) in descriptors.iter().enumerate() {
        row_index.entry(d.product_ref.clone()).or_insert(i);
        rows.push(encode(&d.tokens, vocab));
        eans.push(d.product_ref.clone());
    }
    ProductMatrix {
        n_cols: vocab.len(),
        rows,
        eans,
        row_index,
    }
}
