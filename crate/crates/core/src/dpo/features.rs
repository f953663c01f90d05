//! Hashed bag-of-tokens features for (context, response) pairs.
//!
//! Tokens are maximal runs of alphanumeric characters, lowercased. Each
//! distinct response token `r` sets feature `h("r" ␟ r)` and each distinct
//! (context token `c`, response token `r`) pair sets `h("x" ␟ c ␟ r)`, where
//! `h` is 64-bit FNV-1a over the UTF-8 bytes reduced modulo the dimension and
//! ␟ is the unit separator `0x1F`. Values are counts of hits per slot.

use std::collections::BTreeSet;
use std::hash::Hasher;

use serde::{Deserialize, Serialize};

pub const HASH_FUNCTION_ID: &str = "fnv1a64-mod-dim/tokens+cross/v1";

/// Sparse vector with strictly increasing indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseVec {
    entries: Vec<(u32, f64)>,
}

impl SparseVec {
    /// Sums duplicate indices.
    pub fn from_unsorted(mut raw: Vec<(u32, f64)>) -> Self {
        raw.sort_by_key(|(i, _)| *i);
        let mut entries: Vec<(u32, f64)> = Vec::with_capacity(raw.len());
        for (i, v) in raw {
            match entries.last_mut() {
                Some((j, acc)) if *j == i => *acc += v,
                _ => entries.push((i, v)),
            }
        }
        Self { entries }
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.entries
            .iter()
            .map(|&(i, v)| dense[i as usize] * v)
            .sum()
    }

    /// `dense += scale * self`
    pub fn add_scaled_to(&self, dense: &mut [f64], scale: f64) {
        for &(i, v) in &self.entries {
            dense[i as usize] += scale * v;
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Featurizer {
    dim: usize,
}

pub fn tokenize(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn fnv1a(parts: &[&str]) -> u64 {
    let mut h = fnv::FnvHasher::default();
    for (i, p) in parts.iter().enumerate() {
        if i > 0 {
            h.write(&[0x1f]);
        }
        h.write(p.as_bytes());
    }
    h.finish()
}

impl Featurizer {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "feature dimension must be positive");
        Self { dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn slot(&self, parts: &[&str]) -> u32 {
        (fnv1a(parts) % self.dim as u64) as u32
    }

    pub fn features(&self, context: &str, response: &str) -> SparseVec {
        let ctx = tokenize(context);
        let resp = tokenize(response);
        let mut raw = Vec::with_capacity(resp.len() * (ctx.len() + 1));
        for r in &resp {
            raw.push((self.slot(&["r", r]), 1.0));
            for c in &ctx {
                raw.push((self.slot(&["x", c, r]), 1.0));
            }
        }
        SparseVec::from_unsorted(raw)
    }
}
