//! Token normalization and set-overlap scoring shared by the router, the
//! surrogates and the idea taxonomy.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

const STOPWORDS_TXT: &str = include_str!("../data/stopwords.txt");

/// The shipped stopword list, apostrophes removed.
pub fn stopwords() -> &'static BTreeSet<String> {
    static SET: OnceLock<BTreeSet<String>> = OnceLock::new();
    SET.get_or_init(|| parse_list(STOPWORDS_TXT).map(str::to_owned).collect())
}

/// Non-empty, non-comment lines of a shipped data file.
pub(crate) fn parse_list(src: &str) -> impl Iterator<Item = &str> {
    src.lines()
        .map(str::trim_end)
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
}

/// Lowercase, strip punctuation, split on whitespace and drop stopwords.
///
/// Apostrophes are removed in place (`won't` -> `wont`); every other
/// non-alphanumeric character separates tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut cleaned = String::with_capacity(text.len());
    for ch in text.chars() {
        if ch == '\'' || ch == '\u{2019}' {
            continue;
        }
        if ch.is_alphanumeric() {
            cleaned.extend(ch.to_lowercase());
        } else {
            cleaned.push(' ');
        }
    }
    let stop = stopwords();
    cleaned
        .split_whitespace()
        .filter(|t| !stop.contains(*t))
        .map(str::to_owned)
        .collect()
}

/// Distinct content tokens of `text`.
pub fn token_set(text: &str) -> BTreeSet<String> {
    tokenize(text).into_iter().collect()
}

/// Token multiset.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenBag {
    counts: BTreeMap<String, u32>,
}

impl TokenBag {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_text(text: &str) -> Self {
        let mut bag = Self::new();
        bag.extend(tokenize(text));
        bag
    }

    pub fn add(&mut self, token: impl Into<String>) {
        *self.counts.entry(token.into()).or_insert(0) += 1;
    }

    /// Removes one occurrence of `token`; returns false if absent.
    pub fn remove(&mut self, token: &str) -> bool {
        match self.counts.get_mut(token) {
            Some(c) if *c > 1 => {
                *c -= 1;
                true
            }
            Some(_) => {
                self.counts.remove(token);
                true
            }
            None => false,
        }
    }

    pub fn count(&self, token: &str) -> u32 {
        self.counts.get(token).copied().unwrap_or(0)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.counts.contains_key(token)
    }

    /// Total number of tokens, counting repeats.
    pub fn len(&self) -> usize {
        self.counts.values().map(|&c| c as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn distinct(&self) -> impl Iterator<Item = &str> {
        self.counts.keys().map(String::as_str)
    }

    pub fn to_set(&self) -> BTreeSet<String> {
        self.counts.keys().cloned().collect()
    }
}

impl Extend<String> for TokenBag {
    fn extend<I: IntoIterator<Item = String>>(&mut self, iter: I) {
        for t in iter {
            self.add(t);
        }
    }
}

impl FromIterator<String> for TokenBag {
    fn from_iter<I: IntoIterator<Item = String>>(iter: I) -> Self {
        let mut bag = Self::new();
        bag.extend(iter);
        bag
    }
}

/// |a ∩ b| / |a ∪ b|. Two empty sets score 1.
pub fn jaccard<'a, A, B>(a: A, b: B) -> f64
where
    A: IntoIterator<Item = &'a str>,
    B: IntoIterator<Item = &'a str>,
{
    let a: BTreeSet<&str> = a.into_iter().collect();
    let b: BTreeSet<&str> = b.into_iter().collect();
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(&b).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// Jaccard over two sorted sets without re-collecting.
pub fn jaccard_sets(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// Number of distinct tokens two sets share.
pub fn shared_tokens(a: &BTreeSet<String>, b: &BTreeSet<String>) -> usize {
    a.intersection(b).count()
}
