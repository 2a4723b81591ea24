//! Offline search over a bundled document list, ranked by query-term
//! overlap.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::intent::relevance::words;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchHit {
    pub title: String,
    pub url: String,
    pub snippet: String,
}

/// Results asset body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchResults {
    pub query: String,
    pub hits: Vec<SearchHit>,
}

pub const DEFAULT_RESULT_COUNT: usize = 5;

const STOP_WORDS: [&str; 12] = ["a", "an", "the", "for", "of", "to", "and", "in", "on", "how", "do", "i"];

/// Strips one common English suffix so `soldering` matches `solder`.
fn stem(word: &str) -> String {
    for suffix in ["ing", "ed", "es", "s"] {
        if let Some(root) = word.strip_suffix(suffix) {
            if root.chars().count() >= 4 {
                return root.to_string();
            }
        }
    }
    word.to_string()
}

fn terms(text: &str) -> BTreeSet<String> {
    words(text)
        .into_iter()
        .filter(|w| !STOP_WORDS.contains(&w.as_str()))
        .map(|w| stem(&w))
        .collect()
}

#[derive(Debug, Clone)]
pub struct Corpus {
    docs: Vec<(SearchHit, BTreeSet<String>)>,
}

impl Corpus {
    pub fn new(hits: Vec<SearchHit>) -> Self {
        let docs = hits
            .into_iter()
            .map(|h| {
                let t = terms(&format!("{} {}", h.title, h.snippet));
                (h, t)
            })
            .collect();
        Self { docs }
    }

    pub fn bundled() -> Self {
        let hits: Vec<SearchHit> =
            serde_json::from_str(include_str!("../fixtures/search_corpus.json")).expect("bundled corpus parses");
        Self::new(hits)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// Top `k` documents sharing at least one term with the query, by
    /// number of shared terms, ties broken by corpus order.
    pub fn search(&self, query: &str, k: usize) -> Vec<SearchHit> {
        let q = terms(query);
        let mut scored: Vec<(usize, usize)> = self
            .docs
            .iter()
            .enumerate()
            .map(|(i, (_, t))| (q.intersection(t).count(), i))
            .filter(|&(s, _)| s > 0)
            .collect();
        scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        scored.into_iter().take(k).map(|(_, i)| self.docs[i].0.clone()).collect()
    }
}
