//! Language grouping by complete-linkage agglomerative clustering.
//!
//! Merges always take the closest pair of clusters, where the distance
//! between clusters is the largest pairwise distance across them. Equal
//! distances are resolved by comparing the pair of smallest member codes
//! of the two clusters, so the result never depends on input order.

use std::collections::BTreeMap;
use std::str::FromStr;

use thiserror::Error;

use crate::model::LanguageCode;
use crate::scalar::Scalar;
use crate::sharing::LanguageGroups;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClusterError {
    #[error("distance matrix: {0}")]
    Malformed(String),
    #[error("group count {k} out of range 1..={n}")]
    GroupCount { k: usize, n: usize },
    #[error("language {0} is missing from the distance matrix")]
    MissingLanguage(LanguageCode),
}

/// Symmetric dissimilarity matrix over a list of languages.
#[derive(Debug, Clone, PartialEq)]
pub struct LanguageDistanceMatrix<T> {
    languages: Vec<LanguageCode>,
    d: Vec<T>,
}

impl<T: Scalar> LanguageDistanceMatrix<T> {
    /// `rows[i][j]` is the distance between `languages[i]` and `languages[j]`.
    pub fn new(languages: Vec<LanguageCode>, rows: Vec<Vec<T>>) -> Result<Self, ClusterError> {
        let n = languages.len();
        let malformed = |m: String| Err(ClusterError::Malformed(m));
        if n == 0 {
            return malformed("no languages".into());
        }
        let mut sorted = languages.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != n {
            return malformed("duplicate language codes".into());
        }
        if rows.len() != n || rows.iter().any(|r| r.len() != n) {
            return malformed(format!("expected a {n}x{n} matrix"));
        }
        for i in 0..n {
            if rows[i][i] != T::zero() {
                return malformed(format!("non-zero diagonal at {}", languages[i]));
            }
            for j in 0..n {
                let v = rows[i][j];
                if !v.is_finite() || v < T::zero() {
                    return malformed(format!(
                        "entry ({}, {}) must be finite and non-negative",
                        languages[i], languages[j]
                    ));
                }
                if v != rows[j][i] {
                    return malformed(format!(
                        "asymmetric entry ({}, {})",
                        languages[i], languages[j]
                    ));
                }
            }
        }
        Ok(Self {
            languages,
            d: rows.into_iter().flatten().collect(),
        })
    }

    pub fn languages(&self) -> &[LanguageCode] {
        &self.languages
    }

    pub fn len(&self) -> usize {
        self.languages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.languages.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.d[i * self.len() + j]
    }

    pub fn distance(&self, a: &LanguageCode, b: &LanguageCode) -> Option<T> {
        let i = self.languages.iter().position(|l| l == a)?;
        let j = self.languages.iter().position(|l| l == b)?;
        Some(self.get(i, j))
    }

    /// Restricts the matrix to `keep`, in the order given.
    pub fn restrict(&self, keep: &[LanguageCode]) -> Result<Self, ClusterError> {
        let idx: Vec<usize> = keep
            .iter()
            .map(|l| {
                self.languages
                    .iter()
                    .position(|x| x == l)
                    .ok_or_else(|| ClusterError::MissingLanguage(l.clone()))
            })
            .collect::<Result<_, _>>()?;
        let rows = idx
            .iter()
            .map(|&i| idx.iter().map(|&j| self.get(i, j)).collect())
            .collect();
        Self::new(keep.to_vec(), rows)
    }

    /// Parses a whitespace-separated header of language codes followed by
    /// one row of numbers per language. A row may start with its own
    /// language code.
    pub fn parse(text: &str) -> Result<Self, ClusterError> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines
            .next()
            .ok_or_else(|| ClusterError::Malformed("empty input".into()))?;
        let languages: Vec<LanguageCode> = header
            .split_whitespace()
            .map(|t| LanguageCode::new(t).map_err(|e| ClusterError::Malformed(e.to_string())))
            .collect::<Result<_, _>>()?;
        let n = languages.len();
        let mut rows = Vec::with_capacity(n);
        for (i, line) in lines.enumerate() {
            if i >= n {
                return Err(ClusterError::Malformed(format!("more than {n} rows")));
            }
            let mut tokens: Vec<&str> = line.split_whitespace().collect();
            if tokens.len() == n + 1 && tokens[0] == languages[i].as_str() {
                tokens.remove(0);
            }
            let row = tokens
                .iter()
                .map(|t| {
                    f64::from_str(t).map(T::of).map_err(|_| {
                        ClusterError::Malformed(format!("row {}: bad number {t:?}", i + 1))
                    })
                })
                .collect::<Result<Vec<T>, _>>()?;
            rows.push(row);
        }
        Self::new(languages, rows)
    }

    pub fn to_text(&self) -> String {
        let mut out = self
            .languages
            .iter()
            .map(LanguageCode::as_str)
            .collect::<Vec<_>>()
            .join(" ");
        out.push('\n');
        for i in 0..self.len() {
            let row: Vec<String> = (0..self.len())
                .map(|j| self.get(i, j).to_string())
                .collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }
}

/// One agglomeration step: the two merged clusters and their linkage height.
#[derive(Debug, Clone, PartialEq)]
pub struct Merge<T> {
    pub left: Vec<LanguageCode>,
    pub right: Vec<LanguageCode>,
    pub height: T,
}

/// Disjoint language clusters.
pub type Clusters = Vec<Vec<LanguageCode>>;

/// The full merge history from singletons down to `k` clusters, plus the
/// clusters left at that point (members sorted, clusters sorted by their
/// smallest member).
pub fn agglomerate<T: Scalar>(
    m: &LanguageDistanceMatrix<T>,
    k: usize,
) -> Result<(Vec<Merge<T>>, Clusters), ClusterError> {
    let n = m.len();
    if k == 0 || k > n {
        return Err(ClusterError::GroupCount { k, n });
    }
    // Work in byte order of codes so cluster index order matches name order.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| m.languages[a].cmp(&m.languages[b]));
    let mut clusters: Vec<Option<Vec<usize>>> = order.iter().map(|&i| Some(vec![i])).collect();
    let mut dist: Vec<Vec<T>> = order
        .iter()
        .map(|&i| order.iter().map(|&j| m.get(i, j)).collect())
        .collect();

    let mut merges = Vec::with_capacity(n - k);
    for _ in 0..(n - k) {
        // Slots are kept sorted by smallest member, so scanning (a, b) with
        // a < b in slot order visits pairs in tie-break order already.
        let mut best: Option<(usize, usize, T)> = None;
        for a in 0..n {
            if clusters[a].is_none() {
                continue;
            }
            for b in (a + 1)..n {
                if clusters[b].is_none() {
                    continue;
                }
                let d = dist[a][b];
                if best.is_none_or(|(_, _, bd)| d < bd) {
                    best = Some((a, b, d));
                }
            }
        }
        let (a, b, height) = best.expect("at least two clusters remain");
        let right = clusters[b].take().expect("live cluster");
        let left = clusters[a].as_mut().expect("live cluster");
        let names = |c: &[usize]| {
            c.iter()
                .map(|&i| m.languages[i].clone())
                .collect::<Vec<_>>()
        };
        merges.push(Merge {
            left: names(left),
            right: names(&right),
            height,
        });
        left.extend(right);
        left.sort_by(|&x, &y| m.languages[x].cmp(&m.languages[y]));
        // The merged cluster keeps slot `a`, whose smallest member is still
        // the smallest of the union.
        let merged: Vec<T> = dist[a]
            .iter()
            .zip(&dist[b])
            .map(|(&x, &y)| x.max(y))
            .collect();
        for (c, v) in merged.into_iter().enumerate() {
            dist[a][c] = v;
            dist[c][a] = v;
        }
    }

    let remaining = clusters
        .into_iter()
        .flatten()
        .map(|c| c.into_iter().map(|i| m.languages[i].clone()).collect())
        .collect();
    Ok((merges, remaining))
}

/// Partitions the languages into `k` groups named `group0`..`group{k-1}` in
/// order of each group's smallest member.
pub fn cluster_languages<T: Scalar>(
    m: &LanguageDistanceMatrix<T>,
    k: usize,
) -> Result<LanguageGroups, ClusterError> {
    let (_, clusters) = agglomerate(m, k)?;
    let mut groups = BTreeMap::new();
    for (i, members) in clusters.into_iter().enumerate() {
        for lang in members {
            groups.insert(lang, format!("group{i}"));
        }
    }
    Ok(groups)
}
