//! Top-k ranking metrics.
//!
//! Ranking order is descending score with ties broken by ascending element
//! id, in both the partial-selection and the full-sort paths.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Real;

#[inline]
fn rank_order<T: Real>(scores: &[T], a: usize, b: usize) -> Ordering {
    scores[b]
        .partial_cmp(&scores[a])
        .unwrap_or(Ordering::Equal)
        .then(a.cmp(&b))
}

/// Ids of the `k` best scores, best first, without sorting the whole domain.
pub fn top_k<T: Real>(scores: &[T], k: usize) -> Vec<usize> {
    let k = k.min(scores.len());
    let mut ids: Vec<usize> = (0..scores.len()).collect();
    if k == 0 {
        return Vec::new();
    }
    if k < ids.len() {
        ids.select_nth_unstable_by(k - 1, |&a, &b| rank_order(scores, a, b));
        ids.truncate(k);
    }
    ids.sort_unstable_by(|&a, &b| rank_order(scores, a, b));
    ids
}

/// Every id, best first.
pub fn rank_all<T: Real>(scores: &[T]) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..scores.len()).collect();
    ids.sort_by(|&a, &b| rank_order(scores, a, b));
    ids
}

/// Ids in rank order, plus the scores they were ranked by.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedPrediction {
    pub ids: Vec<usize>,
    pub scores: Vec<f64>,
}

impl RankedPrediction {
    pub fn from_scores<T: Real>(scores: &[T], k: usize) -> Self {
        let ids = top_k(scores, k);
        let scores = ids.iter().map(|&i| scores[i].to_f64().unwrap_or(f64::NAN)).collect();
        Self { ids, scores }
    }
}

fn check_truth(truth: &[usize]) -> Result<()> {
    if truth.is_empty() {
        Err(Error::Metric("ground truth is empty".into()))
    } else {
        Ok(())
    }
}

fn hits(top: &[usize], truth: &[usize]) -> usize {
    top.iter().filter(|id| truth.contains(id)).count()
}

/// `|top ∩ truth| / |truth|`; `top` is already cut to k.
pub fn recall_at_k(top: &[usize], truth: &[usize]) -> Result<f64> {
    check_truth(truth)?;
    Ok(hits(top, truth) as f64 / truth.len() as f64)
}

/// Binary-relevance DCG over the first `k` ranked ids.
pub fn dcg_at_k(ranked: &[usize], truth: &[usize], k: usize) -> f64 {
    ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, id)| truth.contains(id))
        .map(|(pos, _)| 1.0 / ((pos + 2) as f64).log2())
        .sum()
}

pub fn ndcg_at_k(ranked: &[usize], truth: &[usize], k: usize) -> Result<f64> {
    check_truth(truth)?;
    let ideal: f64 = (0..k.min(truth.len())).map(|pos| 1.0 / ((pos + 2) as f64).log2()).sum();
    if ideal == 0.0 {
        return Ok(0.0);
    }
    Ok(dcg_at_k(ranked, truth, k) / ideal)
}

/// Fraction of users with at least one hit.
pub fn phr(hits: &[bool]) -> Result<f64> {
    if hits.is_empty() {
        return Err(Error::Metric("PHR over zero users".into()));
    }
    Ok(hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64)
}

/// Averages over users at each cutoff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub k_list: Vec<usize>,
    pub recall: Vec<f64>,
    pub ndcg: Vec<f64>,
    pub phr: Vec<f64>,
    pub users: usize,
    /// Users excluded because their ground truth was empty.
    pub skipped_users: usize,
}

impl MetricReport {
    fn index_of(&self, k: usize) -> Option<usize> {
        self.k_list.iter().position(|&x| x == k)
    }

    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.index_of(k).map(|i| self.recall[i])
    }

    pub fn ndcg_at(&self, k: usize) -> Option<f64> {
        self.index_of(k).map(|i| self.ndcg[i])
    }

    pub fn phr_at(&self, k: usize) -> Option<f64> {
        self.index_of(k).map(|i| self.phr[i])
    }

    /// Plain-text table grouped by metric, one column per cutoff.
    pub fn table(&self, label: &str) -> String {
        let heads: Vec<String> = self.k_list.iter().map(|k| format!("@{k}")).collect();
        let group_width = heads.len() * 9 - 1;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<12} | {:^w$} | {:^w$} | {:^w$}",
            "",
            "Recall",
            "NDCG",
            "PHR",
            w = group_width
        );
        let cols = |vals: &[String]| vals.iter().map(|v| format!("{v:>8}")).collect::<Vec<_>>().join(" ");
        let _ = writeln!(
            out,
            "{:<12} | {} | {} | {}",
            "",
            cols(&heads),
            cols(&heads),
            cols(&heads)
        );
        let fmt = |xs: &[f64]| xs.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>();
        let _ = writeln!(
            out,
            "{:<12} | {} | {} | {}",
            label,
            cols(&fmt(&self.recall)),
            cols(&fmt(&self.ndcg)),
            cols(&fmt(&self.phr))
        );
        let _ = write!(out, "users: {} (skipped: {})", self.users, self.skipped_users);
        out
    }
}

/// Running sums for a [`MetricReport`].
#[derive(Debug, Clone)]
pub struct MetricAccumulator {
    k_list: Vec<usize>,
    recall: Vec<f64>,
    ndcg: Vec<f64>,
    hits: Vec<usize>,
    users: usize,
    skipped: usize,
}

impl MetricAccumulator {
    pub fn new(k_list: &[usize]) -> Self {
        let n = k_list.len();
        Self {
            k_list: k_list.to_vec(),
            recall: vec![0.0; n],
            ndcg: vec![0.0; n],
            hits: vec![0; n],
            users: 0,
            skipped: 0,
        }
    }

    pub fn max_k(&self) -> usize {
        self.k_list.iter().copied().max().unwrap_or(0)
    }

    /// `ranked` must hold at least `max_k` ids (or the whole domain).
    pub fn add(&mut self, ranked: &[usize], truth: &[usize]) {
        if truth.is_empty() {
            self.skipped += 1;
            return;
        }
        self.users += 1;
        for (i, &k) in self.k_list.iter().enumerate() {
            let top = &ranked[..k.min(ranked.len())];
            let h = hits(top, truth);
            self.recall[i] += h as f64 / truth.len() as f64;
            self.ndcg[i] += ndcg_at_k(ranked, truth, k).expect("truth checked non-empty");
            self.hits[i] += usize::from(h > 0);
        }
    }

    pub fn merge(&mut self, other: &Self) {
        for i in 0..self.k_list.len() {
            self.recall[i] += other.recall[i];
            self.ndcg[i] += other.ndcg[i];
            self.hits[i] += other.hits[i];
        }
        self.users += other.users;
        self.skipped += other.skipped;
    }

    pub fn finish(self) -> MetricReport {
        let n = self.users.max(1) as f64;
        MetricReport {
            recall: self.recall.iter().map(|x| x / n).collect(),
            ndcg: self.ndcg.iter().map(|x| x / n).collect(),
            phr: self.hits.iter().map(|&h| h as f64 / n).collect(),
            k_list: self.k_list,
            users: self.users,
            skipped_users: self.skipped,
        }
    }
}
