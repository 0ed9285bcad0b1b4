//! Divergence between an attribute-conditioned top-k list and the neutral one.
//!
//! All three scores are `1 - similarity` and lie in `[0, 1]`:
//!
//! * **IOU**: Jaccard distance over the two lists as sets.
//! * **SERP**: overlap weighted by the attribute-list rank, `k - r + 1`, so a
//!   shared item at the top counts most.
//! * **PRAG**: pairwise rank agreement. A pair `(i1, i2)` of attribute-list
//!   items counts when `i1` is also in the neutral list and both lists order
//!   the pair the same way; items missing from the neutral list rank last.
//!
//! SERP and PRAG are not symmetric: the attribute list always comes first.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::hash::Hash;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::parser::RankedList;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("cannot score an empty list")]
    EmptyList,
    #[error("list of length {len} exceeds k = {k}")]
    RankExceedsK { len: usize, k: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("list contains a duplicate item")]
    DuplicateItem,
}

/// Denominator used for PRAG.
///
/// `Literal` divides the agreeing-pair count by `k(k+1)`, which leaves
/// identical lists with a non-zero divergence (23/42 at k = 20). `Corrected`
/// divides by `k(k-1)/2`, the count attained by two identical lists.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PragMode {
    Literal,
    #[default]
    Corrected,
}

impl PragMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PragMode::Literal => "literal",
            PragMode::Corrected => "corrected",
        }
    }
}

impl fmt::Display for PragMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PragMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "literal" => Ok(PragMode::Literal),
            "corrected" => Ok(PragMode::Corrected),
            other => Err(format!("unknown prag mode `{other}` (expected `literal` or `corrected`)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasScores {
    pub attribute_id: String,
    pub b_iou: f64,
    pub b_serp: f64,
    pub b_prag: f64,
    pub prag_mode: PragMode,
    pub k: usize,
    pub degraded_input: bool,
}

fn check_non_empty<T>(a: &[T], b: &[T]) -> Result<(), MetricError> {
    if a.is_empty() || b.is_empty() {
        Err(MetricError::EmptyList)
    } else {
        Ok(())
    }
}

fn unique_set<T: Eq + Hash>(list: &[T]) -> Result<HashSet<&T>, MetricError> {
    let set: HashSet<&T> = list.iter().collect();
    if set.len() != list.len() {
        return Err(MetricError::DuplicateItem);
    }
    Ok(set)
}

/// Jaccard distance over the actual list contents.
pub fn b_iou<T: Eq + Hash>(list_a: &[T], list_neu: &[T]) -> Result<f64, MetricError> {
    check_non_empty(list_a, list_neu)?;
    let a = unique_set(list_a)?;
    let b = unique_set(list_neu)?;
    let inter = a.intersection(&b).count();
    let union = a.len() + b.len() - inter;
    Ok(1.0 - inter as f64 / union as f64)
}

/// Rank-weighted overlap divergence with the nominal `k` in the denominator.
pub fn b_serp<T: Eq + Hash>(list_a: &[T], list_neu: &[T], k: usize) -> Result<f64, MetricError> {
    check_non_empty(list_a, list_neu)?;
    check_k(list_a, list_neu, k)?;
    unique_set(list_a)?;
    let neu = unique_set(list_neu)?;
    let weight: usize = list_a
        .iter()
        .enumerate()
        .filter(|(_, item)| neu.contains(item))
        .map(|(idx, _)| 2 * (k - idx))
        .sum();
    Ok(1.0 - weight as f64 / (k * (k + 1)) as f64)
}

/// Number of attribute-list pairs whose relative order agrees with the
/// neutral list, under the missing-item-ranks-last convention.
pub fn prag_agreeing_pairs<T: Eq + Hash>(list_a: &[T], list_neu: &[T]) -> Result<usize, MetricError> {
    unique_set(list_a)?;
    unique_set(list_neu)?;
    let neu_rank: HashMap<&T, usize> = list_neu.iter().enumerate().map(|(r, item)| (item, r)).collect();
    // neutral ranks in attribute-list order; None stands for +inf
    let ranks: Vec<Option<usize>> = list_a.iter().map(|item| neu_rank.get(item).copied()).collect();
    let mut count = 0;
    for (pos, first) in ranks.iter().enumerate() {
        let Some(r1) = first else { continue };
        count += ranks[pos + 1..]
            .iter()
            .filter(|later| later.is_none_or(|r2| *r1 < r2))
            .count();
    }
    Ok(count)
}

pub fn b_prag<T: Eq + Hash>(list_a: &[T], list_neu: &[T], k: usize, mode: PragMode) -> Result<f64, MetricError> {
    check_non_empty(list_a, list_neu)?;
    check_k(list_a, list_neu, k)?;
    let agreeing = prag_agreeing_pairs(list_a, list_neu)?;
    let similarity = match mode {
        PragMode::Literal => agreeing as f64 / (k * (k + 1)) as f64,
        PragMode::Corrected if k < 2 => {
            // no pairs exist; fall back to whether the single item is shared
            let neu: HashSet<&T> = list_neu.iter().collect();
            if neu.contains(&list_a[0]) {
                1.0
            } else {
                0.0
            }
        }
        PragMode::Corrected => (agreeing as f64 / (k * (k - 1) / 2) as f64).min(1.0),
    };
    Ok((1.0 - similarity).clamp(0.0, 1.0))
}

fn check_k<T>(list_a: &[T], list_neu: &[T], k: usize) -> Result<(), MetricError> {
    if k == 0 {
        return Err(MetricError::ZeroK);
    }
    for len in [list_a.len(), list_neu.len()] {
        if len > k {
            return Err(MetricError::RankExceedsK { len, k });
        }
    }
    Ok(())
}

/// All three divergences for one attribute list against its neutral list.
pub fn all_scores(
    attribute_id: &str,
    list_a: &RankedList,
    list_neu: &RankedList,
    k: usize,
    prag_mode: PragMode,
) -> Result<BiasScores, MetricError> {
    let a = &list_a.item_ids;
    let n = &list_neu.item_ids;
    Ok(BiasScores {
        attribute_id: attribute_id.to_string(),
        b_iou: b_iou(a, n)?,
        b_serp: b_serp(a, n, k)?,
        b_prag: b_prag(a, n, k, prag_mode)?,
        prag_mode,
        k,
        degraded_input: list_a.degraded || list_neu.degraded,
    })
}
