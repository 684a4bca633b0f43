//! Distance-based outlier scoring: each point's Euclidean distance to its
//! k-th nearest neighbor (or the mean of its k nearest), with heap-based
//! top-m flagging. Works on raw flattened images or learned embeddings.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreMode {
    /// Distance to the k-th nearest neighbor (self excluded).
    KthDistance,
    /// Mean of the k nearest distances.
    MeanKDistance,
}

#[derive(Debug, Clone, Copy)]
pub struct KnnConfig {
    pub k: usize,
    pub score_mode: ScoreMode,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self { k: 5, score_mode: ScoreMode::KthDistance }
    }
}

/// Row-major n x d point matrix.
#[derive(Debug, Clone)]
pub struct PointSet {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
}

impl PointSet {
    pub fn new(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::Shape(format!(
                "point set {rows}x{dim} expects {} values, got {}",
                rows * dim,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("point set contains non-finite values".into()));
        }
        Ok(Self { rows, dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Shape("point rows have unequal widths".into()));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(rows.len(), dim, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Anomaly scores plus the flagged top-fraction index set.
#[derive(Debug, Clone)]
pub struct OutlierScores {
    pub scores: Vec<f64>,
    /// Ascending indices of the declared outliers.
    pub flagged: Vec<usize>,
    pub fraction: f64,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// k-NN distance score per point. Distances are compared squared and the
/// square root is taken once at the end.
pub fn knn_scores(points: &PointSet, config: &KnnConfig) -> Result<Vec<f64>> {
    let n = points.rows();
    if config.k == 0 {
        return Err(Error::Config("knn needs k >= 1".into()));
    }
    if n <= config.k {
        return Err(Error::Config(format!(
            "knn with k={} needs more than {} points, got {n}",
            config.k, config.k
        )));
    }
    if points.dim() == 0 {
        return Err(Error::Config("knn needs at least one feature dimension".into()));
    }
    let k = config.k;
    let scores = (0..n)
        .into_par_iter()
        .map(|i| {
            let me = points.row(i);
            let mut dists: Vec<f64> = Vec::with_capacity(n - 1);
            for j in 0..n {
                if j != i {
                    dists.push(squared_distance(me, points.row(j)));
                }
            }
            dists.select_nth_unstable_by(k - 1, |a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
            match config.score_mode {
                ScoreMode::KthDistance => dists[k - 1].sqrt(),
                ScoreMode::MeanKDistance => {
                    let head = &mut dists[..k];
                    head.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
                    head.iter().map(|d| d.sqrt()).sum::<f64>() / k as f64
                }
            }
        })
        .collect();
    Ok(scores)
}

/// Heap entry ordered so the "worst kept" candidate surfaces at the top of
/// a min-heap: lower score is worse; on equal scores a higher index is
/// worse (ties at the boundary go to the lower index).
#[derive(Debug, PartialEq)]
struct Candidate {
    score: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .partial_cmp(&self.score)
            .unwrap_or(Ordering::Equal)
            .then_with(|| self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Indices of the m largest scores via a bounded min-heap, ties at the
/// boundary broken by lower index first. Returned ascending.
pub fn top_m_flagged(scores: &[f64], m: usize) -> Result<Vec<usize>> {
    if m > scores.len() {
        return Err(Error::Config(format!(
            "cannot flag {m} of {} scores",
            scores.len()
        )));
    }
    if m == 0 {
        return Ok(Vec::new());
    }
    let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(m + 1);
    for (index, &score) in scores.iter().enumerate() {
        heap.push(Candidate { score, index });
        if heap.len() > m {
            heap.pop();
        }
    }
    let mut flagged: Vec<usize> = heap.into_iter().map(|c| c.index).collect();
    flagged.sort_unstable();
    Ok(flagged)
}

/// Score all points and flag the top `round(fraction * n)`.
pub fn detect(points: &PointSet, config: &KnnConfig, fraction: f64) -> Result<OutlierScores> {
    if !(0.0..1.0).contains(&fraction) || fraction <= 0.0 {
        return Err(Error::Config(format!("outlier fraction must be in (0,1), got {fraction}")));
    }
    let scores = knn_scores(points, config)?;
    let m = (fraction * points.rows() as f64).round() as usize;
    let flagged = top_m_flagged(&scores, m)?;
    Ok(OutlierScores { scores, flagged, fraction })
}
