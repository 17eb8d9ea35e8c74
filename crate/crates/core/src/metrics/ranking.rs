//! Retrieval metrics over leave-one-out cosine rankings.
//!
//! For every query the remaining rows are ranked by descending cosine
//! similarity, ties broken by ascending row index. `R` is the number of
//! other items sharing the query's class; queries with `R = 0` are skipped
//! by every metric and counted in [`RetrievalScores::excluded_queries`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding_store::EmbeddingSet;
use crate::error::{Error, Result};
use crate::hypersphere::EPS_NORM;

/// One query's ranking with relevance flags.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedRetrieval {
    pub query: usize,
    pub neighbors: Vec<usize>,
    pub relevant: Vec<bool>,
}

impl RankedRetrieval {
    pub fn new(query: usize, neighbors: Vec<usize>, classes: &[usize]) -> Self {
        let relevant = neighbors
            .iter()
            .map(|&j| classes[j] == classes[query])
            .collect();
        Self {
            query,
            neighbors,
            relevant,
        }
    }

    /// Number of relevant items in the whole ranking.
    pub fn r(&self) -> usize {
        self.relevant.iter().filter(|&&r| r).count()
    }

    /// Per-query metric values; `None` when the query has no relevant item.
    pub fn scores(&self) -> Option<QueryScores> {
        let r = self.r();
        if r == 0 {
            return None;
        }
        let mut hits = 0usize;
        let mut ap_at_r = 0.0;
        let mut ap = 0.0;
        let mut hits_at_r = 0;
        let mut first = None;
        for (k, &rel) in self.relevant.iter().enumerate() {
            if rel {
                hits += 1;
                let precision = hits as f64 / (k + 1) as f64;
                ap += precision;
                if k < r {
                    ap_at_r += precision;
                }
                first.get_or_insert(k + 1);
            }
            if k + 1 == r {
                hits_at_r = hits;
            }
        }
        Some(QueryScores {
            prec_at_1: if self.relevant[0] { 1.0 } else { 0.0 },
            r_prec: hits_at_r as f64 / r as f64,
            map_at_r: ap_at_r / r as f64,
            ap: ap / r as f64,
            rr: 1.0 / first.expect("r > 0") as f64,
        })
    }
}

/// Metric values of a single query; `ap` and `rr` are its average
/// precision and reciprocal rank.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryScores {
    pub prec_at_1: f64,
    pub r_prec: f64,
    pub map_at_r: f64,
    pub ap: f64,
    pub rr: f64,
}

/// All ranking metrics from one pass over the queries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalScores {
    pub map_at_r: f64,
    pub prec_at_1: f64,
    pub r_prec: f64,
    pub map: f64,
    pub mrr: f64,
    pub evaluated_queries: usize,
    pub excluded_queries: usize,
}

/// Rows scaled to unit length, kept flat for fast dot products.
struct UnitRows {
    dim: usize,
    data: Vec<f64>,
}

impl UnitRows {
    fn new(e: &EmbeddingSet) -> Result<Self> {
        let mut data = e.data().to_vec();
        for (i, row) in data.chunks_exact_mut(e.dim()).enumerate() {
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(n > EPS_NORM) {
                return Err(Error::DegenerateRow { row: e.row_name(i) });
            }
            row.iter_mut().for_each(|x| *x /= n);
        }
        Ok(Self { dim: e.dim(), data })
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn count(&self) -> usize {
        self.data.len() / self.dim
    }

    fn rank(&self, query: usize) -> Vec<usize> {
        let q = self.row(query);
        let mut scored: Vec<(f64, usize)> = (0..self.count())
            .filter(|&j| j != query)
            .map(|j| (q.iter().zip(self.row(j)).map(|(a, b)| a * b).sum(), j))
            .collect();
        // `partial_cmp` rather than `total_cmp`: +0.0 and -0.0 are a tie.
        scored.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .expect("similarities of finite unit rows are finite")
                .then(a.1.cmp(&b.1))
        });
        scored.into_iter().map(|(_, j)| j).collect()
    }
}

/// Indices of every other row of `e`, most similar to `query` first.
pub fn rank_neighbors(query: usize, e: &EmbeddingSet) -> Result<Vec<usize>> {
    if e.count() < 2 {
        return Err(Error::Config("ranking needs at least two rows".into()));
    }
    if query >= e.count() {
        return Err(Error::Config(format!("query {query} out of range")));
    }
    Ok(UnitRows::new(e)?.rank(query))
}

fn check_labels(e: &EmbeddingSet, classes: &[usize]) -> Result<()> {
    if classes.len() != e.count() {
        return Err(Error::Labels(format!(
            "{} labels for {} rows",
            classes.len(),
            e.count()
        )));
    }
    if e.count() < 2 {
        return Err(Error::Config("ranking needs at least two rows".into()));
    }
    Ok(())
}

/// Computes every ranking metric for `e` with per-row class indices `classes`.
pub fn evaluate_retrieval(e: &EmbeddingSet, classes: &[usize]) -> Result<RetrievalScores> {
    check_labels(e, classes)?;
    let rows = UnitRows::new(e)?;
    let per_query: Vec<Option<QueryScores>> = (0..e.count())
        .into_par_iter()
        .map(|q| RankedRetrieval::new(q, rows.rank(q), classes).scores())
        .collect();

    let scored: Vec<QueryScores> = per_query.iter().flatten().copied().collect();
    if scored.is_empty() {
        return Err(Error::NoEvaluableQueries);
    }
    let n = scored.len() as f64;
    let mean = |f: fn(&QueryScores) -> f64| scored.iter().map(f).sum::<f64>() / n;
    Ok(RetrievalScores {
        map_at_r: mean(|s| s.map_at_r),
        prec_at_1: mean(|s| s.prec_at_1),
        r_prec: mean(|s| s.r_prec),
        map: mean(|s| s.ap),
        mrr: mean(|s| s.rr),
        evaluated_queries: scored.len(),
        excluded_queries: per_query.len() - scored.len(),
    })
}

pub fn precision_at_1(e: &EmbeddingSet, classes: &[usize]) -> Result<f64> {
    Ok(evaluate_retrieval(e, classes)?.prec_at_1)
}

pub fn r_precision(e: &EmbeddingSet, classes: &[usize]) -> Result<f64> {
    Ok(evaluate_retrieval(e, classes)?.r_prec)
}

pub fn map_at_r(e: &EmbeddingSet, classes: &[usize]) -> Result<f64> {
    Ok(evaluate_retrieval(e, classes)?.map_at_r)
}

pub fn mean_average_precision(e: &EmbeddingSet, classes: &[usize]) -> Result<f64> {
    Ok(evaluate_retrieval(e, classes)?.map)
}

pub fn mean_reciprocal_rank(e: &EmbeddingSet, classes: &[usize]) -> Result<f64> {
    Ok(evaluate_retrieval(e, classes)?.mrr)
}
