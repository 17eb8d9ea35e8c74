//! Retrieval and clustering evaluation.

mod clustering;
mod ranking;
mod report;

pub use clustering::{ami, kmeans, nmi, KMeans, KMEANS_MAX_ITERATIONS};
pub use ranking::{
    evaluate_retrieval, map_at_r, mean_average_precision, mean_reciprocal_rank, precision_at_1,
    r_precision, rank_neighbors, QueryScores, RankedRetrieval, RetrievalScores,
};
pub use report::{render_table, Metric, MetricSummary, RetrievalReport};
