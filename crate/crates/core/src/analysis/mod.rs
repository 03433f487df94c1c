//! Structure checks on trained spaces and functional zone clustering.

pub mod cluster;
pub mod correlation;
pub mod heatmap;
pub mod zones;

pub use cluster::{adjusted_rand, kmeans, silhouette, Clustering, KMeansConfig};
pub use correlation::{
    distance_correlation, pair_segments, pearson, spearman, Correlation, CorrelationReport,
    PairConfig, PairRecord, PairSegment, SeriesCorrelation,
};
pub use heatmap::{heatmap_stats, Axis, Heatmap};
pub use zones::{
    cluster_composition, cluster_profiles, ground_truth_features, ground_truth_profiles, write_zones_geojson,
    Composition, GroundTruth,
};
