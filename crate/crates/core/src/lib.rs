//! Network item response model: persons and items embedded in a shared
//! Euclidean latent space, fitted by Metropolis–Hastings.

pub mod analysis;
pub mod artifact;
pub mod data;
pub mod datasets;
mod engine;
pub mod error;
pub mod export;
pub mod extend;
pub mod model;
pub mod positions;
pub mod post;
pub mod sampler;
pub mod simulate;

pub use data::{
    encode_pair, materialize_network, pairwise_counts, Axis, CsvOptions, Encoding, PairNetwork,
    PairwiseCounts, Response, ResponseMatrix,
};
pub use error::{NirmError, Result};
pub use model::{
    delta_log_posterior, derive_positions, edge_log_prob, log_posterior, simulate_networks, Change,
    Linkage, LogPosterior, ModelConfig, ParameterState, PriorConfig,
};
pub use positions::Positions;
pub use sampler::{
    adapt_scales, fit, fit_from, gibbs_update_variance, sweep, AcceptanceRates, Adaptation,
    FrozenBlocks, McmcConfig, PosteriorDraws, ProposalScales, SweepTally,
};
pub use simulate::{simulate_responses, SimulationConfig, SyntheticData};
pub use post::{
    align_configurations, effective_sample_size, pair_distance_trace, principal_axes,
    principal_axes_rotate, procrustes_align, summarize, AlignedDraws, PosteriorSummary,
    ScalarSummary, Space,
};
pub use extend::{
    approx_new_intercept, approx_new_position, sample_new_items, sample_new_persons, FittedModel,
    ItemExtension, NewDataCase, NewDataKind, NewUnit, UnitDraws, UpdatePolicy,
};
pub use analysis::{
    edge_list, force_layout, item_rest_distances, pairwise_distances, similarity_matrix, EdgeList,
    EdgeRecord, ItemRest, Metric, SimilarityMatrix,
};
pub use artifact::{read_draws_csv, write_draws_csv, DrawsTable, Manifest};
pub use export::{export_artifacts, ExportOptions, ExportReport};
