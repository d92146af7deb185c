//! Collaborative and semantic recommenders, a Norm-Concat-Norm fusion of the
//! two, alignment probes between their embedding spaces, and diagnostics that
//! measure how complementary two rankers are.

pub mod cf;
pub mod checkpoint;
pub mod contrastive;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod graph;
pub mod linalg;
pub mod metrics;
pub mod optim;
pub mod probe;
pub mod rng;
pub mod semantic;
pub mod synth;
pub mod train;

pub use error::{Error, ErrorClass, Result};
pub use dataset::{EmbeddingMatrix, Interaction, InteractionDataset, Part, SplitDataset, SplitRatios};
pub use eval::DotScorer;
pub use metrics::{MeanMetric, RankingResult, UserRanking};
pub use synth::{generate_world, LatentWorld, LatentWorldConfig};
pub use train::{TrainConfig, TrainOutcome};
