//! Loss, training loop, evaluation protocol and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod experiment;
pub mod loss;
pub mod metrics;
pub mod model;
mod trainer;

pub use checkpoint::{check_architecture, load_checkpoint, save_checkpoint, CheckpointMeta};
pub use config::{HeadKind, TrainConfig};
pub use experiment::{check_init_parity, run_comparison, Comparison, SplitMode};
pub use eval::{
    comparison_table, embed_all, evaluate_embeddings, mean_pixel_embedding, rank_probe, EvalProtocol, EvalReport,
    EvalResults, Embedded,
};
pub use metrics::{cosine_similarity, roc_auc, AucReport};
pub use model::{BatchOutput, GaitModel, Head};
pub use trainer::{format_curves, label_map, stratified_split, train, EpochStats, RunFiles, TrainOutcome, CURVES_HEADER};
