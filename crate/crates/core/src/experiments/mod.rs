//! Multi-seed evaluation protocol and the ablation sweeps.

pub mod presets;
mod protocol;
mod report;
mod sweeps;

pub use protocol::{
    build_model, config_fingerprint, full_split, init_seed, run_protocol, run_protocol_detailed,
    run_seed, Dataset, Method, ProtocolConfig, RunResult, Scores, SeedResult, SeedRun, Shots,
    TrainedModel,
};
pub use report::{matrix_csv, SimilarityReport};
pub use sweeps::{
    class_number_sweep, class_subset, description_sweep, mode_spread, ClassCountPoint,
    DescriptionPoint,
};
