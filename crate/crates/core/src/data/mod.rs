//! From raw trajectories to learning-ready datasets.

mod noise;
mod norm;
mod samples;
mod savgol;

pub use noise::{add_noise, smooth_trajectory, NoiseSpec};
pub use norm::{NormStats, Standardizer, STD_FLOOR};
pub use samples::{
    build_operator_dataset, build_operator_dataset_with, build_surrogate_dataset,
    build_surrogate_dataset_with, query_indices, sensor_indices, OperatorDataset, OperatorSample,
    OperatorStats, SurrogateDataset, SurrogateSample, DATASET_SCHEMA_VERSION,
};
pub use savgol::{savgol, savgol_weights, SgFilterSpec};
