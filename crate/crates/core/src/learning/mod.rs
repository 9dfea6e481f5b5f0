//! Federated learning on a synthetic task: calibrated client data, local
//! training, aggregation and the scheme comparison.

pub mod model;
pub mod schemes;
pub mod task;

pub use model::{
    aggregate, epochs_for_effort, local_train, server_test, Architecture, ModelVector, TrainSettings,
    WEIGHT_SUM_TOLERANCE,
};
pub use schemes::*;
pub use task::{
    generate_client_dataset, ClientDataset, CoverageSettings, LabeledCloud, SyntheticTask,
    CALIBRATION_TOLERANCE,
};
