//! Files, configuration and the deployment-cadence driver around
//! [`ctr_incr_core`].

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod pipeline;
pub mod report;
pub mod truth;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{PipelineConfig, RegimeSet, Schedule};
pub use dataset::{read_dataset, write_dataset, DatasetReader, DatasetWriter};
pub use error::{Error, Result};
pub use pipeline::{
    measure_training_cost, run_on_stream, run_pipeline, CostReport, DeploymentRegistry, ImpressionStore, PipelineRun,
    RegistryEntry,
};
pub use report::{comparison_table, summary_table, write_run};
pub use truth::{read_truth, write_truth};
