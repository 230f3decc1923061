//! End-to-end plumbing: dataset ingestion, synthetic data, the feature
//! store, experiment stages, and evaluation reports.

pub mod config;
pub mod dataset;
pub mod experiment;
pub mod metrics;
pub mod store;
pub mod synth;

pub use config::{ClassifierKind, FeatureSet, RunConfig};
pub use dataset::{
    ingest_dataset, load_and_preprocess, DatasetManifest, IngestOptions, ManifestRecord, Split,
    DESCRIPTOR_SIZE,
};
pub use experiment::{
    evaluate_stage, extract_stage, network_fingerprint, run_experiment, train_classifier_stage,
    train_network_stage, ExtractPlan, Workdir,
};
pub use metrics::{compute_metrics, confusion_svg, render_text, EvalReport};
pub use store::{FeatureStore, StoredFeature, NO_NETWORK};
pub use synth::synth_dataset;
