//! Synthetic desk scenes with paired polarization captures, ground truth and
//! degraded sensor depth.

mod dataset;
mod degrade;
mod render;
mod scene;

pub use dataset::{
    capture_file, dataset, generate, generate_sample, load_dataset, read_manifest, sample_seed, write_dataset,
    DegradationDistribution, ManifestRow, Sample, SceneDistribution, StoredSample, INTRINSICS_FILE, MANIFEST_FILE,
};
pub use degrade::{degrade, DegradationMode, DegradationSpec, MIN_SENSOR_DEPTH};
pub use render::{render, Render, RenderMetadata, SurfaceMap, BACKGROUND_LEVEL};
pub use scene::{Hit, Material, MaterialDolp, Primitive, SceneSpec, Shape, MIN_RESOLUTION};
