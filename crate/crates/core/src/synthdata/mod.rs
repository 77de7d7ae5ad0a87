//! Procedural shape families with analytic SDFs, rendered into posed
//! RGB + silhouette samples, and the on-disk dataset layout.

mod dataset;
mod render;
mod shapes;

pub use dataset::{
    camera_at, family_assignment, generate_dataset, generate_instance, instance_id, load_sample, read_json,
    sample_id, write_json, write_sample, Dataset, DatasetManifest, GenConfig, InstanceEntry, SampleMeta,
    CAMERA_DISTANCE, FOV_DEG, MAX_ELEVATION_DEG, MIN_ELEVATION_DEG,
};
pub use render::{render_sample, sdf_normal, sphere_trace, TraceHit, TrainingSample, MAX_TRACE_ITERS, SURFACE_TOL};
pub use shapes::{albedo, analytic_sdf, sample_shape, Family, Part, Placement, Primitive, ShapeSpec};
