//! Deterministic egocentric scene generation.

pub mod dataset;
pub mod frame;
pub mod noise;
pub mod render;
pub mod source;
pub mod trajectory;

pub use dataset::{
    read_manifest, scene_specs, simulate_scene, write_dataset, BinauralClip, Chunk, Chunking, ClipAnnotation,
    DatasetSummary, ManifestRow, Scene, SceneConfig, SceneSpec, Split,
};
pub use frame::{render_frame, FrameImage};
pub use noise::{mix_at_snr, NoiseConfig, NoiseKind};
pub use render::{render_binaural, AcousticsConfig, SourceSignal, StereoSignal};
pub use trajectory::{gen_trajectory, gen_wearer_trajectory, GazeParams, RoomBounds, Trajectory, TrajectoryParams};
