//! Procedural toy data: scenes, per-task condition images, pretraining
//! clips and deterministic sample streams.

pub mod conditions;
pub mod dataset;
pub mod scene;
pub mod video;

pub use conditions::{
    apply_condition, downsample, edge_image, edge_map, edges_from_condition, gaussian_blur, make_condition,
    upsample_nearest, Rect, TaskDraw, TaskKind, TaskSample, TaskSpec,
};
pub use dataset::{dataset_stream, export_dataset, TaskDataset, VideoDataset};
pub use scene::{gen_scene, parse_prompt, Scene, SceneObject, ShapeKind};
pub use video::{build_training_pair, gen_pretrain_video, gen_pretrain_video_with, PretrainClip};
