//! Synthetic stereo data, disparity files, checkpoints and manifests.

pub mod checkpoint;
pub mod manifest;
pub mod pfm;
pub mod scene;

pub use checkpoint::{load_checkpoint, model_from_checkpoint, model_to_checkpoint, save_checkpoint, Checkpoint};
pub use manifest::{DatasetParams, Manifest};
pub use pfm::{decode_pfm, encode_pfm, read_pfm, write_pfm};
pub use scene::{generate_scene, stack, Layer, SceneSpec, StereoSample, Texture};
