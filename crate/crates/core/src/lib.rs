//! Semantic data augmentation for episodic robot-learning datasets.
//!
//! Episodes are augmented frame by frame: an open-vocabulary detector
//! localizes the region to edit, passthrough objects (arm, gripper, held
//! items) are subtracted from it, and a two-stage inpainting cascade paints
//! the new content. Actions are carried over untouched and the instruction
//! is relabelled when the edit creates a new task. Original and augmented
//! datasets are then mixed 1:1 into a deterministic epoch order.
//!
//! Every backend has an offline mock driven by the synthetic scene world in
//! [`scene`], so the whole pipeline runs without network access.

pub mod backend;
pub mod cli;
pub mod evalkit;
pub mod inpainting;
pub mod palette;
pub mod pipeline;
pub mod prompting;
pub mod scene;
pub mod seed;
pub mod segmentation;
pub mod store;
