//! Behavior-cloning driving gym: a from-scratch tensor library, the
//! PilotNet-style steering/throttle regressor, the camera preprocessing and
//! augmentation pipeline, a sharded demonstration store, a deterministic
//! Frenet-frame highway simulator, scripted and neural drivers, and the
//! training loop that ties them together.

pub mod tensor;
pub mod dataset;
pub mod pilotnet;
pub mod vision;
pub mod sim;
pub mod policy;
pub mod trainer;
