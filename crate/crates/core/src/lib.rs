//! Post-detector baseball play reconstruction.
//!
//! The crate turns per-frame pose keypoints, grayscale frames and external
//! object-detector boxes into a reconstructed play: smoothed joint
//! trajectories, fast-moving-object candidates, the ball track and its
//! release frame, game-event frame indices, ball speed, the bat track and a
//! trainable 1-D CNN movement classifier. A deterministic synthetic scene
//! generator provides ground truth for every stage.

pub mod ballistics;
pub mod batglove;
pub mod events;
pub mod fmoc;
pub mod gbcv;
pub mod geom;
pub mod io;
pub mod mccnn;
pub mod pipeline;
pub mod synthgen;
pub mod trajkit;

pub use geom::{Aabb, Point};
