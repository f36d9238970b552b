//! Feature-cloud future-view rendering and lookahead navigation on synthetic
//! analytic scenes.
//!
//! The engine builds a 3D semantic feature cloud from posed panoramic
//! observations, predicts representations of unvisited viewpoints by k-NN
//! feature aggregation and volume rendering, and drives an
//! instruction-conditioned planner that scores future path branches on a
//! topological map. Every quantity has an analytic oracle: scenes are
//! axis-aligned rooms with exact ray casting, and the semantic embedder is a
//! seeded class-mix embedding rather than a learned image model.

pub mod autodiff;
pub mod cloud;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod kdtree;
pub mod nets;
pub mod planner;
pub mod renderer;
pub mod rng;
pub mod worldgen;

pub use error::{HnrError, Result};
