//! Wayfarer simulates an agent that executes long streams of navigation
//! instructions inside one persistent synthetic environment, accumulating an
//! append-only memory bank and (optionally) adapting its policy as it goes.
//!
//! The crate is organized around seven subsystems:
//!
//! - [`world`]: procedural generation of connected topological environments
//!   with 3D node positions, landmark tokens, and panoramic feature vectors,
//!   plus geodesic shortest-path queries.
//! - [`episodes`]: reference-path sampling and symbolic instruction synthesis
//!   in three styles (basic, scene, per-persona user).
//! - [`memory`]: the per-environment memory bank and the cross-episode global
//!   graph with buffered re-initialization.
//! - [`agent`]: a linear candidate scorer over a fixed feature map, a
//!   global-action-space executor with shortest-path planning, and the
//!   episode loop.
//! - [`adapt`]: unsupervised parameter updates driven by the memory bank —
//!   entropy minimization, back-translation imitation, and masked-token
//!   modelling.
//! - [`metrics`]: trajectory evaluation (TL, NE, SR, SPL, nDTW), adaptation
//!   slopes, and cross-run aggregation.
//! - [`harness`]: experiment orchestration — policy training, split
//!   execution, ablations, and report rendering.
//!
//! Everything is deterministic given its seeds: generating a world, sampling
//! episodes, running a session, and adapting parameters are pure functions of
//! their inputs. Independent sessions may run data-parallel (see
//! [`exec`]); execution within one session is strictly sequential because
//! memory-bank order matters.

pub mod adapt;
pub mod agent;
pub mod episodes;
pub mod error;
pub mod exec;
pub mod harness;
pub mod memory;
pub mod metrics;
pub mod seeds;
pub mod world;

pub use error::{Error, Result};
