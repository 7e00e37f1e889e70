//! Network-restricted voting game with emergent discrete communication.
//!
//! Two candidate agents and n networked member agents exchange sequences of
//! discrete symbols; all policies are trained end-to-end through
//! Gumbel-Softmax relaxations. The crate provides the differentiable
//! substrate, the game environment, the policy networks, the training loop
//! and an analysis suite for win rates and language statistics.

pub mod analysis;
pub mod commengine;
pub mod diffcore;
pub mod env;
pub mod error;
pub mod netgen;
pub mod nn;
pub mod policies;
pub mod trainer;
pub mod rng;
