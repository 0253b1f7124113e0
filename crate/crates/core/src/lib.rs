//! Rescaled Sinai walks, their local times, the branching processes embedded
//! in their excursions, and the Brox-diffusion objects they converge to.

pub mod branching;
pub mod compare;
pub mod diffusion;
pub mod environment;
pub mod seed;
pub mod walk;
