pub mod analysis;
pub mod datagen;
pub mod diffengine;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod losses;
pub mod model;
pub mod rng;
pub mod solvers;
pub mod training;

pub use error::{Error, Result};
