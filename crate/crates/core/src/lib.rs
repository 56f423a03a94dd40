pub mod batch;
pub mod dataset;
pub mod features;
pub mod ppo;
pub mod tracker;
pub mod error;
pub mod motion;
pub mod synth;
pub mod representation;
pub mod dynamics;
pub mod imitation;
pub mod eval;
pub mod igsl;
pub mod pipeline;
pub mod render;

pub use error::{ForgeError, Result};
