//! Example media, noise injection, quality metrics and file formats.

pub mod io;
pub mod metrics;
pub mod noise;
pub mod pipeline;
pub mod setups;

pub use metrics::{compute_metrics, Metrics};
pub use noise::add_noise;
pub use setups::{make_example, ExampleSpec, Shape, RegParams, EXAMPLE_NAMES};
