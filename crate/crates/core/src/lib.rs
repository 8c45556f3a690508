pub mod commands;
pub mod error;
pub mod imgproc;
pub mod phantom;
pub mod pipeline;
pub mod refine;
pub mod scoring;
pub mod service;
pub mod seed;
pub mod stats;
pub mod synthesis;
pub mod volume_io;

pub use error::{Error, Result};
