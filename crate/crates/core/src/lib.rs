pub mod error;
pub mod init;
pub mod io;
pub mod kernel;
pub mod losses;
pub mod motion;
pub mod pipeline;
pub mod optim;
pub mod raster;
pub mod render;
pub mod scene;
pub mod so3;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
