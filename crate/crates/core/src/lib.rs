pub mod analytics;
pub mod data;
pub mod error;
pub mod forecast;
pub mod geostat;
pub mod idw;
pub mod mlp;
pub mod model;
pub mod svr;
mod linalg;

pub use error::{Error, Result};
