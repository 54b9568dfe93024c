// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptive;
pub mod attribution;
pub mod baseline;
pub mod bias;
pub mod capture;
pub mod drift;
pub mod error;
pub mod jsonfmt;
pub mod kll;
pub mod quality;
pub mod scheduler;
pub mod seed;
pub mod sketches;
pub mod stats;
pub mod window;

pub use error::{MonitorError, Result};
