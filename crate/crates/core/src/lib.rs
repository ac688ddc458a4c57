pub mod bounds;
pub mod error;
pub mod exact;
pub mod milp;
pub mod model;
pub mod petals;
pub mod placement;
pub mod routing;
pub mod scenario;
pub mod sim;
pub mod topology;

pub use error::{Error, Result};
