pub mod electrodes;
pub mod error;
pub mod imaging;
pub mod io;
pub mod plot;
pub mod scan;
pub mod scene;
pub mod sensor;
pub mod solver;

pub use error::{Error, ErrorKind, Result};
