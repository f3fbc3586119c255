pub mod classes;
pub mod dsl;
pub mod io;
pub mod mask;
pub mod metrics;
pub mod planner;
pub mod plot;
pub mod raster;
