pub mod discretization;
pub mod model;
pub mod energy;
pub mod integrator;
pub mod barrier;
pub mod lab;
pub mod presets;
