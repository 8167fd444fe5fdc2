pub mod convergence;
pub mod cli;
pub mod error;
pub mod export;
pub mod finite_n;
pub mod limit;
pub mod linalg;
pub mod model;
pub mod ode;
pub mod sim;
pub mod tracking;
