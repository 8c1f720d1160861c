pub mod certificate;
pub mod cli;
pub mod export;
pub mod expr;
pub mod integrator;
pub mod lyapunov;
pub mod model;
pub mod registry;
pub mod sweep;
pub mod sysfile;
