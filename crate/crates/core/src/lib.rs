pub mod confinement;
pub mod forcing;
pub mod io;
pub mod rearranger;
pub mod series;
pub mod subspace;
pub mod verify;
mod vecops;
