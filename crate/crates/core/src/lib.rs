//! Nonlocal Cahn-Hilliard-Navier-Stokes on a rectangle with a logarithmic
//! potential, its polynomial regularization and the diagnostics used to
//! check the discrete energy structure.

pub mod ch;
pub mod config;
pub mod diagnostics;
pub mod grid;
pub mod io;
pub mod kernel;
pub mod ns;
pub mod potential;
pub mod run;
pub mod solver;
