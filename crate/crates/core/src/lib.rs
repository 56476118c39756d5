//! Filter-bank SPD-manifold pipeline for motor-imagery EEG classification.

pub mod classifier;
pub mod filter;
pub mod io;
pub mod layers;
pub mod random;
pub mod select;
pub mod spd;
pub mod synthetic;
pub mod train;
