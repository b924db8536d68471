//! Random compositions of Liverani–Saussol–Vaienti maps: fibre orbits,
//! inducing on `[1/2, 1]`, return-time tails, the annealed transfer operator
//! and stable limit laws for induced Birkhoff sums.

pub mod chain;
pub mod ensemble;
pub mod error;
pub mod limits;
pub mod map;
pub mod markov;
pub mod orbit;
pub mod params;
pub mod quad;
pub mod stats;
pub mod tails;
pub mod ulam;

pub use error::{LabError, Result};
pub use map::{Interval, MapParameter, ParamWindow};
pub use orbit::{InducedRecord, Observable, ObservableSpec};
pub use params::{ParamLaw, SeededStream};
