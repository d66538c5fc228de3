//! Low-autocorrelation binary sequences: exact energies, QAOA statevector
//! simulation, parameter schedules, classical solvers, circuit compilation
//! and error detection.

pub mod analysis;
pub mod budget;
pub mod circuit;
pub mod compiler;
pub mod errdetect;
pub mod error;
pub mod minfind;
pub mod problem;
pub mod schedules;
pub mod seeding;
pub mod solvers;
pub mod statevector;
pub mod sweep;

pub use error::{LabsError, Result};
pub use problem::{EnergyTable, ProblemInstance, SpinSequence, SymmetryAction};
pub use schedules::{FixedParams, FourierCoeffs, Objective, Schedule};
pub use statevector::{QaoaResult, QaoaSimulator, Statevector};
