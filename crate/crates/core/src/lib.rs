//! Feature expansive reward learning on a simulated 7-DoF arm.

pub mod arm;
pub mod error;
pub mod experiment;
pub mod eval;
pub mod gt;
pub mod ik;
pub mod io;
pub mod learner;
pub mod meirl;
pub mod nn;
pub mod planner;
pub mod reward;
pub mod scene;
pub mod state;
pub mod teacher;
pub mod traces;

pub use error::{FerlError, Result};
