//! Exact evaluation of two-arm binary Bayesian response-adaptive randomization
//! with a burn-in period.

pub mod coefficients;
pub mod error;
pub mod oc;
pub mod group_sequential;
pub mod mc;
pub mod policy;
pub mod posterior;
pub mod quadrature;
pub mod special;
pub mod state_space;
pub mod sweep;

pub use error::{Error, Result};
pub use posterior::{BetaPrior, StatisticKind};
pub use state_space::{StageLayout, TrialState};
pub use policy::{DesignSpec, PolicyTable};
