pub mod baselines;
pub mod bundling;
pub mod canonical;
pub mod demand;
pub mod error;
pub mod market;
pub mod numerics;
pub mod par;
pub mod rational;
pub mod scalar;
pub mod solver_agents;
pub mod solver_goods;
pub mod verify;

pub use error::{Error, Result};
pub use market::{Market, RawMarket};
pub use rational::Q;
pub use scalar::{Interval, Scalar};
