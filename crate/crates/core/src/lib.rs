//! Two-investor trading game with permanent linear price impact.
//!
//! Each investor trades a risky asset at a rate that moves the price
//! linearly. The crate simulates the game, reduces each investor's singular
//! control problem to a classical one on the flow quotient, computes best
//! responses and the closed-form Markov-Nash equilibrium under constant
//! volatility, and checks the theory by brute force.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod arbitrage;
pub mod bestresponse;
pub mod dynamics;
pub mod equilibrium;
pub mod error;
pub mod flow;
pub mod model;
pub mod ode;
pub mod oracle;

pub use error::{Error, Result};
pub use model::{
    cara_utility, validate_market, AuxState, ControlBounds, ControlKind, GameState, Investor, MarketParams,
    PiecewiseControl, Preferences, Scenario, TimeGrid, Violation, VolatilitySpec,
};
