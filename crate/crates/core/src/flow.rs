//! The integral flow φⁱ generated by the own-control drift bⁱ:
//! ∂φ/∂q = bⁱ(φ), φ(0, y) = y.
//!
//! bⁱ is affine in the state, so the flow has a closed form. Moving along the
//! flow by q is an instantaneous, frictionless sale of q shares: the holding
//! drops by q, the price by θⁱq, and both marked-to-market wealths adjust.
//! All states here are in absolute coordinates; the investor index picks which
//! holding and wealth are "own".

use serde::Serialize;

use crate::dynamics::own_drift;
use crate::model::{AuxState, GameState, Investor};
use crate::ode::rk4;

/// Flow parameter together with the impact coefficient of the moving investor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlowParam {
    pub q: f64,
    pub theta_own: f64,
}

/// φⁱ(q, y) in closed form.
pub fn flow_full(q: f64, y: &GameState, who: Investor, theta_own: f64) -> GameState {
    let [s, pi, pi_opp, w, w_opp] = y.relative(who);
    let moved = [
        s - theta_own * q,
        pi - q,
        pi_opp,
        w - theta_own * (pi * q - 0.5 * q * q),
        w_opp - theta_own * pi_opp * q,
    ];
    GameState::from_relative(who, moved)
}

/// The flow on the abridged 4-dimensional state. The own holding πⁱ enters
/// the own-wealth coordinate and must be supplied separately.
pub fn flow_abridged(q: f64, z: &AuxState, own_holding: f64, theta_own: f64) -> AuxState {
    AuxState {
        p: z.p - theta_own * q,
        pi_opp: z.pi_opp,
        w_own: z.w_own - theta_own * own_holding * q + 0.5 * theta_own * q * q,
        w_opp: z.w_opp - theta_own * z.pi_opp * q,
    }
}

/// D₂φⁱ(q, ·) in investor-relative coordinates (S, πⁱ, π⁻ⁱ, Wⁱ, W⁻ⁱ).
///
/// The Jacobian B of bⁱ is constant with B² = 0, so exp(qB) = I + qB exactly
/// and the second derivative of the flow in the state vanishes.
pub fn flow_jacobian(q: f64, theta_own: f64) -> [[f64; 5]; 5] {
    let b = drift_jacobian(theta_own);
    let mut m = [[0.0; 5]; 5];
    for i in 0..5 {
        for j in 0..5 {
            m[i][j] = if i == j { 1.0 } else { 0.0 } + q * b[i][j];
        }
    }
    m
}

/// Constant Jacobian of bⁱ(y) = (−θⁱ, −1, 0, −θⁱπⁱ, −θⁱπ⁻ⁱ).
pub fn drift_jacobian(theta_own: f64) -> [[f64; 5]; 5] {
    let mut b = [[0.0; 5]; 5];
    b[3][1] = -theta_own;
    b[4][2] = -theta_own;
    b
}

/// Integrate the flow ODE numerically with fixed-step RK4 from 0 to q.
/// Independent of the closed form; used to cross-check it.
pub fn flow_ode_oracle(q: f64, y: &GameState, who: Investor, theta_own: f64, n_steps: usize) -> GameState {
    let end = rk4(
        |_, v: &[f64; 5]| own_drift(v, theta_own),
        y.relative(who),
        0.0,
        q,
        n_steps,
    );
    GameState::from_relative(who, end)
}

/// Auxiliary coordinates: P = S − θⁱπⁱ, wⁱ = Wⁱ − θⁱ(πⁱ)²/2,
/// w⁻ⁱ = W⁻ⁱ − θⁱπ⁻ⁱπⁱ. Equals the flow that liquidates the own holding,
/// with the (now zero) holding dropped.
pub fn aux_coords(y: &GameState, who: Investor, theta_own: f64) -> AuxState {
    let [s, pi, pi_opp, w, w_opp] = y.relative(who);
    AuxState {
        p: s - theta_own * pi,
        pi_opp,
        w_own: w - 0.5 * theta_own * pi * pi,
        w_opp: w_opp - theta_own * pi_opp * pi,
    }
}

/// Inverse of [`aux_coords`] for a given own holding.
pub fn from_aux_coords(z: &AuxState, own_holding: f64, who: Investor, theta_own: f64) -> GameState {
    let pi = own_holding;
    GameState::from_relative(
        who,
        [
            z.p + theta_own * pi,
            pi,
            z.pi_opp,
            z.w_own + 0.5 * theta_own * pi * pi,
            z.w_opp + theta_own * z.pi_opp * pi,
        ],
    )
}
