//! Closed-form deterministic Markov-Nash equilibrium under constant volatility.
//!
//! With χ = √(δ¹δ²/(θ¹θ²))·σ² and ϕ = √(δ¹θ¹/(δ²θ²)) the equilibrium holdings
//! solve the linear system
//!
//! ```text
//! dπ¹/dt = (δ²σ²/θ¹) π²,   dπ²/dt = (δ¹σ²/θ²) π¹
//! ```
//!
//! (each holding is the best response to the other's rate), so
//!
//! ```text
//! π¹(t) = π¹₀ cosh(χ(t−s)) + (π²₀/ϕ) sinh(χ(t−s))
//! π²(t) = ϕπ¹₀ sinh(χ(t−s)) + π²₀ cosh(χ(t−s))
//! ```

use std::io::{self, Write};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ControlKind, Investor, PiecewiseControl, Scenario, TimeGrid};
use crate::ode::rk4_trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CouplingConstants {
    pub chi: f64,
    pub varphi: f64,
}

pub fn coupling_constants(scenario: &Scenario) -> Result<CouplingConstants> {
    let sigma = scenario
        .params()
        .vol
        .as_constant()
        .ok_or(Error::NonConstantVolatility)?;
    let (d1, d2) = (scenario.delta(Investor::One), scenario.delta(Investor::Two));
    let (t1, t2) = (scenario.theta(Investor::One), scenario.theta(Investor::Two));
    Ok(CouplingConstants {
        chi: (d1 * d2 / (t1 * t2)).sqrt() * sigma * sigma,
        varphi: (d1 * t1 / (d2 * t2)).sqrt(),
    })
}

/// The three sufficient conditions for the closed-form equilibrium, with the
/// values they were decided on.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionsReport {
    /// ϕ ≠ 1.
    pub cond_i: bool,
    pub varphi: f64,
    /// |π¹₀| ∨ |π²₀| ≠ 0.
    pub cond_ii: bool,
    pub max_abs_initial: f64,
    /// exp(χT)((1+ϕ)|π¹₀| + (1+1/ϕ)|π²₀|) ≤ |π̄| ∧ |π̲|.
    pub cond_iii: bool,
    pub cond_iii_lhs: f64,
    pub cond_iii_rhs: f64,
}

impl ConditionsReport {
    pub fn all_hold(&self) -> bool {
        self.cond_i && self.cond_ii && self.cond_iii
    }

    /// Names of the failed conditions.
    pub fn failed(&self) -> Vec<String> {
        [
            ("cond_i", self.cond_i),
            ("cond_ii", self.cond_ii),
            ("cond_iii", self.cond_iii),
        ]
        .iter()
        .filter(|(_, ok)| !ok)
        .map(|(name, _)| name.to_string())
        .collect()
    }
}

pub fn check_conditions(scenario: &Scenario) -> Result<ConditionsReport> {
    let c = coupling_constants(scenario)?;
    let a = scenario.initial_holding(Investor::One).abs();
    let b = scenario.initial_holding(Investor::Two).abs();
    let bounds = scenario.bounds();
    let lhs = (c.chi * scenario.horizon()).exp() * ((1.0 + c.varphi) * a + (1.0 + 1.0 / c.varphi) * b);
    let rhs = bounds.pi_hi.abs().min(bounds.pi_lo.abs());
    Ok(ConditionsReport {
        cond_i: c.varphi != 1.0,
        varphi: c.varphi,
        cond_ii: a.max(b) != 0.0,
        max_abs_initial: a.max(b),
        cond_iii: lhs <= rhs,
        cond_iii_lhs: lhs,
        cond_iii_rhs: rhs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumSolution {
    pub constants: CouplingConstants,
    pub start: f64,
    pub horizon: f64,
    pub pi1_0: f64,
    pub pi2_0: f64,
    /// δ²σ²/θ¹ and δ¹σ²/θ², the coupling coefficients of the holdings ODE.
    pub ode_coefficients: [f64; 2],
    pub conditions: ConditionsReport,
}

/// The closed-form equilibrium; fails unless all three conditions hold.
pub fn nash_equilibrium(scenario: &Scenario) -> Result<EquilibriumSolution> {
    let conditions = check_conditions(scenario)?;
    if !conditions.all_hold() {
        return Err(Error::ConditionsFailed(Box::new(conditions)));
    }
    closed_form_unchecked(scenario, conditions)
}

fn closed_form_unchecked(scenario: &Scenario, conditions: ConditionsReport) -> Result<EquilibriumSolution> {
    let constants = coupling_constants(scenario)?;
    let sigma = scenario
        .params()
        .vol
        .as_constant()
        .ok_or(Error::NonConstantVolatility)?;
    let s2 = sigma * sigma;
    Ok(EquilibriumSolution {
        constants,
        start: scenario.start(),
        horizon: scenario.horizon(),
        pi1_0: scenario.initial_holding(Investor::One),
        pi2_0: scenario.initial_holding(Investor::Two),
        ode_coefficients: [
            scenario.delta(Investor::Two) * s2 / scenario.theta(Investor::One),
            scenario.delta(Investor::One) * s2 / scenario.theta(Investor::Two),
        ],
        conditions,
    })
}

impl EquilibriumSolution {
    /// (cosh, sinh) coefficients of investor `who`'s holding.
    fn coefficients(&self, who: Investor) -> (f64, f64) {
        let phi = self.constants.varphi;
        match who {
            Investor::One => (self.pi1_0, self.pi2_0 / phi),
            Investor::Two => (self.pi2_0, phi * self.pi1_0),
        }
    }

    pub fn pi(&self, who: Investor, t: f64) -> f64 {
        let u = self.constants.chi * (t - self.start);
        let (c, s) = self.coefficients(who);
        c * u.cosh() + s * u.sinh()
    }

    /// dπ/dt evaluated analytically.
    pub fn pi_dot(&self, who: Investor, t: f64) -> f64 {
        let chi = self.constants.chi;
        let u = chi * (t - self.start);
        let (c, s) = self.coefficients(who);
        chi * (c * u.sinh() + s * u.cosh())
    }

    /// Equilibrium trading rate x = −dπ/dt.
    pub fn rate(&self, who: Investor, t: f64) -> f64 {
        -self.pi_dot(who, t)
    }

    /// Block trade at s from π_{s−} = 0.
    pub fn initial_jump(&self, who: Investor) -> f64 {
        self.pi(who, self.start)
    }

    /// First zero of the holding in [s, T], if any.
    pub fn crossing_time(&self, who: Investor) -> Option<f64> {
        let (c, s) = self.coefficients(who);
        if s == 0.0 {
            return (c == 0.0).then_some(self.start);
        }
        // c cosh u + s sinh u = 0  ⇔  tanh u = −c/s
        let r = -c / s;
        if !(0.0..1.0).contains(&r) {
            return None;
        }
        let t = self.start + r.atanh() / self.constants.chi;
        (t <= self.horizon).then_some(t)
    }

    /// Holding path sampled at the left node of each interval.
    pub fn holding_control(&self, who: Investor, grid: &TimeGrid) -> PiecewiseControl {
        PiecewiseControl::from_fn(grid.clone(), ControlKind::AuxHolding, |t| self.pi(who, t))
    }

    /// Rate path sampled at the left node of each interval.
    pub fn rate_control(&self, who: Investor, grid: &TimeGrid) -> PiecewiseControl {
        PiecewiseControl::from_fn(grid.clone(), ControlKind::TradingRate, |t| self.rate(who, t))
    }

    /// max over [s, T] of |πⁱ| for both investors, on a fine uniform grid.
    pub fn max_abs_holding(&self, n: usize) -> f64 {
        let grid = TimeGrid::uniform(self.start, self.horizon, n);
        grid.nodes()
            .iter()
            .flat_map(|&t| Investor::BOTH.map(|w| self.pi(w, t).abs()))
            .fold(0.0, f64::max)
    }
}

/// Residual of the holdings ODE at t, using analytic derivatives.
pub fn ode_residual(sol: &EquilibriumSolution, t: f64) -> [f64; 2] {
    residual_with(sol, t, |who| sol.pi_dot(who, t), 1.0)
}

/// Residual of the holdings ODE at t, using centred differences with step h.
pub fn ode_residual_fd(sol: &EquilibriumSolution, t: f64, h: f64) -> [f64; 2] {
    let fd = |who| (sol.pi(who, t + h) - sol.pi(who, t - h)) / (2.0 * h);
    residual_with(sol, t, fd, 1.0)
}

/// Residual against the system with both coupling signs flipped.
pub fn ode_residual_flipped(sol: &EquilibriumSolution, t: f64) -> [f64; 2] {
    residual_with(sol, t, |who| sol.pi_dot(who, t), -1.0)
}

fn residual_with(sol: &EquilibriumSolution, t: f64, deriv: impl Fn(Investor) -> f64, sign: f64) -> [f64; 2] {
    let [k1, k2] = sol.ode_coefficients;
    [
        deriv(Investor::One) - sign * k1 * sol.pi(Investor::Two, t),
        deriv(Investor::Two) - sign * k2 * sol.pi(Investor::One, t),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TradingVolume {
    pub total: f64,
    pub per_investor: [f64; 2],
    pub initial_jumps: [f64; 2],
}

/// Shares traded by each investor: |initial jump| plus Σ|Δπ| over the grid,
/// which equals ∫|x|dt whenever π is monotone within each interval. A price
/// taker (θ = 0) would not trade at all, so the total is the excess volume.
pub fn trading_volume(sol: &EquilibriumSolution, grid: &TimeGrid) -> TradingVolume {
    let mut per = [0.0; 2];
    let mut jumps = [0.0; 2];
    for who in Investor::BOTH {
        let i = who.index();
        jumps[i] = sol.initial_jump(who).abs();
        let path: f64 = grid
            .nodes()
            .windows(2)
            .map(|w| (sol.pi(who, w[1]) - sol.pi(who, w[0])).abs())
            .sum();
        per[i] = jumps[i] + path;
    }
    TradingVolume {
        total: per[0] + per[1],
        per_investor: per,
        initial_jumps: jumps,
    }
}

/// Numerical solution of the holdings ODE with RK4. Labelled separately from
/// the closed form: it is what the artifact offers when ϕ = 1, where the
/// closed-form statement is not asserted.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NumericalEquilibrium {
    pub method: &'static str,
    pub t: Vec<f64>,
    pub pi1: Vec<f64>,
    pub pi2: Vec<f64>,
}

pub fn numerical_equilibrium(scenario: &Scenario, grid: &TimeGrid, substeps: usize) -> Result<NumericalEquilibrium> {
    let sol = closed_form_unchecked(scenario, check_conditions(scenario)?)?;
    let [k1, k2] = sol.ode_coefficients;
    let traj = rk4_trajectory(
        |_, y: &[f64; 2]| [k1 * y[1], k2 * y[0]],
        [sol.pi1_0, sol.pi2_0],
        grid.nodes(),
        substeps.max(1),
    );
    Ok(NumericalEquilibrium {
        method: "rk4 numerical integration (not closed form)",
        t: grid.nodes().to_vec(),
        pi1: traj.iter().map(|y| y[0]).collect(),
        pi2: traj.iter().map(|y| y[1]).collect(),
    })
}

/// CSV dump `t,pi1,pi2,x1,x2` at the grid nodes.
pub fn write_equilibrium_csv<W: Write>(mut out: W, sol: &EquilibriumSolution, grid: &TimeGrid) -> io::Result<()> {
    writeln!(out, "t,pi1,pi2,x1,x2")?;
    for &t in grid.nodes() {
        writeln!(
            out,
            "{},{},{},{},{}",
            t,
            sol.pi(Investor::One, t),
            sol.pi(Investor::Two, t),
            sol.rate(Investor::One, t),
            sol.rate(Investor::Two, t)
        )?;
    }
    Ok(())
}
