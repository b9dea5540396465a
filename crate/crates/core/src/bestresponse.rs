//! Optimal auxiliary holding, its region classification and the induced
//! best-response trading path.
//!
//! Against an opponent trading at rate x⁻ⁱ the optimal auxiliary holding is
//!
//! ```text
//! πⁱ* = π̲ ∨ ( −θ⁻ⁱ x⁻ⁱ / (δⁱ σ²(P + θⁱπⁱ*)) ∧ π̄ )
//! ```
//!
//! which is explicit for constant σ and a scalar fixed-point problem otherwise.
//! The best response in the original game trades at xⁱ* = −dπⁱ*/dt after an
//! initial block trade from πⁱ_{s−} = 0 to πⁱ*_s.

use std::io::{self, Write};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ControlKind, Investor, PiecewiseControl, Scenario};

const DAMPING: f64 = 0.5;
const FIXED_POINT_TOL: f64 = 1e-10;
const FIXED_POINT_MAX_ITER: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum RegionLabel {
    /// Unclamped target at or above π̄: aggressive buying, holding pinned at π̄.
    ContinuationUpper,
    /// Unclamped target at or below π̲.
    ContinuationLower,
    Control,
}

impl RegionLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            RegionLabel::ContinuationUpper => "continuation_upper",
            RegionLabel::ContinuationLower => "continuation_lower",
            RegionLabel::Control => "control",
        }
    }
}

/// Unclamped target −θ⁻ⁱx⁻ⁱ / (δⁱσ²) at volatility `sigma`.
fn target(x_opp: f64, sigma: f64, who: Investor, scenario: &Scenario) -> f64 {
    if x_opp == 0.0 {
        return 0.0;
    }
    -scenario.theta(who.opponent()) * x_opp / (scenario.delta(who) * sigma * sigma)
}

/// Solve π = clamp(target(σ(P + θπ))) and return (π, unclamped target at π).
fn solve(x_opp: f64, p: f64, scenario: &Scenario, who: Investor) -> Result<(f64, f64)> {
    let bounds = scenario.bounds();
    let theta = scenario.theta(who);
    if let Some(sigma) = scenario.params().vol.as_constant() {
        let t = target(x_opp, sigma, who, scenario);
        return Ok((bounds.clamp(t), t));
    }
    let raw = |pi: f64| target(x_opp, scenario.sigma(p + theta * pi), who, scenario);
    let g = |pi: f64| bounds.clamp(raw(pi));

    let mut pi = g(0.0);
    for _ in 0..FIXED_POINT_MAX_ITER {
        let next = (1.0 - DAMPING) * pi + DAMPING * g(pi);
        if (next - pi).abs() <= FIXED_POINT_TOL * (1.0 + pi.abs()) {
            return Ok((next, raw(next)));
        }
        pi = next;
    }

    // h(π) = π − g(π) is ≤ 0 at π̲ and ≥ 0 at π̄ because g maps into the bounds
    let h = |pi: f64| pi - g(pi);
    let (mut lo, mut hi) = (bounds.pi_lo, bounds.pi_hi);
    if h(lo) >= 0.0 {
        return Ok((lo, raw(lo)));
    }
    if h(hi) <= 0.0 {
        return Ok((hi, raw(hi)));
    }
    for _ in 0..FIXED_POINT_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        if h(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= FIXED_POINT_TOL * (1.0 + mid.abs()) {
            break;
        }
    }
    let mid = 0.5 * (lo + hi);
    if h(mid).abs() <= 1e-8 * (1.0 + mid.abs()) {
        Ok((mid, raw(mid)))
    } else {
        // g jumps across the bracket; no fixed point to report
        Err(Error::FixedPointDivergence {
            iterations: 2 * FIXED_POINT_MAX_ITER,
        })
    }
}

/// The optimal auxiliary holding at auxiliary price `p` against opponent rate `x_opp`.
pub fn optimal_aux_pointwise(x_opp: f64, p: f64, scenario: &Scenario, who: Investor) -> Result<f64> {
    solve(x_opp, p, scenario, who).map(|(pi, _)| pi)
}

pub fn classify_region(x_opp: f64, p: f64, scenario: &Scenario, who: Investor) -> Result<RegionLabel> {
    let (_, t) = solve(x_opp, p, scenario, who)?;
    Ok(label(t, scenario))
}

fn label(t: f64, scenario: &Scenario) -> RegionLabel {
    let b = scenario.bounds();
    if t >= b.pi_hi {
        RegionLabel::ContinuationUpper
    } else if t <= b.pi_lo {
        RegionLabel::ContinuationLower
    } else {
        RegionLabel::Control
    }
}

/// Auxiliary price used when σ depends on the price.
#[derive(Debug, Clone, Default)]
pub enum PriceProxy {
    /// Only valid for constant σ, where the price does not enter.
    #[default]
    None,
    /// Deterministic auxiliary price at each grid node (n_steps + 1 values).
    Path(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum RegularityWarning {
    /// The holding sits on a bound on these intervals; the rate path need not
    /// be absolutely continuous there.
    TouchesBounds { intervals: Vec<usize> },
}

#[derive(Debug, Clone)]
pub struct BestResponse {
    /// πⁱ* at every grid node, including T.
    pub pi_nodes: Vec<f64>,
    pub pi_path: PiecewiseControl,
    pub rate_path: PiecewiseControl,
    /// πⁱ*_s − πⁱ_{s−} with πⁱ_{s−} = 0.
    pub initial_jump: f64,
    pub regions: Vec<RegionLabel>,
    pub warnings: Vec<RegularityWarning>,
}

/// Best response of `who` to the opponent's rate path, on the opponent's grid.
pub fn best_response_path(
    scenario: &Scenario,
    who: Investor,
    x_opp: &PiecewiseControl,
    price: &PriceProxy,
) -> Result<BestResponse> {
    let grid = x_opp.grid();
    let n = grid.n_steps();
    let constant = scenario.params().vol.as_constant().is_some();
    let prices: Vec<f64> = match price {
        PriceProxy::Path(p) => {
            if p.len() != n + 1 {
                return Err(Error::GridMismatch(format!(
                    "price proxy has {} values, grid has {} nodes",
                    p.len(),
                    n + 1
                )));
            }
            p.clone()
        }
        PriceProxy::None if constant => vec![0.0; n + 1],
        PriceProxy::None => return Err(Error::NonConstantVolatility),
    };

    let mut pi_nodes = Vec::with_capacity(n + 1);
    let mut regions = Vec::with_capacity(n + 1);
    for (k, &p) in prices.iter().enumerate() {
        // the control is left-continuous in time: T belongs to the last interval
        let x = x_opp.value(k.min(n - 1));
        let (pi, t) = solve(x, p, scenario, who)?;
        pi_nodes.push(pi);
        regions.push(label(t, scenario));
    }

    let mut rates = Vec::with_capacity(n);
    for k in 0..n {
        // the last interval reuses the backward difference: x_opp(T) is not
        // an independent value, so a forward difference there would be spurious
        let j = if k + 1 == n && n > 1 { k - 1 } else { k };
        // + 0.0 turns −0 into 0 so dumps of flat paths read cleanly
        rates.push(-(pi_nodes[j + 1] - pi_nodes[j]) / grid.dt(j) + 0.0);
    }

    let b = scenario.bounds();
    let touching: Vec<usize> = (0..n)
        .filter(|&k| pi_nodes[k] == b.pi_lo || pi_nodes[k] == b.pi_hi)
        .collect();
    let warnings = if touching.is_empty() {
        Vec::new()
    } else {
        vec![RegularityWarning::TouchesBounds { intervals: touching }]
    };

    Ok(BestResponse {
        pi_path: PiecewiseControl::new(grid.clone(), pi_nodes[..n].to_vec(), ControlKind::AuxHolding)?,
        rate_path: PiecewiseControl::new(grid.clone(), rates, ControlKind::TradingRate)?,
        initial_jump: pi_nodes[0],
        pi_nodes,
        regions,
        warnings,
    })
}

/// CSV dump `t,pi_star,x_star,region` over the grid nodes.
pub fn write_best_response_csv<W: Write>(mut out: W, br: &BestResponse) -> io::Result<()> {
    writeln!(out, "t,pi_star,x_star,region")?;
    let grid = br.pi_path.grid();
    let n = grid.n_steps();
    for (k, t) in grid.nodes().iter().enumerate() {
        writeln!(
            out,
            "{},{},{},{}",
            t,
            br.pi_nodes[k],
            br.rate_path.value(k.min(n - 1)),
            br.regions[k].as_str()
        )?;
    }
    Ok(())
}
