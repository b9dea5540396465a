//! Domain types shared by every other module: market parameters, preferences,
//! portfolio bounds, game and auxiliary states, time grids and piecewise-constant
//! controls, plus the CARA utility.
//!
//! Units: prices and wealth are dimensionless price units, holdings are shares,
//! time is in years. The risk-free rate is zero throughout.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};

/// One of the two large investors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Investor {
    One,
    Two,
}

impl Investor {
    pub const BOTH: [Investor; 2] = [Investor::One, Investor::Two];

    pub fn opponent(self) -> Investor {
        match self {
            Investor::One => Investor::Two,
            Investor::Two => Investor::One,
        }
    }

    /// 0 for investor one, 1 for investor two.
    pub fn index(self) -> usize {
        match self {
            Investor::One => 0,
            Investor::Two => 1,
        }
    }

    pub fn from_number(n: u8) -> Option<Investor> {
        match n {
            1 => Some(Investor::One),
            2 => Some(Investor::Two),
            _ => None,
        }
    }

    pub fn number(self) -> u8 {
        self.index() as u8 + 1
    }
}

impl fmt::Display for Investor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "investor {}", self.number())
    }
}

type PriceFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Local volatility σ(S).
#[derive(Clone)]
pub enum VolatilitySpec {
    Constant {
        sigma: f64,
    },
    /// An opaque σ(·) with declared sup-norm and Lipschitz bounds. The bounds are
    /// only checked by sampling on a probe grid.
    BoundedLipschitz {
        evaluator: PriceFn,
        declared_bound: f64,
        declared_lipschitz: f64,
    },
}

impl VolatilitySpec {
    pub fn constant(sigma: f64) -> Self {
        VolatilitySpec::Constant { sigma }
    }

    pub fn bounded_lipschitz(
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        declared_bound: f64,
        declared_lipschitz: f64,
    ) -> Self {
        VolatilitySpec::BoundedLipschitz {
            evaluator: Arc::new(f),
            declared_bound,
            declared_lipschitz,
        }
    }

    #[inline]
    pub fn at(&self, price: f64) -> f64 {
        match self {
            VolatilitySpec::Constant { sigma } => *sigma,
            VolatilitySpec::BoundedLipschitz { evaluator, .. } => evaluator(price),
        }
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self {
            VolatilitySpec::Constant { sigma } => Some(*sigma),
            VolatilitySpec::BoundedLipschitz { .. } => None,
        }
    }

    /// Probe |σ| against the declared bound and difference quotients against the
    /// declared Lipschitz constant on `n` equally spaced points of `[lo, hi]`.
    pub fn probe(&self, lo: f64, hi: f64, n: usize) -> Vec<Violation> {
        let mut out = Vec::new();
        match self {
            VolatilitySpec::Constant { sigma } => {
                if !(sigma.is_finite() && *sigma > 0.0) {
                    out.push(Violation::new("sigma", format!("must be positive, got {sigma}")));
                }
            }
            VolatilitySpec::BoundedLipschitz {
                evaluator,
                declared_bound,
                declared_lipschitz,
            } => {
                if !(*declared_bound > 0.0) {
                    out.push(Violation::new("sigma.declared_bound", "must be positive"));
                }
                if !(*declared_lipschitz > 0.0) {
                    out.push(Violation::new("sigma.declared_lipschitz", "must be positive"));
                }
                let n = n.max(2);
                let h = (hi - lo) / (n - 1) as f64;
                let mut prev: Option<(f64, f64)> = None;
                for k in 0..n {
                    let p = lo + h * k as f64;
                    let v = evaluator(p);
                    if !v.is_finite() || v.abs() > *declared_bound {
                        out.push(Violation::new(
                            "sigma",
                            format!("|sigma({p})| = {v} exceeds declared bound {declared_bound}"),
                        ));
                        break;
                    }
                    if let Some((pp, pv)) = prev {
                        let q = (v - pv).abs() / (p - pp);
                        // small slack for rounding in the quotient itself
                        if q > declared_lipschitz * (1.0 + 1e-9) {
                            out.push(Violation::new(
                                "sigma",
                                format!(
                                    "difference quotient {q} near {p} exceeds declared Lipschitz constant {declared_lipschitz}"
                                ),
                            ));
                            break;
                        }
                    }
                    prev = Some((p, v));
                }
            }
        }
        out
    }
}

impl fmt::Debug for VolatilitySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VolatilitySpec::Constant { sigma } => f.debug_struct("Constant").field("sigma", sigma).finish(),
            VolatilitySpec::BoundedLipschitz {
                declared_bound,
                declared_lipschitz,
                ..
            } => f
                .debug_struct("BoundedLipschitz")
                .field("declared_bound", declared_bound)
                .field("declared_lipschitz", declared_lipschitz)
                .finish_non_exhaustive(),
        }
    }
}

impl PartialEq for VolatilitySpec {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (VolatilitySpec::Constant { sigma: a }, VolatilitySpec::Constant { sigma: b }) => a == b,
            (
                VolatilitySpec::BoundedLipschitz {
                    evaluator: ea,
                    declared_bound: ba,
                    declared_lipschitz: la,
                },
                VolatilitySpec::BoundedLipschitz {
                    evaluator: eb,
                    declared_bound: bb,
                    declared_lipschitz: lb,
                },
            ) => Arc::ptr_eq(ea, eb) && ba == bb && la == lb,
            _ => false,
        }
    }
}

/// Exogenous market data of the game.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketParams {
    pub theta_1: f64,
    pub theta_2: f64,
    pub vol: VolatilitySpec,
    /// Start time s.
    pub start: f64,
    /// Horizon T.
    pub horizon: f64,
    pub s0: f64,
    pub w1_0: f64,
    pub w2_0: f64,
    pub pi1_0: f64,
    pub pi2_0: f64,
}

/// Absolute risk aversions of the CARA utilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Preferences {
    pub delta_1: f64,
    pub delta_2: f64,
}

/// The compact holding set Δ = [pi_lo, pi_hi] of the auxiliary problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ControlBounds {
    pub pi_lo: f64,
    pub pi_hi: f64,
}

impl ControlBounds {
    pub fn new(pi_lo: f64, pi_hi: f64) -> Self {
        Self { pi_lo, pi_hi }
    }

    pub fn symmetric(half_width: f64) -> Self {
        Self::new(-half_width, half_width)
    }

    #[inline]
    pub fn clamp(&self, pi: f64) -> f64 {
        pi.max(self.pi_lo).min(self.pi_hi)
    }

    #[inline]
    pub fn contains(&self, pi: f64) -> bool {
        pi >= self.pi_lo && pi <= self.pi_hi
    }
}

/// One failed invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub field: String,
    pub reason: String,
}

impl Violation {
    pub fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

/// A scenario whose invariants have all been checked. Only [`validate_market`]
/// constructs one.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    params: MarketParams,
    prefs: Preferences,
    bounds: ControlBounds,
}

/// Check every type invariant of the bundle; collects all violations.
pub fn validate_market(params: MarketParams, prefs: Preferences, bounds: ControlBounds) -> Result<Scenario> {
    let mut v = Vec::new();
    let positive = |name: &str, x: f64, v: &mut Vec<Violation>| {
        if !(x.is_finite() && x > 0.0) {
            v.push(Violation::new(name, format!("must be positive and finite, got {x}")));
        }
    };
    positive("theta_1", params.theta_1, &mut v);
    positive("theta_2", params.theta_2, &mut v);
    positive("delta_1", prefs.delta_1, &mut v);
    positive("delta_2", prefs.delta_2, &mut v);

    if !(params.start.is_finite() && params.start >= 0.0) {
        v.push(Violation::new(
            "s",
            format!("start time must be >= 0, got {}", params.start),
        ));
    }
    if !(params.horizon.is_finite() && params.horizon > params.start) {
        v.push(Violation::new(
            "T",
            format!(
                "horizon must be finite and > s, got T={} s={}",
                params.horizon, params.start
            ),
        ));
    }
    for (name, x) in [
        ("S0", params.s0),
        ("W1_0", params.w1_0),
        ("W2_0", params.w2_0),
        ("pi1_0", params.pi1_0),
        ("pi2_0", params.pi2_0),
    ] {
        if !x.is_finite() {
            v.push(Violation::new(name, "must be finite"));
        }
    }

    if !(bounds.pi_lo.is_finite() && bounds.pi_lo <= 0.0) {
        v.push(Violation::new(
            "pi_lo",
            format!("0 must lie in [pi_lo, pi_hi], got pi_lo={}", bounds.pi_lo),
        ));
    }
    if !(bounds.pi_hi.is_finite() && bounds.pi_hi >= 0.0) {
        v.push(Violation::new(
            "pi_hi",
            format!("0 must lie in [pi_lo, pi_hi], got pi_hi={}", bounds.pi_hi),
        ));
    }
    if bounds.pi_lo == bounds.pi_hi {
        v.push(Violation::new("pi_hi", "zero-width holding set is not supported"));
    }

    let half = 10.0 * (1.0 + params.s0.abs());
    v.extend(params.vol.probe(params.s0 - half, params.s0 + half, 2001));

    if v.is_empty() {
        Ok(Scenario { params, prefs, bounds })
    } else {
        Err(Error::Invalid(v))
    }
}

impl Scenario {
    pub fn params(&self) -> &MarketParams {
        &self.params
    }

    pub fn prefs(&self) -> &Preferences {
        &self.prefs
    }

    pub fn bounds(&self) -> &ControlBounds {
        &self.bounds
    }

    pub fn into_parts(self) -> (MarketParams, Preferences, ControlBounds) {
        (self.params, self.prefs, self.bounds)
    }

    pub fn theta(&self, who: Investor) -> f64 {
        match who {
            Investor::One => self.params.theta_1,
            Investor::Two => self.params.theta_2,
        }
    }

    pub fn delta(&self, who: Investor) -> f64 {
        match who {
            Investor::One => self.prefs.delta_1,
            Investor::Two => self.prefs.delta_2,
        }
    }

    pub fn initial_holding(&self, who: Investor) -> f64 {
        match who {
            Investor::One => self.params.pi1_0,
            Investor::Two => self.params.pi2_0,
        }
    }

    pub fn initial_wealth(&self, who: Investor) -> f64 {
        match who {
            Investor::One => self.params.w1_0,
            Investor::Two => self.params.w2_0,
        }
    }

    #[inline]
    pub fn sigma(&self, price: f64) -> f64 {
        self.params.vol.at(price)
    }

    pub fn start(&self) -> f64 {
        self.params.start
    }

    pub fn horizon(&self) -> f64 {
        self.params.horizon
    }

    pub fn duration(&self) -> f64 {
        self.params.horizon - self.params.start
    }

    pub fn initial_state(&self) -> GameState {
        GameState {
            s: self.params.s0,
            pi_1: self.params.pi1_0,
            pi_2: self.params.pi2_0,
            w_1: self.params.w1_0,
            w_2: self.params.w2_0,
        }
    }

    /// Uniform grid from s to T.
    pub fn grid(&self, n_steps: usize) -> TimeGrid {
        TimeGrid::uniform(self.params.start, self.params.horizon, n_steps)
    }

    /// A copy with different initial holdings (revalidation is unnecessary: holdings
    /// only need to be finite).
    pub fn with_initial_holdings(&self, pi1_0: f64, pi2_0: f64) -> Result<Scenario> {
        let mut params = self.params.clone();
        params.pi1_0 = pi1_0;
        params.pi2_0 = pi2_0;
        validate_market(params, self.prefs, self.bounds)
    }

    /// Swap the labels of the two investors.
    pub fn swapped(&self) -> Scenario {
        let p = &self.params;
        Scenario {
            params: MarketParams {
                theta_1: p.theta_2,
                theta_2: p.theta_1,
                vol: p.vol.clone(),
                start: p.start,
                horizon: p.horizon,
                s0: p.s0,
                w1_0: p.w2_0,
                w2_0: p.w1_0,
                pi1_0: p.pi2_0,
                pi2_0: p.pi1_0,
            },
            prefs: Preferences {
                delta_1: self.prefs.delta_2,
                delta_2: self.prefs.delta_1,
            },
            bounds: self.bounds,
        }
    }
}

/// Y = (S, π¹, π², W¹, W²) in absolute (investor-labelled) coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GameState {
    pub s: f64,
    pub pi_1: f64,
    pub pi_2: f64,
    pub w_1: f64,
    pub w_2: f64,
}

impl GameState {
    /// The investor-relative vector Yⁱ = (S, πⁱ, π⁻ⁱ, Wⁱ, W⁻ⁱ).
    #[inline]
    pub fn relative(&self, who: Investor) -> [f64; 5] {
        match who {
            Investor::One => [self.s, self.pi_1, self.pi_2, self.w_1, self.w_2],
            Investor::Two => [self.s, self.pi_2, self.pi_1, self.w_2, self.w_1],
        }
    }

    #[inline]
    pub fn from_relative(who: Investor, y: [f64; 5]) -> GameState {
        match who {
            Investor::One => GameState {
                s: y[0],
                pi_1: y[1],
                pi_2: y[2],
                w_1: y[3],
                w_2: y[4],
            },
            Investor::Two => GameState {
                s: y[0],
                pi_1: y[2],
                pi_2: y[1],
                w_1: y[4],
                w_2: y[3],
            },
        }
    }

    pub fn holding(&self, who: Investor) -> f64 {
        match who {
            Investor::One => self.pi_1,
            Investor::Two => self.pi_2,
        }
    }

    pub fn wealth(&self, who: Investor) -> f64 {
        match who {
            Investor::One => self.w_1,
            Investor::Two => self.w_2,
        }
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.s, self.pi_1, self.pi_2, self.w_1, self.w_2]
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.as_array().iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }
}

/// Zⁱ = (Pⁱ, π⁻ⁱ, wⁱ, w⁻ⁱ). The abridged state Γⁱ has the same shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AuxState {
    pub p: f64,
    pub pi_opp: f64,
    pub w_own: f64,
    pub w_opp: f64,
}

impl AuxState {
    pub fn as_array(&self) -> [f64; 4] {
        [self.p, self.pi_opp, self.w_own, self.w_opp]
    }

    pub fn from_array(z: [f64; 4]) -> Self {
        AuxState {
            p: z[0],
            pi_opp: z[1],
            w_own: z[2],
            w_opp: z[3],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|x| x.is_finite())
    }

    /// Drop the own holding from a game state (no flow applied).
    pub fn dropping_own(y: &GameState, who: Investor) -> AuxState {
        let r = y.relative(who);
        AuxState {
            p: r[0],
            pi_opp: r[2],
            w_own: r[3],
            w_opp: r[4],
        }
    }
}

/// Strictly increasing time nodes from s to T. Clones share storage.
#[derive(Debug, Clone)]
pub struct TimeGrid {
    nodes: Arc<[f64]>,
}

impl TimeGrid {
    pub fn uniform(start: f64, end: f64, n_steps: usize) -> TimeGrid {
        assert!(n_steps >= 1, "a grid needs at least one step");
        assert!(end > start, "grid end must exceed start");
        let span = end - start;
        let mut nodes: Vec<f64> = (0..=n_steps)
            .map(|k| start + span * (k as f64) / (n_steps as f64))
            .collect();
        nodes[n_steps] = end;
        TimeGrid { nodes: nodes.into() }
    }

    pub fn from_nodes(nodes: Vec<f64>) -> Result<TimeGrid> {
        if nodes.len() < 2 {
            return Err(Error::BadParams("a grid needs at least two nodes".into()));
        }
        if nodes.iter().any(|t| !t.is_finite()) || nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::BadParams(
                "grid nodes must be finite and strictly increasing".into(),
            ));
        }
        Ok(TimeGrid { nodes: nodes.into() })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn n_steps(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn start(&self) -> f64 {
        self.nodes[0]
    }

    pub fn end(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    #[inline]
    pub fn dt(&self, k: usize) -> f64 {
        self.nodes[k + 1] - self.nodes[k]
    }

    /// Index of the interval (t_k, t_{k+1}] containing t; t = t_0 maps to 0.
    pub fn interval_of(&self, t: f64) -> Option<usize> {
        if t < self.start() || t > self.end() {
            return None;
        }
        let k = self.nodes.partition_point(|&x| x < t);
        Some(k.saturating_sub(1).min(self.n_steps() - 1))
    }

    /// Every `factor` consecutive steps merged into one.
    pub fn coarsened(&self, factor: usize) -> Result<TimeGrid> {
        if factor == 0 || !self.n_steps().is_multiple_of(factor) {
            return Err(Error::GridMismatch(format!(
                "cannot coarsen {} steps by a factor of {factor}",
                self.n_steps()
            )));
        }
        let nodes: Vec<f64> = self.nodes.iter().step_by(factor).copied().collect();
        TimeGrid::from_nodes(nodes)
    }

    pub fn same_as(&self, other: &TimeGrid) -> bool {
        Arc::ptr_eq(&self.nodes, &other.nodes) || self.nodes[..] == other.nodes[..]
    }
}

impl PartialEq for TimeGrid {
    fn eq(&self, other: &Self) -> bool {
        self.same_as(other)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ControlKind {
    /// A trading rate x (dπ = −x dt).
    TradingRate,
    /// An auxiliary holding π ∈ Δ.
    AuxHolding,
}

/// A control that is constant on each grid interval (t_k, t_{k+1}].
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseControl {
    grid: TimeGrid,
    values: Vec<f64>,
    kind: ControlKind,
}

impl PiecewiseControl {
    pub fn new(grid: TimeGrid, values: Vec<f64>, kind: ControlKind) -> Result<Self> {
        if values.len() != grid.n_steps() {
            return Err(Error::GridMismatch(format!(
                "control has {} values for a grid of {} steps",
                values.len(),
                grid.n_steps()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::BadParams(format!("control value at interval {k} is not finite")));
        }
        Ok(Self { grid, values, kind })
    }

    pub fn rate(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        Self::new(grid, values, ControlKind::TradingRate)
    }

    /// An auxiliary holding control, rejected if any value leaves Δ.
    pub fn holding(grid: TimeGrid, values: Vec<f64>, bounds: &ControlBounds) -> Result<Self> {
        let c = Self::new(grid, values, ControlKind::AuxHolding)?;
        c.check_bounds(bounds)?;
        Ok(c)
    }

    pub fn zero(grid: TimeGrid, kind: ControlKind) -> Self {
        let n = grid.n_steps();
        Self {
            grid,
            values: vec![0.0; n],
            kind,
        }
    }

    pub fn constant(grid: TimeGrid, value: f64, kind: ControlKind) -> Self {
        let n = grid.n_steps();
        Self {
            grid,
            values: vec![value; n],
            kind,
        }
    }

    /// Sample `f` at the left node of every interval.
    pub fn from_fn(grid: TimeGrid, kind: ControlKind, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.nodes()[..grid.n_steps()].iter().map(|&t| f(t)).collect();
        Self { grid, values, kind }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn kind(&self) -> ControlKind {
        self.kind
    }

    #[inline]
    pub fn value(&self, k: usize) -> f64 {
        self.values[k]
    }

    pub fn at(&self, t: f64) -> Option<f64> {
        self.grid.interval_of(t).map(|k| self.values[k])
    }

    pub fn check_bounds(&self, bounds: &ControlBounds) -> Result<()> {
        if self.kind == ControlKind::AuxHolding {
            if let Some((index, &value)) = self.values.iter().enumerate().find(|(_, v)| !bounds.contains(**v)) {
                return Err(Error::BoundsViolation {
                    index,
                    value,
                    lo: bounds.pi_lo,
                    hi: bounds.pi_hi,
                });
            }
        }
        Ok(())
    }

    /// Σ x_k Δt_k.
    pub fn integral(&self) -> f64 {
        self.values.iter().enumerate().map(|(k, v)| v * self.grid.dt(k)).sum()
    }

    pub fn require_grid(&self, grid: &TimeGrid, what: &str) -> Result<()> {
        if self.grid.same_as(grid) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!("{what} is not on the expected grid")))
        }
    }
}

/// u(w) = −exp(−δw)/δ.
pub fn cara_utility(w: f64, delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::NonPositiveDelta(delta));
    }
    Ok(cara(w, delta))
}

#[inline]
pub(crate) fn cara(w: f64, delta: f64) -> f64 {
    -(-delta * w).exp() / delta
}
