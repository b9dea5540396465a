//! Round-trip trades and dynamic arbitrage.
//!
//! With a general impact function κ the price drifts by κ(x) dt, so a
//! deterministic round trip x started flat (π₀ = 0) has expected gain
//! E[∫πκ(x)dt]; the Brownian part averages out. For linear κ(x) = −θx the gain
//! is (θ/2)(π_T² − π₀²) = 0 for every round trip. Any other κ admits a round
//! trip with positive expected gain, which the constructions below find.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ControlKind, PiecewiseControl, TimeGrid};

/// Gains at or below this are treated as zero.
pub const GAIN_TOLERANCE: f64 = 1e-10;
const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Clone)]
pub enum ImpactFunction {
    /// κ(x) = −θx.
    Linear { theta: f64 },
    Custom {
        name: String,
        kappa: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    },
}

impl ImpactFunction {
    pub fn linear(theta: f64) -> Result<Self> {
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(Error::BadParams(format!("linear impact needs theta > 0, got {theta}")));
        }
        Ok(ImpactFunction::Linear { theta })
    }

    pub fn custom(name: impl Into<String>, kappa: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        ImpactFunction::Custom {
            name: name.into(),
            kappa: Arc::new(kappa),
        }
    }

    /// κ(x) = −x·|x|: selling depresses the price quadratically.
    pub fn quadratic_odd() -> Self {
        Self::custom("quadratic_odd", |x| -x * x.abs())
    }

    /// κ(x) = −θx + c.
    pub fn affine(theta: f64, c: f64) -> Self {
        Self::custom(format!("affine({theta},{c})"), move |x| -theta * x + c)
    }

    /// κ(x) = −θx for x ≠ 0 and κ(0) = c: linear in every trade, with a
    /// drift while idle.
    pub fn idle_drift(theta: f64, c: f64) -> Self {
        Self::custom(format!("idle_drift({theta},{c})"), move |x| {
            if x == 0.0 {
                c
            } else {
                -theta * x
            }
        })
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            ImpactFunction::Linear { theta } => -theta * x,
            ImpactFunction::Custom { kappa, .. } => kappa(x),
        }
    }

    pub fn name(&self) -> String {
        match self {
            ImpactFunction::Linear { theta } => format!("linear({theta})"),
            ImpactFunction::Custom { name, .. } => name.clone(),
        }
    }
}

impl fmt::Debug for ImpactFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum TripKind {
    /// −β on [0, τ̂], then α, with τ̂ = αT/(α+β).
    BuyFast,
    /// α on [0, τ], then −β, with τ = βT/(α+β).
    SellFast,
    /// α on the first half, −α on the second.
    SymmetricBlock,
    /// −α, idle, +α over thirds of the horizon: isolates κ(0).
    ThreePhase,
}

impl TripKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TripKind::BuyFast => "BuyFast",
            TripKind::SellFast => "SellFast",
            TripKind::SymmetricBlock => "SymmetricBlock",
            TripKind::ThreePhase => "ThreePhase",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundTrip {
    pub kind: TripKind,
    pub alpha: f64,
    pub beta: f64,
    pub horizon: f64,
    pub control: PiecewiseControl,
}

/// Build a round trip on [0, T] whose grid has a node at every breakpoint.
///
/// `alpha` and `beta` must be positive for the two-rate constructions;
/// SymmetricBlock and ThreePhase use only `alpha`, which may have either sign
/// to give the mirrored trade.
pub fn make_roundtrip(kind: TripKind, alpha: f64, beta: f64, horizon: f64) -> Result<RoundTrip> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::BadParams(format!("horizon must be positive, got {horizon}")));
    }
    let (nodes, values) = match kind {
        TripKind::SellFast | TripKind::BuyFast => {
            if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
                return Err(Error::BadParams(format!(
                    "rates must be positive, got ({alpha}, {beta})"
                )));
            }
            let (first, second) = if kind == TripKind::SellFast {
                (alpha, -beta)
            } else {
                (-beta, alpha)
            };
            // the first block lasts |second|·T/(α+β)
            let tau = second.abs() * horizon / (alpha + beta);
            let nodes = vec![0.0, tau, horizon];
            // close the trip exactly in floating point
            let dt1 = horizon - tau;
            let closing = -(first * tau) / dt1;
            (nodes, vec![first, closing])
        }
        TripKind::SymmetricBlock => {
            if !(alpha != 0.0 && alpha.is_finite()) {
                return Err(Error::BadParams(format!("block rate must be nonzero, got {alpha}")));
            }
            (vec![0.0, 0.5 * horizon, horizon], vec![alpha, -alpha])
        }
        TripKind::ThreePhase => {
            if !(alpha != 0.0 && alpha.is_finite()) {
                return Err(Error::BadParams(format!("probe rate must be nonzero, got {alpha}")));
            }
            let third = horizon / 3.0;
            let nodes = vec![0.0, third, horizon - third, horizon];
            (nodes, vec![-alpha, 0.0, alpha])
        }
    };
    let grid = TimeGrid::from_nodes(nodes)?;
    let control = PiecewiseControl::new(grid, values, ControlKind::TradingRate)?;
    Ok(RoundTrip {
        kind,
        alpha,
        beta,
        horizon,
        control,
    })
}

/// E[∫₀ᵀ π κ(x) dt] with π₀ = 0, integrated exactly interval by interval:
/// π is linear and κ(x) constant on each one.
pub fn expected_gain(kappa: &ImpactFunction, trip: &RoundTrip) -> f64 {
    let c = &trip.control;
    let mut pi = 0.0;
    let mut gain = 0.0;
    for k in 0..c.grid().n_steps() {
        let x = c.value(k);
        let dt = c.grid().dt(k);
        gain += kappa.eval(x) * (pi * dt - 0.5 * x * dt * dt);
        pi -= x * dt;
    }
    gain
}

/// The same integral by the trapezoid rule on `substeps` pieces per interval,
/// with π accumulated step by step. Independent of [`expected_gain`].
pub fn numeric_gain(kappa: &ImpactFunction, trip: &RoundTrip, substeps: usize) -> f64 {
    let c = &trip.control;
    let m = substeps.max(1);
    let mut pi = 0.0;
    let mut total = 0.0;
    for k in 0..c.grid().n_steps() {
        let x = c.value(k);
        let h = c.grid().dt(k) / m as f64;
        let kx = kappa.eval(x);
        let mut part = 0.0;
        for _ in 0..m {
            let next = pi - x * h;
            part += 0.5 * (pi + next) * h;
            pi = next;
        }
        total += kx * part;
    }
    total
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub kind: TripKind,
    pub alpha: f64,
    pub beta: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    NoArbitrageFound { best_gain: f64 },
    Arbitrage { witness: RoundTrip, gain: f64 },
}

/// Machine-readable form `{verdict, witness:{kind,alpha,beta,T}, gain}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerdictReport {
    pub verdict: &'static str,
    pub witness: Option<Witness>,
    pub gain: f64,
}

impl Verdict {
    pub fn is_arbitrage(&self) -> bool {
        matches!(self, Verdict::Arbitrage { .. })
    }

    pub fn report(&self) -> VerdictReport {
        match self {
            Verdict::NoArbitrageFound { best_gain } => VerdictReport {
                verdict: "no_arbitrage_found",
                witness: None,
                gain: *best_gain,
            },
            Verdict::Arbitrage { witness, gain } => VerdictReport {
                verdict: "arbitrage",
                witness: Some(Witness {
                    kind: witness.kind,
                    alpha: witness.alpha,
                    beta: witness.beta,
                    horizon: witness.horizon,
                }),
                gain: *gain,
            },
        }
    }
}

/// Every candidate trip the detector evaluates, in a fixed order.
pub fn candidate_trips(kappa: &ImpactFunction, alphas: &[f64], betas: &[f64], horizon: f64) -> Result<Vec<RoundTrip>> {
    let mut out = Vec::new();
    for &a in alphas {
        for &b in betas {
            out.push(make_roundtrip(TripKind::SellFast, a, b, horizon)?);
            out.push(make_roundtrip(TripKind::BuyFast, a, b, horizon)?);
        }
        out.push(make_roundtrip(TripKind::SymmetricBlock, a, 0.0, horizon)?);
        out.push(make_roundtrip(TripKind::SymmetricBlock, -a, 0.0, horizon)?);
    }
    let k0 = kappa.eval(0.0);
    if k0 != 0.0 && k0.is_finite() {
        out.push(make_roundtrip(TripKind::ThreePhase, k0.abs(), 0.0, horizon)?);
        out.push(make_roundtrip(TripKind::ThreePhase, -k0.abs(), 0.0, horizon)?);
    }
    Ok(out)
}

/// Search the round-trip family for a positive expected gain. Returns the
/// largest gain found; near-ties go to the smallest (kind, α, β).
pub fn detect_dynamic_arbitrage(
    kappa: &ImpactFunction,
    alphas: &[f64],
    betas: &[f64],
    horizon: f64,
) -> Result<Verdict> {
    if alphas.is_empty() || betas.is_empty() {
        return Err(Error::BadParams("rate grids must be nonempty".into()));
    }
    let mut best: Option<(RoundTrip, f64)> = None;
    for trip in candidate_trips(kappa, alphas, betas, horizon)? {
        let g = expected_gain(kappa, &trip);
        let better = match &best {
            None => true,
            Some((b, bg)) => {
                if g > bg + TIE_TOLERANCE {
                    true
                } else if g >= bg - TIE_TOLERANCE {
                    (trip.kind, trip.alpha, trip.beta) < (b.kind, b.alpha, b.beta)
                } else {
                    false
                }
            }
        };
        if better {
            best = Some((trip, g));
        }
    }
    let (trip, gain) = best.expect("at least one candidate");
    Ok(if gain > GAIN_TOLERANCE {
        Verdict::Arbitrage { witness: trip, gain }
    } else {
        Verdict::NoArbitrageFound { best_gain: gain }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const RATES: [f64; 3] = [0.5, 1.0, 2.0];

    #[test]
    fn constructor_examples() {
        let t = make_roundtrip(TripKind::SymmetricBlock, 1.0, 0.0, 2.0).unwrap();
        assert_eq!(t.control.grid().nodes(), &[0.0, 1.0, 2.0]);
        assert_eq!(t.control.values(), &[1.0, -1.0]);

        let t = make_roundtrip(TripKind::SellFast, 1.0, 2.0, 3.0).unwrap();
        assert_eq!(t.control.grid().nodes(), &[0.0, 2.0, 3.0]);
        assert_eq!(t.control.values(), &[1.0, -2.0]);

        let t = make_roundtrip(TripKind::BuyFast, 1.0, 2.0, 3.0).unwrap();
        assert_eq!(t.control.grid().nodes(), &[0.0, 1.0, 3.0]);
        assert_eq!(t.control.values(), &[-2.0, 1.0]);

        assert!(make_roundtrip(TripKind::SellFast, 0.0, 1.0, 1.0).is_err());
        assert!(make_roundtrip(TripKind::BuyFast, 1.0, -1.0, 1.0).is_err());
        assert!(make_roundtrip(TripKind::SymmetricBlock, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn quadratic_impact_examples() {
        let k = ImpactFunction::quadratic_odd();
        let buy = make_roundtrip(TripKind::BuyFast, 1.0, 2.0, 3.0).unwrap();
        let sell = make_roundtrip(TripKind::SellFast, 1.0, 2.0, 3.0).unwrap();
        assert!((expected_gain(&k, &buy) - 2.0).abs() < 1e-12);
        assert!((expected_gain(&k, &sell) + 2.0).abs() < 1e-12);
        assert!((numeric_gain(&k, &buy, 1000) - 2.0).abs() < 1e-12);

        // the closed form from the two-block construction
        let (a, b, t) = (1.0f64, 2.0f64, 3.0f64);
        let closed = a * b * t * t / (2.0 * (a + b).powi(2)) * (a * k.eval(-b) + b * k.eval(a));
        assert!((closed - 2.0).abs() < 1e-12);
    }

    #[test]
    fn detector_examples() {
        let lin = ImpactFunction::linear(1.0).unwrap();
        let v = detect_dynamic_arbitrage(&lin, &RATES, &RATES, 3.0).unwrap();
        assert!(!v.is_arbitrage());

        let v = detect_dynamic_arbitrage(&ImpactFunction::quadratic_odd(), &RATES, &RATES, 3.0).unwrap();
        match &v {
            Verdict::Arbitrage { witness, gain } => {
                assert_eq!(
                    (witness.kind, witness.alpha, witness.beta),
                    (TripKind::BuyFast, 1.0, 2.0)
                );
                assert!((gain - 2.0).abs() < 1e-10);
            }
            other => panic!("{other:?}"),
        }
        let r = v.report();
        assert_eq!(r.verdict, "arbitrage");
        assert_eq!(r.witness.unwrap().horizon, 3.0);

        let v = detect_dynamic_arbitrage(&ImpactFunction::idle_drift(1.0, 0.3), &RATES, &RATES, 3.0).unwrap();
        match v {
            Verdict::Arbitrage { witness, gain } => {
                assert_eq!(witness.kind, TripKind::ThreePhase);
                assert!((gain - 9.0 / 9.0 * 0.09).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
        assert!(detect_dynamic_arbitrage(&lin, &[], &RATES, 3.0).is_err());
    }

    #[test]
    fn idle_probe_isolates_the_intercept() {
        for (k0, t) in [(0.3, 3.0), (-0.7, 2.0), (1.5, 0.4)] {
            let kappa = ImpactFunction::idle_drift(2.0, k0);
            let trip = make_roundtrip(TripKind::ThreePhase, k0, 0.0, t).unwrap();
            let want = t * t / 9.0 * k0 * k0;
            assert!((expected_gain(&kappa, &trip) - want).abs() < 1e-12);
            assert!((numeric_gain(&kappa, &trip, 300) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn affine_impact_probe() {
        // with an affine κ the trade legs also see the intercept: (2/9)T²κ(0)²
        let kappa = ImpactFunction::affine(1.0, 0.3);
        let trip = make_roundtrip(TripKind::ThreePhase, 0.3, 0.0, 3.0).unwrap();
        assert!((expected_gain(&kappa, &trip) - 0.18).abs() < 1e-12);
        assert!((numeric_gain(&kappa, &trip, 500) - 0.18).abs() < 1e-12);
        assert!(detect_dynamic_arbitrage(&kappa, &RATES, &RATES, 3.0)
            .unwrap()
            .is_arbitrage());
    }

    #[test]
    fn trips_close_exactly() {
        for kind in [
            TripKind::SellFast,
            TripKind::BuyFast,
            TripKind::SymmetricBlock,
            TripKind::ThreePhase,
        ] {
            for a in [0.3, 1.0, 7.0] {
                for b in [0.1, 2.0, 3.3] {
                    let trip = make_roundtrip(kind, a, b, 2.7).unwrap();
                    assert!(trip.control.integral().abs() < 1e-14, "{kind:?} {a} {b}");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn linear_impact_never_pays(
            theta in 0.1f64..3.0, a in 0.1f64..5.0, b in 0.1f64..5.0, t in 0.1f64..5.0, kind in 0usize..4,
        ) {
            let kind = [TripKind::SellFast, TripKind::BuyFast, TripKind::SymmetricBlock, TripKind::ThreePhase][kind];
            let trip = make_roundtrip(kind, a, b, t).unwrap();
            let g = expected_gain(&ImpactFunction::linear(theta).unwrap(), &trip);
            prop_assert!(g.abs() < 1e-13 * (1.0 + (theta * a * b * t * t)), "{g}");
        }

        #[test]
        fn two_block_gain_is_quadratic_in_horizon(a in 0.1f64..3.0, b in 0.1f64..3.0, t in 0.1f64..4.0) {
            let k = ImpactFunction::quadratic_odd();
            for kind in [TripKind::SellFast, TripKind::BuyFast] {
                let g1 = expected_gain(&k, &make_roundtrip(kind, a, b, t).unwrap());
                let g2 = expected_gain(&k, &make_roundtrip(kind, a, b, 2.0 * t).unwrap());
                prop_assert!((g2 - 4.0 * g1).abs() < 1e-10 * (1.0 + g1.abs()));
            }
        }

        #[test]
        fn detector_witness_reproduces(c in -1.0f64..1.0, p in 1.1f64..3.0) {
            let k = ImpactFunction::custom("power", move |x: f64| -x.signum() * x.abs().powf(p) + c);
            if let Verdict::Arbitrage { witness, gain } = detect_dynamic_arbitrage(&k, &RATES, &RATES, 3.0).unwrap() {
                prop_assert!((numeric_gain(&k, &witness, 400) - gain).abs() < 1e-10);
            }
        }
    }
}
