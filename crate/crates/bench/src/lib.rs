//! Shared fixtures for the benchmarks.

use mcg_core::{validate_market, ControlBounds, MarketParams, Preferences, Scenario, VolatilitySpec};

/// θ = (1, 1), σ = 0.5, δ = (4, 1), T = 5, π₀ = (0.6, −1).
pub fn reference_scenario() -> Scenario {
    validate_market(
        MarketParams {
            theta_1: 1.0,
            theta_2: 1.0,
            vol: VolatilitySpec::constant(0.5),
            start: 0.0,
            horizon: 5.0,
            s0: 100.0,
            w1_0: 0.0,
            w2_0: 0.0,
            pi1_0: 0.6,
            pi2_0: -1.0,
        },
        Preferences {
            delta_1: 4.0,
            delta_2: 1.0,
        },
        ControlBounds::symmetric(50.0),
    )
    .expect("reference scenario is valid")
}
