//! Property suites behind `mcg verify`. Every check runs against the loaded
//! scenario and its seed and yields a pass/fail/skipped record.

use std::fmt;

use clap::ValueEnum;
use mcg_core::arbitrage::{
    candidate_trips, detect_dynamic_arbitrage, expected_gain, make_roundtrip, numeric_gain, ImpactFunction, TripKind,
    Verdict,
};
use mcg_core::bestresponse::{best_response_path, classify_region, optimal_aux_pointwise, PriceProxy, RegionLabel};
use mcg_core::dynamics::{blip_transport, wealth_identity_residual, BrownianBundle, GameSim};
use mcg_core::equilibrium::{
    check_conditions, nash_equilibrium, numerical_equilibrium, ode_residual, ode_residual_fd, ode_residual_flipped,
    EquilibriumSolution,
};
use mcg_core::flow::{aux_coords, flow_full, flow_jacobian, flow_ode_oracle};
use mcg_core::oracle::{
    brute_force_best, cara_gaussian_value, concavity_check, dominance_check, equivalence_check, estimate_value,
    invariance_check, random_levels, CheckReport, Comparison, SearchBudget,
};
use mcg_core::{cara_utility, ControlKind, GameState, Investor, PiecewiseControl, Scenario, TimeGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::commands::{CmdResult, Context, Failure, EXIT_CHECK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Flow,
    Dynamics,
    Bestresponse,
    Equilibrium,
    Oracle,
    Arbitrage,
    All,
}

impl Suite {
    fn includes(self, other: Suite) -> bool {
        self == Suite::All || self == other
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skipped => "SKIP",
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub status: Status,
    pub detail: String,
    pub data: Value,
}

impl Check {
    fn new(name: &str, pass: bool, detail: impl Into<String>, data: Value) -> Check {
        Check {
            name: name.to_string(),
            status: if pass { Status::Pass } else { Status::Fail },
            detail: detail.into(),
            data,
        }
    }

    fn skipped(name: &str, why: impl Into<String>) -> Check {
        Check {
            name: name.to_string(),
            status: Status::Skipped,
            detail: why.into(),
            data: Value::Null,
        }
    }

    /// Library errors inside a check count as failures of that check.
    fn from_result(name: &str, r: mcg_core::Result<Check>) -> Check {
        r.unwrap_or_else(|e| Check::new(name, false, format!("error: {e}"), Value::Null))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub n_paths: usize,
    pub n_steps: usize,
    pub checks: Vec<Check>,
    pub passed: usize,
    pub failed: usize,
    pub skipped: usize,
}

impl VerifyReport {
    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| c.status == Status::Fail).collect()
    }
}

pub fn run(ctx: &Context, suite: Suite) -> VerifyReport {
    let env = Env::new(ctx);
    let mut checks = Vec::new();
    if suite.includes(Suite::Flow) {
        checks.extend(flow_checks(&env));
    }
    if suite.includes(Suite::Dynamics) {
        checks.extend(dynamics_checks(&env));
    }
    if suite.includes(Suite::Bestresponse) {
        checks.extend(bestresponse_checks(&env));
    }
    if suite.includes(Suite::Equilibrium) {
        checks.extend(equilibrium_checks(&env));
    }
    if suite.includes(Suite::Oracle) {
        checks.extend(oracle_checks(&env));
    }
    if suite.includes(Suite::Arbitrage) {
        checks.extend(arbitrage_checks(&env));
    }
    let count = |s: Status| checks.iter().filter(|c| c.status == s).count();
    VerifyReport {
        seed: ctx.config.seed,
        n_paths: ctx.config.n_paths,
        n_steps: ctx.config.n_steps,
        passed: count(Status::Pass),
        failed: count(Status::Fail),
        skipped: count(Status::Skipped),
        checks,
    }
}

pub fn cmd_verify(ctx: &Context, suite: Suite) -> CmdResult {
    let report = run(ctx, suite);
    for c in &report.checks {
        println!("{} {}: {}", c.status, c.name, c.detail);
    }
    ctx.write_json("verify.json", &report)?;
    println!(
        "{} passed, {} failed, {} skipped",
        report.passed, report.failed, report.skipped
    );
    let failed: Vec<&str> = report.failures().iter().map(|c| c.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::new(
            EXIT_CHECK,
            format!("failed checks: {}", failed.join(", ")),
        ))
    }
}

struct Env<'a> {
    ctx: &'a Context,
    s: &'a Scenario,
    grid: TimeGrid,
    noise: BrownianBundle,
    eq: Option<EquilibriumSolution>,
    seed: u64,
}

impl<'a> Env<'a> {
    fn new(ctx: &'a Context) -> Env<'a> {
        Env {
            ctx,
            s: &ctx.scenario,
            grid: ctx.grid(),
            noise: ctx.noise(),
            eq: nash_equilibrium(&ctx.scenario).ok(),
            seed: ctx.config.seed,
        }
    }

    fn rng(&self, salt: u64) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(salt);
        r
    }

    /// Opponent rate used by the best-response and oracle checks: the
    /// equilibrium rate when it exists, else a constant sale.
    fn opponent_rate(&self, who: Investor) -> PiecewiseControl {
        match &self.eq {
            Some(sol) => sol.rate_control(who.opponent(), &self.grid),
            None => PiecewiseControl::constant(self.grid.clone(), 0.5, ControlKind::TradingRate),
        }
    }

    fn random_state(&self, rng: &mut ChaCha8Rng) -> GameState {
        GameState {
            s: rng.random_range(50.0..150.0),
            pi_1: rng.random_range(-5.0..5.0),
            pi_2: rng.random_range(-5.0..5.0),
            w_1: rng.random_range(-10.0..10.0),
            w_2: rng.random_range(-10.0..10.0),
        }
    }
}

fn max_diff(a: &GameState, b: &GameState, relative: bool) -> f64 {
    a.as_array()
        .iter()
        .zip(b.as_array())
        .map(|(x, y)| {
            let d = (x - y).abs();
            if relative {
                d / x.abs().max(y.abs()).max(1.0)
            } else {
                d
            }
        })
        .fold(0.0, f64::max)
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

fn flow_checks(env: &Env) -> Vec<Check> {
    let mut rng = env.rng(1);
    let states: Vec<GameState> = (0..10).map(|_| env.random_state(&mut rng)).collect();
    let qs = linspace(-5.0, 5.0, 21);
    let mut out = Vec::new();

    let mut worst = 0.0f64;
    for y in &states {
        for who in Investor::BOTH {
            let th = env.s.theta(who);
            for &q in &qs {
                worst = worst.max(max_diff(
                    &flow_full(q, y, who, th),
                    &flow_ode_oracle(q, y, who, th, 200),
                    false,
                ));
            }
        }
    }
    out.push(Check::new(
        "flow.ode_oracle",
        worst < 1e-8,
        format!("sup error {worst:.3e} over 10 states x 21 q"),
        json!({ "sup_error": worst }),
    ));

    let mut worst = 0.0f64;
    for y in &states {
        for who in Investor::BOTH {
            let th = env.s.theta(who);
            for &a in &qs {
                for b in [-2.5, 0.75, 4.0] {
                    let two = flow_full(a, &flow_full(b, y, who, th), who, th);
                    worst = worst.max(max_diff(&two, &flow_full(a + b, y, who, th), true));
                }
            }
        }
    }
    out.push(Check::new(
        "flow.group_law",
        worst < 1e-13,
        format!("max relative defect {worst:.3e}"),
        json!({ "max_relative_defect": worst }),
    ));

    let h = 1e-4;
    let mut worst = 0.0f64;
    for y in &states {
        for who in Investor::BOTH {
            let th = env.s.theta(who);
            for &q in &qs {
                let jac = flow_jacobian(q, th);
                let base = y.relative(who);
                for j in 0..5 {
                    let mut up = base;
                    let mut dn = base;
                    up[j] += h;
                    dn[j] -= h;
                    let fu = flow_full(q, &GameState::from_relative(who, up), who, th).relative(who);
                    let fd = flow_full(q, &GameState::from_relative(who, dn), who, th).relative(who);
                    for i in 0..5 {
                        worst = worst.max(((fu[i] - fd[i]) / (2.0 * h) - jac[i][j]).abs());
                    }
                }
            }
        }
    }
    out.push(Check::new(
        "flow.jacobian_fd",
        worst < 1e-7,
        format!("max entry error {worst:.3e}"),
        json!({ "max_error": worst }),
    ));

    let mut worst = 0.0f64;
    for y in &states {
        for who in Investor::BOTH {
            let th = env.s.theta(who);
            let z = aux_coords(y, who, th).as_array();
            for &q in &qs {
                let zq = aux_coords(&flow_full(q, y, who, th), who, th).as_array();
                for i in 0..4 {
                    worst = worst.max((z[i] - zq[i]).abs() / z[i].abs().max(1.0));
                }
            }
        }
    }
    out.push(Check::new(
        "flow.aux_invariant",
        worst < 1e-12,
        format!("max relative drift {worst:.3e}"),
        json!({ "max_relative_drift": worst }),
    ));
    out
}

fn dynamics_checks(env: &Env) -> Vec<Check> {
    let s = env.s;
    let g = &env.grid;
    let zero = PiecewiseControl::zero(g.clone(), ControlKind::TradingRate);
    let sell = PiecewiseControl::constant(g.clone(), 0.3, ControlKind::TradingRate);
    let buy = PiecewiseControl::constant(g.clone(), -0.2, ControlKind::TradingRate);
    let mut out = Vec::new();
    let n_dump = env.ctx.config.n_paths.min(10);

    out.push(Check::from_result(
        "dynamics.martingale",
        (|| {
            let t = GameSim::new(s, &zero, &zero, &env.noise)?.terminal()?;
            let v: Vec<f64> = t.states.iter().map(|y| y.s).collect();
            let e = mcg_core::oracle::ValueEstimate::from_samples(&v, env.seed);
            let dev = (e.mean - s.params().s0).abs();
            Ok(Check::new(
                "dynamics.martingale",
                dev < 4.0 * e.std_error || dev == 0.0,
                format!("|mean(S_T) - S0| = {dev:.3e}, SE = {:.3e}", e.std_error),
                json!({ "deviation": dev, "se": e.std_error }),
            ))
        })(),
    ));

    out.push(Check::from_result(
        "dynamics.holdings_exact",
        (|| {
            let sim = GameSim::new(s, &sell, &buy, &env.noise)?;
            let mut worst = 0.0f64;
            for p in 0..n_dump {
                let path = sim.path(p)?;
                let (mut a, mut b) = (s.initial_holding(Investor::One), s.initial_holding(Investor::Two));
                for (k, y) in path.states.iter().enumerate().skip(1) {
                    a -= 0.3 * g.dt(k - 1);
                    b += 0.2 * g.dt(k - 1);
                    worst = worst.max((y.pi_1 - a).abs()).max((y.pi_2 - b).abs());
                }
            }
            Ok(Check::new(
                "dynamics.holdings_exact",
                worst < 1e-12,
                format!("max holding error {worst:.3e}"),
                json!({ "max_error": worst }),
            ))
        })(),
    ));

    out.push(Check::from_result(
        "dynamics.wealth_identity_idle",
        (|| {
            let sim = GameSim::new(s, &sell, &zero, &env.noise)?;
            let mut worst = 0.0f64;
            for p in 0..n_dump {
                worst = worst.max(wealth_identity_residual(&sim.path(p)?, Investor::Two, s));
            }
            Ok(Check::new(
                "dynamics.wealth_identity_idle",
                worst == 0.0,
                format!("idle investor residual {worst:.3e}"),
                json!({ "residual": worst }),
            ))
        })(),
    ));

    out.push(Check::from_result(
        "dynamics.wealth_identity_order",
        (|| {
            let m = env.ctx.config.n_steps.clamp(10, 1000);
            let fine = BrownianBundle::new(s.grid(2 * m), n_dump.max(1), env.seed);
            let coarse = fine.coarsened(2)?;
            let residual = |noise: &BrownianBundle| -> mcg_core::Result<f64> {
                let gg = noise.grid().clone();
                let x1 = match &env.eq {
                    Some(sol) => sol.rate_control(Investor::One, &gg),
                    None => PiecewiseControl::constant(gg.clone(), 0.4, ControlKind::TradingRate),
                };
                let x2 = PiecewiseControl::constant(gg, -0.1, ControlKind::TradingRate);
                let sim = GameSim::new(s, &x1, &x2, noise)?;
                let mut worst = 0.0f64;
                for p in 0..noise.n_paths() {
                    worst = worst.max(wealth_identity_residual(&sim.path(p)?, Investor::One, s));
                }
                Ok(worst)
            };
            let (rc, rf) = (residual(&coarse)?, residual(&fine)?);
            let ratio = rc / rf;
            Ok(Check::new(
                "dynamics.wealth_identity_order",
                (1.6..=2.4).contains(&ratio),
                format!(
                    "residual {rc:.3e} at {m} steps, {rf:.3e} at {} steps, ratio {ratio:.3}",
                    2 * m
                ),
                json!({ "coarse": rc, "fine": rf, "ratio": ratio }),
            ))
        })(),
    ));

    out.push(Check::from_result(
        "dynamics.blip_limit",
        (|| {
            let q = 0.5;
            let y0 = s.initial_state();
            let target = flow_full(q, &y0, Investor::One, s.theta(Investor::One));
            let mut errs = Vec::new();
            for eps in [1e-2, 1e-4] {
                let noise = BrownianBundle::new(TimeGrid::uniform(s.start(), s.start() + eps, 50), 400, env.seed);
                let ends = blip_transport(s, Investor::One, q, eps, &noise)?;
                let mean_err = ends.iter().map(|y| max_diff(y, &target, false)).sum::<f64>() / ends.len() as f64;
                errs.push(mean_err);
            }
            let pass = errs[1] < errs[0] / 5.0 || errs[1] < 1e-12;
            Ok(Check::new(
                "dynamics.blip_limit",
                pass,
                format!(
                    "mean distance to flow {:.3e} at eps=1e-2, {:.3e} at eps=1e-4",
                    errs[0], errs[1]
                ),
                json!({ "eps": [1e-2, 1e-4], "mean_error": errs }),
            ))
        })(),
    ));

    out.push(Check::from_result(
        "dynamics.reproducible",
        (|| {
            let small = BrownianBundle::new(g.clone(), env.ctx.config.n_paths.min(500), env.seed);
            let a = GameSim::new(s, &sell, &buy, &small)?.terminal()?.states;
            let b = GameSim::new(s, &sell, &buy, &small)?.terminal()?.states;
            Ok(Check::new(
                "dynamics.reproducible",
                a == b,
                format!("{} terminal states compared bitwise", a.len()),
                Value::Null,
            ))
        })(),
    ));
    out
}

fn bestresponse_checks(env: &Env) -> Vec<Check> {
    let s = env.s;
    let b = s.bounds();
    let mut out = Vec::new();

    out.push(Check::from_result(
        "bestresponse.bounds",
        (|| {
            let mut outside = 0;
            let mut clamped = 0;
            for who in Investor::BOTH {
                let x = env.opponent_rate(who);
                for scale in [1.0, 1e3, -1e3] {
                    let xs = PiecewiseControl::new(
                        x.grid().clone(),
                        x.values()
                            .iter()
                            .map(|v| v * scale + if scale.abs() > 1.0 { scale } else { 0.0 })
                            .collect(),
                        ControlKind::TradingRate,
                    )?;
                    let br = best_response_path(s, who, &xs, &PriceProxy::None)?;
                    outside += br.pi_nodes.iter().filter(|p| !b.contains(**p)).count();
                    clamped += br.pi_nodes.iter().filter(|p| **p == b.pi_lo || **p == b.pi_hi).count();
                }
            }
            Ok(Check::new(
                "bestresponse.bounds",
                outside == 0 && clamped > 0,
                format!("{outside} nodes outside bounds, {clamped} on a bound"),
                json!({ "outside": outside, "on_bound": clamped }),
            ))
        })(),
    ));

    out.push(Check::from_result(
        "bestresponse.regions",
        (|| {
            let mut mismatches = 0;
            let mut rng = env.rng(2);
            for _ in 0..200 {
                let who = if rng.random_bool(0.5) {
                    Investor::One
                } else {
                    Investor::Two
                };
                let x = rng.random_range(-1e3..1e3) * rng.random_range(0.0..1.0f64).powi(4);
                let p = s.params().s0;
                let pi = optimal_aux_pointwise(x, p, s, who)?;
                let on_bound = pi == b.pi_lo || pi == b.pi_hi;
                let label = classify_region(x, p, s, who)?;
                if on_bound != (label != RegionLabel::Control) {
                    mismatches += 1;
                }
            }
            Ok(Check::new(
                "bestresponse.regions",
                mismatches == 0,
                format!("{mismatches} of 200 labels disagree with the clamp"),
                json!({ "mismatches": mismatches }),
            ))
        })(),
    ));

    out.push(Check::from_result(
        "bestresponse.monotone",
        (|| {
            let mut violations = 0;
            for who in Investor::BOTH {
                let xs = linspace(-50.0, 50.0, 401);
                let pis: Vec<f64> = xs
                    .iter()
                    .map(|&x| optimal_aux_pointwise(x, s.params().s0, s, who))
                    .collect::<mcg_core::Result<_>>()?;
                violations += pis.windows(2).filter(|w| w[1] > w[0]).count();
            }
            Ok(Check::new(
                "bestresponse.monotone",
                violations == 0,
                format!("{violations} increases of the optimal holding in the opponent rate"),
                json!({ "violations": violations }),
            ))
        })(),
    ));

    out.push(Check::from_result(
        "bestresponse.zero_opponent",
        (|| {
            let zero = PiecewiseControl::zero(env.grid.clone(), ControlKind::TradingRate);
            let mut worst = 0.0f64;
            for who in Investor::BOTH {
                let br = best_response_path(s, who, &zero, &PriceProxy::None)?;
                worst = br
                    .pi_nodes
                    .iter()
                    .chain(br.rate_path.values())
                    .fold(worst, |m, v| m.max(v.abs()));
            }
            Ok(Check::new(
                "bestresponse.zero_opponent",
                worst == 0.0,
                format!("max |pi*|, |x*| = {worst:.3e}"),
                json!({ "max_abs": worst }),
            ))
        })(),
    ));

    match &env.eq {
        None => out.push(Check::skipped("bestresponse.mutual", "equilibrium conditions fail")),
        Some(sol) => out.push(Check::from_result(
            "bestresponse.mutual",
            (|| {
                let mut worst = 0.0f64;
                for who in Investor::BOTH {
                    let br = best_response_path(s, who, &env.opponent_rate(who), &PriceProxy::None)?;
                    // the terminal node sees the last interval's rate, not x(T)
                    let n = env.grid.n_steps();
                    for (t, p) in env.grid.nodes()[..n].iter().zip(&br.pi_nodes) {
                        worst = worst.max((p - sol.pi(who, *t)).abs());
                    }
                }
                Ok(Check::new(
                    "bestresponse.mutual",
                    worst < 1e-9,
                    format!("max distance between best response and equilibrium {worst:.3e}"),
                    json!({ "max_error": worst }),
                ))
            })(),
        )),
    }
    out
}

fn equilibrium_checks(env: &Env) -> Vec<Check> {
    let s = env.s;
    let mut out = Vec::new();
    let report = match check_conditions(s) {
        Ok(r) => r,
        Err(e) => {
            return vec![Check::new(
                "equilibrium.conditions",
                false,
                format!("error: {e}"),
                Value::Null,
            )]
        }
    };
    let report_json = serde_json::to_value(&report).expect("plain struct");
    let Some(sol) = &env.eq else {
        let why = format!("conditions fail: {}", report.failed().join(", "));
        out.push(Check {
            data: report_json,
            ..Check::skipped("equilibrium.conditions", why.clone())
        });
        for name in [
            "equilibrium.closed_form",
            "equilibrium.ode_residual",
            "equilibrium.ode_residual_fd",
            "equilibrium.sign_convention",
            "equilibrium.crossing",
        ] {
            out.push(Check::skipped(name, why.clone()));
        }
        return out;
    };
    out.push(Check::new(
        "equilibrium.conditions",
        true,
        "all three hold",
        report_json,
    ));

    out.push(Check::from_result(
        "equilibrium.closed_form",
        (|| {
            let num = numerical_equilibrium(s, &env.grid, 8)?;
            let mut worst = 0.0f64;
            for k in 0..num.t.len() {
                worst = worst
                    .max((num.pi1[k] - sol.pi(Investor::One, num.t[k])).abs())
                    .max((num.pi2[k] - sol.pi(Investor::Two, num.t[k])).abs());
            }
            Ok(Check::new(
                "equilibrium.closed_form",
                worst < 1e-8,
                format!("closed form vs RK4 max gap {worst:.3e}"),
                json!({ "max_gap": worst }),
            ))
        })(),
    ));

    let mut rng = env.rng(3);
    let times: Vec<f64> = (0..100).map(|_| rng.random_range(s.start()..s.horizon())).collect();
    let scale = |t: f64| {
        sol.pi_dot(Investor::One, t)
            .abs()
            .max(sol.pi_dot(Investor::Two, t).abs())
            .max(1.0)
    };
    let worst = times
        .iter()
        .map(|&t| {
            let r = ode_residual(sol, t);
            r[0].abs().max(r[1].abs()) / scale(t)
        })
        .fold(0.0, f64::max);
    out.push(Check::new(
        "equilibrium.ode_residual",
        worst < 1e-12,
        format!("max scaled residual {worst:.3e} at 100 times"),
        json!({ "max_residual": worst }),
    ));

    let h = 1e-4;
    let worst = times
        .iter()
        .map(|&t| {
            let t = t.clamp(s.start() + h, s.horizon() - h);
            let r = ode_residual_fd(sol, t, h);
            r[0].abs().max(r[1].abs()) / scale(t)
        })
        .fold(0.0, f64::max);
    out.push(Check::new(
        "equilibrium.ode_residual_fd",
        worst < 1e-6,
        format!("max scaled finite-difference residual {worst:.3e}"),
        json!({ "max_residual": worst, "h": h }),
    ));

    let flipped = times
        .iter()
        .map(|&t| {
            let r = ode_residual_flipped(sol, t);
            r[0].abs().max(r[1].abs())
        })
        .fold(0.0, f64::max);
    let coupled = sol.ode_coefficients.iter().all(|c| *c != 0.0)
        && (s.initial_holding(Investor::One) != 0.0 || s.initial_holding(Investor::Two) != 0.0);
    out.push(Check::new(
        "equilibrium.sign_convention",
        flipped > 1e-6 || !coupled,
        format!("sign-flipped system residual {flipped:.3e}"),
        json!({ "flipped_residual": flipped }),
    ));

    let mut worst = 0.0f64;
    let mut found = Vec::new();
    for who in Investor::BOTH {
        let tc = sol.crossing_time(who);
        if let Some(t) = tc {
            worst = worst.max(sol.pi(who, t).abs());
        }
        found.push(tc);
    }
    out.push(Check::new(
        "equilibrium.crossing",
        worst < 1e-12,
        format!("crossing times {found:?}, |pi(t_c)| <= {worst:.3e}"),
        json!({ "crossing_times": found, "max_abs_at_root": worst }),
    ));
    out
}

fn comparison_check(name: &str, inputs: &[&str], c: &Comparison) -> Check {
    let r = CheckReport::from_comparison(name, inputs, c);
    Check::new(
        name,
        c.pass(),
        format!(
            "z = {:.3} (means {:.6e} vs {:.6e})",
            c.z, c.value_a.mean, c.value_b.mean
        ),
        serde_json::to_value(&r).expect("plain struct"),
    )
}

fn oracle_checks(env: &Env) -> Vec<Check> {
    let s = env.s;
    let g = &env.grid;
    let b = s.bounds();
    let mut out = Vec::new();
    let seed_text = env.seed.to_string();
    let paths_text = env.ctx.config.n_paths.to_string();
    let inputs = |name: &str| -> Vec<String> {
        vec![
            env.ctx.config.to_text(),
            name.to_string(),
            seed_text.clone(),
            paths_text.clone(),
        ]
    };

    out.push(Check::from_result(
        "oracle.cara_gaussian",
        (|| {
            let mut rng = env.rng(4);
            let sigma = s
                .params()
                .vol
                .as_constant()
                .ok_or(mcg_core::Error::NonConstantVolatility)?;
            let mut zs = Vec::new();
            for who in Investor::BOTH {
                // u(w_T) is lognormal with log-variance (δπσ)²(T−s); keep it at
                // most 1 so the sample SE is trustworthy
                let cap = 1.0 / (s.delta(who) * sigma * s.duration().sqrt()).max(1e-300);
                let (lo, hi) = (b.pi_lo.max(-cap), b.pi_hi.min(cap));
                for _ in 0..5 {
                    let pi = rng.random_range(lo..=hi);
                    let rate = rng.random_range(-1.0..1.0);
                    let x = PiecewiseControl::from_fn(g.clone(), ControlKind::TradingRate, |t| rate * (1.0 + t.sin()));
                    let own = PiecewiseControl::constant(g.clone(), pi, ControlKind::AuxHolding);
                    let mc = estimate_value(s, who, &own, &x, &env.noise)?;
                    let exact = cara_gaussian_value(s, who, pi, &x)?;
                    let z = if mc.mean == exact {
                        0.0
                    } else {
                        (mc.mean - exact) / mc.std_error
                    };
                    zs.push(z);
                }
            }
            let worst = zs.iter().fold(0.0f64, |m, z| m.max(z.abs()));
            Ok(Check::new(
                "oracle.cara_gaussian",
                worst < 3.0,
                format!("max |z| = {worst:.3} over 10 constant policies"),
                json!({ "z": zs }),
            ))
        })(),
    ));

    out.push(Check::from_result(
        "oracle.zero_opponent",
        (|| {
            let zero = PiecewiseControl::zero(g.clone(), ControlKind::TradingRate);
            let mut ok = true;
            let mut detail = Vec::new();
            for who in Investor::BOTH {
                let idle = PiecewiseControl::zero(g.clone(), ControlKind::AuxHolding);
                let v = estimate_value(s, who, &idle, &zero, &env.noise)?;
                let u = cara_utility(s.initial_wealth(who), s.delta(who))?;
                let levels = [-1.0, 0.0, 1.0].map(|l| b.clamp(l));
                let r = brute_force_best(
                    s,
                    who,
                    &zero,
                    &levels,
                    4.min(g.n_steps()),
                    &env.noise,
                    SearchBudget::default(),
                )?;
                let zero_best = r.best.values().iter().all(|v| *v == 0.0);
                ok &= v.mean == u && v.std_error == 0.0 && zero_best;
                detail.push(format!(
                    "{who}: value {} vs u(W) {}, SE {}, search picked zero: {zero_best}",
                    v.mean, u, v.std_error
                ));
            }
            Ok(Check::new("oracle.zero_opponent", ok, detail.join("; "), Value::Null))
        })(),
    ));

    for who in Investor::BOTH {
        let name = format!("oracle.dominance_{}", who.number());
        if env.eq.is_none() {
            out.push(Check::skipped(&name, "equilibrium conditions fail"));
            continue;
        }
        out.push(Check::from_result(
            &name,
            (|| {
                let x = env.opponent_rate(who);
                let br = best_response_path(s, who, &x, &PriceProxy::None)?;
                let cand = estimate_value(s, who, &br.pi_path, &x, &env.noise)?;
                let lo = br.pi_nodes.iter().cloned().fold(f64::INFINITY, f64::min) - 0.5;
                let hi = br.pi_nodes.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 0.5;
                let levels: Vec<f64> = linspace(lo, hi, 7).into_iter().map(|l| b.clamp(l)).collect();
                let budget = SearchBudget {
                    seed: env.seed,
                    ..SearchBudget::default()
                };
                let r = brute_force_best(s, who, &x, &levels, 8.min(g.n_steps()), &env.noise, budget)?;
                let d = dominance_check(cand, vec![("best_piecewise_constant".into(), r.estimate)]);
                Ok(Check::new(
                    &name,
                    d.pass,
                    format!(
                        "z = {:.3} (candidate {:.6e}, best of {} challengers {:.6e})",
                        d.margin, cand.mean, r.evaluations, r.estimate.mean
                    ),
                    json!({ "report": d, "evaluations": r.evaluations }),
                ))
            })(),
        ));
    }

    for q in [0.5, -1.0] {
        let name = format!("oracle.invariance_q{q}");
        if env.eq.is_none() {
            out.push(Check::skipped(&name, "equilibrium conditions fail"));
            continue;
        }
        out.push(Check::from_result(
            &name,
            (|| {
                let who = Investor::One;
                let c = invariance_check(s, who, &s.initial_state(), q, &env.opponent_rate(who), &env.noise)?;
                let ins = inputs(&name);
                Ok(comparison_check(
                    &name,
                    &ins.iter().map(String::as_str).collect::<Vec<_>>(),
                    &c,
                ))
            })(),
        ));
    }

    for who in Investor::BOTH {
        let name = format!("oracle.equivalence_{}", who.number());
        out.push(Check::from_result(
            &name,
            (|| {
                let c = equivalence_check(s, who, &env.opponent_rate(who), &env.noise)?;
                let ins = inputs(&name);
                Ok(comparison_check(
                    &name,
                    &ins.iter().map(String::as_str).collect::<Vec<_>>(),
                    &c,
                ))
            })(),
        ));
    }

    out.push(Check::from_result(
        "oracle.concavity",
        (|| {
            let levels: Vec<f64> = linspace(b.pi_lo.max(-2.0), b.pi_hi.min(2.0), 9);
            let mut worst = f64::INFINITY;
            let mut ok = true;
            for trial in 0..5u64 {
                let who = if trial % 2 == 0 { Investor::One } else { Investor::Two };
                let pa = PiecewiseControl::new(
                    g.clone(),
                    random_levels(&levels, g.n_steps(), env.seed + 2 * trial),
                    ControlKind::AuxHolding,
                )?;
                let pb = PiecewiseControl::new(
                    g.clone(),
                    random_levels(&levels, g.n_steps(), env.seed + 2 * trial + 1),
                    ControlKind::AuxHolding,
                )?;
                let r = concavity_check(s, who, &pa, &pb, 0.3, &env.opponent_rate(who), &env.noise)?;
                ok &= r.pass;
                let gap = r.h_mix - r.h_average;
                let z = if gap == 0.0 { 0.0 } else { gap / r.std_error };
                worst = worst.min(z);
            }
            Ok(Check::new(
                "oracle.concavity",
                ok,
                format!("smallest studentised concavity gap z = {worst:.3}"),
                json!({ "min_z": worst }),
            ))
        })(),
    ));
    out
}

fn arbitrage_checks(env: &Env) -> Vec<Check> {
    let mut out = Vec::new();
    let alphas = [0.5, 1.0, 2.0];
    let betas = [0.5, 1.0, 2.0, 3.0];

    out.push(Check::from_result(
        "arbitrage.linear_zero_gain",
        (|| {
            let mut worst = 0.0f64;
            let mut n = 0;
            for who in Investor::BOTH {
                let k = ImpactFunction::linear(env.s.theta(who))?;
                for horizon in [1.0, 3.0] {
                    for trip in candidate_trips(&k, &alphas, &betas, horizon)? {
                        worst = worst.max(expected_gain(&k, &trip).abs());
                        n += 1;
                    }
                }
            }
            Ok(Check::new(
                "arbitrage.linear_zero_gain",
                worst < 1e-13,
                format!("max |gain| {worst:.3e} over {n} round trips"),
                json!({ "max_abs_gain": worst, "trips": n }),
            ))
        })(),
    ));

    out.push(Check::from_result(
        "arbitrage.quadratic_witness",
        (|| {
            let v = detect_dynamic_arbitrage(&ImpactFunction::quadratic_odd(), &[1.0], &[2.0], 3.0)?;
            let gain = match &v {
                Verdict::Arbitrage { gain, .. } => *gain,
                Verdict::NoArbitrageFound { .. } => f64::NAN,
            };
            Ok(Check::new(
                "arbitrage.quadratic_witness",
                (gain - 2.0).abs() < 1e-10,
                format!("gain {gain}"),
                serde_json::to_value(v.report()).expect("plain struct"),
            ))
        })(),
    ));

    out.push(Check::from_result(
        "arbitrage.idle_drift_probe",
        (|| {
            let c = 0.3;
            let horizon = 3.0;
            let k = ImpactFunction::idle_drift(1.0, c);
            let trip = make_roundtrip(TripKind::ThreePhase, c, 0.0, horizon)?;
            let gain = expected_gain(&k, &trip);
            let want = horizon * horizon / 9.0 * c * c;
            Ok(Check::new(
                "arbitrage.idle_drift_probe",
                (gain - want).abs() < 1e-12,
                format!("gain {gain} vs {want}"),
                json!({ "gain": gain, "expected": want }),
            ))
        })(),
    ));

    out.push(Check::from_result(
        "arbitrage.config_kappa",
        (|| {
            let k = env.ctx.config.impact()?;
            let probe = detect_dynamic_arbitrage(&k, &[1.0], &[2.0], 3.0)?;
            let scan = detect_dynamic_arbitrage(&k, &alphas, &betas, 3.0)?;
            let linear = matches!(k, ImpactFunction::Linear { .. });
            let mut ok = !(linear && scan.is_arbitrage());
            for v in [&probe, &scan] {
                if let Verdict::Arbitrage { witness, gain } = v {
                    let num = numeric_gain(&k, witness, 20_000);
                    ok &= (num - gain).abs() < 1e-6 * gain.abs().max(1.0);
                }
            }
            let (pr, sr) = (probe.report(), scan.report());
            Ok(Check::new(
                "arbitrage.config_kappa",
                ok,
                format!(
                    "kappa {}: probe (1, 2, 3) {} gain {}; scan {} gain {}",
                    k.name(),
                    pr.verdict,
                    pr.gain,
                    sr.verdict,
                    sr.gain
                ),
                json!({ "kappa": k.name(), "probe": pr, "scan": sr }),
            ))
        })(),
    ));
    out
}
