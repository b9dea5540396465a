//! Brute-force checks of the theory by Monte Carlo.
//!
//! Values are expected CARA utilities of terminal auxiliary wealth,
//! Hⁱ(π) = E[uⁱ(wⁱ_T)], estimated on a shared [`BrownianBundle`] so that every
//! comparison within one check uses common random numbers. Verdicts use a
//! 3-sigma gate.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::bestresponse::{best_response_path, BestResponse, PriceProxy};
use crate::dynamics::{AuxSim, BrownianBundle, GameSim};
use crate::error::{Error, Result};
use crate::flow::{aux_coords, flow_full};
use crate::model::{cara, ControlKind, GameState, Investor, PiecewiseControl, Scenario};

/// Studentised differences beyond this fail a check.
pub const Z_GATE: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValueEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub seed: u64,
}

impl ValueEstimate {
    /// Mean and standard error of a sample. The mean is accumulated relative
    /// to the first value, so a constant sample gives that value exactly and
    /// a standard error of 0.
    pub fn from_samples(values: &[f64], seed: u64) -> ValueEstimate {
        let n = values.len();
        assert!(n > 0, "empty sample");
        let v0 = values[0];
        let shift: f64 = values.iter().map(|v| v - v0).sum::<f64>() / n as f64;
        let mean = v0 + shift;
        let var = if n > 1 {
            values.iter().map(|v| (v - v0 - shift).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        ValueEstimate {
            mean,
            std_error: (var / n as f64).sqrt(),
            n_paths: n,
            seed,
        }
    }
}

/// (a − b)/√(SE_a² + SE_b²); 0 when both the difference and the SEs vanish.
pub fn z_score(a: &ValueEstimate, b: &ValueEstimate) -> f64 {
    let d = a.mean - b.mean;
    let se = a.std_error.hypot(b.std_error);
    if d == 0.0 {
        0.0
    } else {
        d / se
    }
}

/// Hⁱ(π) against a fixed opponent rate, from Z_s = Y_s with the own holding dropped.
pub fn estimate_value(
    scenario: &Scenario,
    who: Investor,
    pi: &PiecewiseControl,
    x_opp: &PiecewiseControl,
    noise: &BrownianBundle,
) -> Result<ValueEstimate> {
    let sim = AuxSim::new(scenario, who, pi, x_opp, noise)?;
    terminal_utility(scenario, who, sim, noise)
}

fn terminal_utility(
    scenario: &Scenario,
    who: Investor,
    sim: AuxSim<'_>,
    noise: &BrownianBundle,
) -> Result<ValueEstimate> {
    let delta = scenario.delta(who);
    let u: Vec<f64> = sim.terminal()?.iter().map(|z| cara(z.w_own, delta)).collect();
    Ok(ValueEstimate::from_samples(&u, noise.seed()))
}

/// Closed form of Hⁱ for a constant holding π, deterministic opponent rate
/// and constant σ: terminal wealth is Gaussian, so
/// E[u(w_T)] = u(w_s − θ⁻ⁱπ∫x⁻ⁱdt − (δⁱ/2)π²σ²(T−s)).
pub fn cara_gaussian_value(scenario: &Scenario, who: Investor, pi: f64, x_opp: &PiecewiseControl) -> Result<f64> {
    let sigma = scenario
        .params()
        .vol
        .as_constant()
        .ok_or(Error::NonConstantVolatility)?;
    let delta = scenario.delta(who);
    let w = scenario.initial_wealth(who)
        - scenario.theta(who.opponent()) * pi * x_opp.integral()
        - 0.5 * delta * pi * pi * sigma * sigma * scenario.duration();
    Ok(cara(w, delta))
}

/// How far the brute-force search may go.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SearchBudget {
    /// Enumerate every level assignment when there are at most this many.
    pub max_enumeration: usize,
    /// Otherwise evaluate this many challengers (random restarts followed by
    /// coordinate descent); 0 means enumeration only.
    pub random_evaluations: usize,
    pub seed: u64,
}

impl Default for SearchBudget {
    fn default() -> Self {
        SearchBudget {
            max_enumeration: 729,
            random_evaluations: 2000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub best: PiecewiseControl,
    /// Index into the level set for each block.
    pub best_levels: Vec<usize>,
    pub estimate: ValueEstimate,
    pub evaluations: usize,
    pub exhaustive: bool,
}

/// Piecewise-constant holdings on `n_intervals` blocks of the noise grid.
struct BlockFamily<'a> {
    levels: &'a [f64],
    block_of_step: Vec<usize>,
    n_intervals: usize,
}

impl BlockFamily<'_> {
    fn control(&self, idx: &[usize], noise: &BrownianBundle) -> Result<PiecewiseControl> {
        let values = self.block_of_step.iter().map(|&j| self.levels[idx[j]]).collect();
        PiecewiseControl::new(noise.grid().clone(), values, ControlKind::AuxHolding)
    }
}

/// Sample mean of u(w_T) for a block control, either from per-path block
/// sums (constant σ, where w_T is affine in the block values) or by full
/// simulation.
enum Evaluator<'a> {
    Affine {
        w_s: f64,
        delta: f64,
        /// −θ⁻ⁱ Σ x⁻ⁱΔt per block.
        drift: Vec<f64>,
        sigma: f64,
        /// Σ ΔB per path and block, path-major.
        shocks: Vec<f64>,
        n_blocks: usize,
    },
    Simulated {
        scenario: &'a Scenario,
        who: Investor,
        x_opp: &'a PiecewiseControl,
        noise: &'a BrownianBundle,
    },
}

impl<'a> Evaluator<'a> {
    fn new(
        scenario: &'a Scenario,
        who: Investor,
        x_opp: &'a PiecewiseControl,
        noise: &'a BrownianBundle,
        family: &BlockFamily<'_>,
    ) -> Self {
        let n_steps = noise.n_steps();
        match scenario.params().vol.as_constant() {
            Some(sigma) => {
                let theta_opp = scenario.theta(who.opponent());
                let mut drift = vec![0.0; family.n_intervals];
                for k in 0..n_steps {
                    drift[family.block_of_step[k]] += -theta_opp * x_opp.value(k) * noise.grid().dt(k);
                }
                Evaluator::Affine {
                    w_s: scenario.initial_wealth(who),
                    delta: scenario.delta(who),
                    drift,
                    sigma,
                    shocks: noise.block_sums(&family.block_of_step, family.n_intervals).concat(),
                    n_blocks: family.n_intervals,
                }
            }
            None => Evaluator::Simulated {
                scenario,
                who,
                x_opp,
                noise,
            },
        }
    }

    fn mean(&self, family: &BlockFamily<'_>, idx: &[usize]) -> Result<f64> {
        match self {
            Evaluator::Affine {
                w_s,
                delta,
                drift,
                sigma,
                shocks,
                n_blocks,
            } => {
                let c: Vec<f64> = idx.iter().map(|&i| family.levels[i]).collect();
                let base: f64 = *w_s + c.iter().zip(drift).map(|(c, d)| c * d).sum::<f64>();
                // fixed chunking keeps the reduction order independent of threads
                let partial: Vec<f64> = shocks
                    .par_chunks(n_blocks * 1024)
                    .map(|chunk| {
                        chunk
                            .chunks(*n_blocks)
                            .map(|b| {
                                let w = base + sigma * c.iter().zip(b).map(|(c, b)| c * b).sum::<f64>();
                                cara(w, *delta)
                            })
                            .sum::<f64>()
                    })
                    .collect();
                Ok(partial.iter().sum::<f64>() / (shocks.len() / n_blocks) as f64)
            }
            Evaluator::Simulated {
                scenario,
                who,
                x_opp,
                noise,
            } => Ok(estimate_value(scenario, *who, &family.control(idx, noise)?, x_opp, noise)?.mean),
        }
    }
}

/// Best piecewise-constant auxiliary holding with values in `levels` on
/// `n_intervals` equal blocks of the noise grid. Enumerates when the family
/// is small enough, otherwise runs a seeded random-restart coordinate search
/// with a fixed evaluation budget. Ties go to the lexicographically smallest
/// level assignment.
pub fn brute_force_best(
    scenario: &Scenario,
    who: Investor,
    x_opp: &PiecewiseControl,
    levels: &[f64],
    n_intervals: usize,
    noise: &BrownianBundle,
    budget: SearchBudget,
) -> Result<SearchResult> {
    let n_steps = noise.n_steps();
    if levels.is_empty() || n_intervals == 0 || n_intervals > n_steps {
        return Err(Error::BadParams(format!(
            "need at least one level and 1..={n_steps} intervals, got {} levels and {n_intervals} intervals",
            levels.len()
        )));
    }
    if let Some(bad) = levels.iter().find(|l| !scenario.bounds().contains(**l)) {
        return Err(Error::BadParams(format!("level {bad} lies outside the control bounds")));
    }
    x_opp.require_grid(noise.grid(), "opponent rate")?;

    let family = BlockFamily {
        levels,
        block_of_step: (0..n_steps).map(|k| k * n_intervals / n_steps).collect(),
        n_intervals,
    };
    let evaluator = Evaluator::new(scenario, who, x_opp, noise, &family);

    let size = (levels.len() as f64).powi(n_intervals as i32);
    let (best_idx, evaluations, exhaustive) = if size <= budget.max_enumeration as f64 {
        let (idx, n) = enumerate(&family, &evaluator)?;
        (idx, n, true)
    } else if budget.random_evaluations > 0 {
        let (idx, n) = random_search(&family, &evaluator, budget)?;
        (idx, n, false)
    } else {
        return Err(Error::BudgetExceeded {
            required: size,
            budget: budget.max_enumeration,
        });
    };
    let best = family.control(&best_idx, noise)?;
    let estimate = estimate_value(scenario, who, &best, x_opp, noise)?;
    Ok(SearchResult {
        best,
        best_levels: best_idx,
        estimate,
        evaluations,
        exhaustive,
    })
}

fn better(mean: f64, idx: &[usize], best: &Option<(f64, Vec<usize>)>) -> bool {
    match best {
        None => true,
        Some((m, i)) => mean > *m || (mean == *m && idx < i.as_slice()),
    }
}

fn enumerate(family: &BlockFamily<'_>, eval: &Evaluator<'_>) -> Result<(Vec<usize>, usize)> {
    let l = family.levels.len();
    let mut idx = vec![0usize; family.n_intervals];
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut count = 0;
    loop {
        let m = eval.mean(family, &idx)?;
        count += 1;
        if better(m, &idx, &best) {
            best = Some((m, idx.clone()));
        }
        // odometer, last block fastest
        let mut j = family.n_intervals;
        loop {
            if j == 0 {
                return Ok((best.unwrap().1, count));
            }
            j -= 1;
            idx[j] += 1;
            if idx[j] < l {
                break;
            }
            idx[j] = 0;
        }
    }
}

fn random_search(family: &BlockFamily<'_>, eval: &Evaluator<'_>, budget: SearchBudget) -> Result<(Vec<usize>, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(budget.seed);
    let all: Vec<usize> = (0..family.levels.len()).collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut count = 0;
    while count < budget.random_evaluations {
        let mut cur: Vec<usize> = (0..family.n_intervals)
            .map(|_| *all.choose(&mut rng).unwrap())
            .collect();
        let mut cur_m = eval.mean(family, &cur)?;
        count += 1;
        if better(cur_m, &cur, &best) {
            best = Some((cur_m, cur.clone()));
        }
        // coordinate descent: move one block one level at a time while it helps
        let mut improved = true;
        while improved && count < budget.random_evaluations {
            improved = false;
            let start = rng.random_range(0..family.n_intervals);
            for off in 0..family.n_intervals {
                let j = (start + off) % family.n_intervals;
                for step in [-1isize, 1] {
                    if count >= budget.random_evaluations {
                        break;
                    }
                    let next = cur[j] as isize + step;
                    if next < 0 || next as usize >= family.levels.len() {
                        continue;
                    }
                    let mut cand = cur.clone();
                    cand[j] = next as usize;
                    let m = eval.mean(family, &cand)?;
                    count += 1;
                    if better(m, &cand, &best) {
                        best = Some((m, cand.clone()));
                    }
                    if m > cur_m {
                        cur = cand;
                        cur_m = m;
                        improved = true;
                    }
                }
            }
        }
    }
    Ok((best.unwrap().1, count))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DominanceReport {
    pub candidate: ValueEstimate,
    pub challengers: Vec<(String, ValueEstimate)>,
    /// Smallest (candidate − challenger)/combined SE.
    pub margin: f64,
    pub pass: bool,
}

pub fn dominance_check(candidate: ValueEstimate, challengers: Vec<(String, ValueEstimate)>) -> DominanceReport {
    let margin = challengers
        .iter()
        .map(|(_, c)| z_score(&candidate, c))
        .fold(f64::INFINITY, f64::min);
    DominanceReport {
        candidate,
        challengers,
        margin,
        pass: margin > -Z_GATE,
    }
}

/// Value of the best response to `x_opp` played in the original game from
/// state `y` at time s: block trade from the current holding to πⁱ*_s along
/// the flow, then trade at xⁱ* while the opponent trades at x⁻ⁱ. The terminal
/// criterion is u applied to the auxiliary wealth of Y_T, i.e. wealth after
/// liquidating along the flow.
pub fn singular_value(
    scenario: &Scenario,
    who: Investor,
    y: &GameState,
    x_opp: &PiecewiseControl,
    noise: &BrownianBundle,
) -> Result<ValueEstimate> {
    let br = best_response_path(scenario, who, x_opp, &PriceProxy::None)?;
    singular_value_with(scenario, who, y, x_opp, &br, noise)
}

fn singular_value_with(
    scenario: &Scenario,
    who: Investor,
    y: &GameState,
    x_opp: &PiecewiseControl,
    br: &BestResponse,
    noise: &BrownianBundle,
) -> Result<ValueEstimate> {
    let theta = scenario.theta(who);
    let start = flow_full(y.holding(who) - br.initial_jump, y, who, theta);
    let (x1, x2) = match who {
        Investor::One => (&br.rate_path, x_opp),
        Investor::Two => (x_opp, &br.rate_path),
    };
    let end = GameSim::new(scenario, x1, x2, noise)?.with_start(start).terminal()?;
    let delta = scenario.delta(who);
    let u: Vec<f64> = end
        .states
        .iter()
        .map(|s| cara(aux_coords(s, who, theta).w_own, delta))
        .collect();
    Ok(ValueEstimate::from_samples(&u, noise.seed()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Comparison {
    pub value_a: ValueEstimate,
    pub value_b: ValueEstimate,
    pub z: f64,
}

impl Comparison {
    fn new(a: ValueEstimate, b: ValueEstimate) -> Self {
        Comparison {
            value_a: a,
            value_b: b,
            z: z_score(&a, &b),
        }
    }

    pub fn pass(&self) -> bool {
        self.z.abs() < Z_GATE
    }
}

/// Best-response value at y against the value at φⁱ(q, y).
pub fn invariance_check(
    scenario: &Scenario,
    who: Investor,
    y: &GameState,
    q: f64,
    x_opp: &PiecewiseControl,
    noise: &BrownianBundle,
) -> Result<Comparison> {
    let br = best_response_path(scenario, who, x_opp, &PriceProxy::None)?;
    let moved = flow_full(q, y, who, scenario.theta(who));
    let a = singular_value_with(scenario, who, y, x_opp, &br, noise)?;
    let b = singular_value_with(scenario, who, &moved, x_opp, &br, noise)?;
    Ok(Comparison::new(a, b))
}

/// Invariance on the auxiliary side: the optimal auxiliary control started
/// from Z and from the flow-translated Z (own holding `own_holding`).
pub fn aux_invariance_check(
    scenario: &Scenario,
    who: Investor,
    q: f64,
    x_opp: &PiecewiseControl,
    noise: &BrownianBundle,
) -> Result<Comparison> {
    let br = best_response_path(scenario, who, x_opp, &PriceProxy::None)?;
    let y = scenario.initial_state();
    let theta = scenario.theta(who);
    let z = aux_coords(&y, who, theta);
    let z_moved = aux_coords(&flow_full(q, &y, who, theta), who, theta);
    let a = terminal_utility(
        scenario,
        who,
        AuxSim::new(scenario, who, &br.pi_path, x_opp, noise)?.with_start(z),
        noise,
    )?;
    let b = terminal_utility(
        scenario,
        who,
        AuxSim::new(scenario, who, &br.pi_path, x_opp, noise)?.with_start(z_moved),
        noise,
    )?;
    Ok(Comparison::new(a, b))
}

/// Singular-side value of the best response from the initial state against
/// the auxiliary-side value of πⁱ* from the corresponding auxiliary state.
pub fn equivalence_check(
    scenario: &Scenario,
    who: Investor,
    x_opp: &PiecewiseControl,
    noise: &BrownianBundle,
) -> Result<Comparison> {
    let br = best_response_path(scenario, who, x_opp, &PriceProxy::None)?;
    let y = scenario.initial_state();
    let a = singular_value_with(scenario, who, &y, x_opp, &br, noise)?;
    let z = aux_coords(&y, who, scenario.theta(who));
    let b = terminal_utility(
        scenario,
        who,
        AuxSim::new(scenario, who, &br.pi_path, x_opp, noise)?.with_start(z),
        noise,
    )?;
    Ok(Comparison::new(a, b))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConcavityReport {
    pub h_mix: f64,
    pub h_average: f64,
    /// Standard error of the pathwise gap u(mix) − [ξu(a) + (1−ξ)u(b)].
    pub std_error: f64,
    pub pass: bool,
    /// Whether the controls differ enough for strict concavity to be asserted.
    pub strict_checked: bool,
    pub strict: bool,
    pub degenerate: bool,
}

/// H(ξπ_a + (1−ξ)π_b) ≥ ξH(π_a) + (1−ξ)H(π_b) − 3·SE on common paths.
pub fn concavity_check(
    scenario: &Scenario,
    who: Investor,
    pi_a: &PiecewiseControl,
    pi_b: &PiecewiseControl,
    xi: f64,
    x_opp: &PiecewiseControl,
    noise: &BrownianBundle,
) -> Result<ConcavityReport> {
    if !(xi > 0.0 && xi < 1.0) {
        return Err(Error::BadParams(format!("mixing weight must lie in (0, 1), got {xi}")));
    }
    pi_b.require_grid(pi_a.grid(), "second control")?;
    let mix_values: Vec<f64> = pi_a
        .values()
        .iter()
        .zip(pi_b.values())
        .map(|(a, b)| xi * a + (1.0 - xi) * b)
        .collect();
    let mix = PiecewiseControl::new(pi_a.grid().clone(), mix_values, ControlKind::AuxHolding)?;
    let delta = scenario.delta(who);
    let utilities = |pi: &PiecewiseControl| -> Result<Vec<f64>> {
        Ok(AuxSim::new(scenario, who, pi, x_opp, noise)?
            .terminal()?
            .iter()
            .map(|z| cara(z.w_own, delta))
            .collect())
    };
    let (ua, ub, um) = (utilities(pi_a)?, utilities(pi_b)?, utilities(&mix)?);
    let gap: Vec<f64> = (0..um.len())
        .map(|p| um[p] - (xi * ua[p] + (1.0 - xi) * ub[p]))
        .collect();
    let g = ValueEstimate::from_samples(&gap, noise.seed());
    let h_mix = ValueEstimate::from_samples(&um, noise.seed()).mean;
    let h_average = h_mix - g.mean;

    let differing = pi_a.values().iter().zip(pi_b.values()).filter(|(a, b)| a != b).count();
    let strict_checked = differing * 10 >= pi_a.values().len();
    Ok(ConcavityReport {
        h_mix,
        h_average,
        std_error: g.std_error,
        pass: g.mean >= -Z_GATE * g.std_error,
        strict_checked,
        strict: g.mean > 0.0,
        degenerate: differing == 0,
    })
}

/// Machine-readable record of one statistical check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub check: String,
    pub inputs_digest: String,
    pub mean_a: f64,
    pub mean_b: f64,
    pub se: f64,
    pub z: f64,
    pub verdict: &'static str,
}

impl CheckReport {
    pub fn from_comparison(check: impl Into<String>, inputs: &[&str], c: &Comparison) -> Self {
        CheckReport {
            check: check.into(),
            inputs_digest: inputs_digest(inputs),
            mean_a: c.value_a.mean,
            mean_b: c.value_b.mean,
            se: c.value_a.std_error.hypot(c.value_b.std_error),
            z: c.z,
            verdict: if c.pass() { "pass" } else { "fail" },
        }
    }
}

/// SHA-256 over the newline-joined input descriptions, hex encoded.
pub fn inputs_digest(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// Pick `n` random values from `levels`, for ad-hoc challengers.
pub fn random_levels(levels: &[f64], n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| *levels.choose(&mut rng).unwrap()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::nash_equilibrium;
    use crate::model::{validate_market, ControlBounds, MarketParams, Preferences, VolatilitySpec};

    fn scenario(sigma: f64, pi0: (f64, f64), delta: (f64, f64), horizon: f64) -> Scenario {
        validate_market(
            MarketParams {
                theta_1: 1.0,
                theta_2: 1.0,
                vol: VolatilitySpec::constant(sigma),
                start: 0.0,
                horizon,
                s0: 100.0,
                w1_0: 0.0,
                w2_0: 0.0,
                pi1_0: pi0.0,
                pi2_0: pi0.1,
            },
            Preferences {
                delta_1: delta.0,
                delta_2: delta.1,
            },
            ControlBounds::symmetric(50.0),
        )
        .unwrap()
    }

    fn reference() -> Scenario {
        scenario(0.5, (0.6, -1.0), (4.0, 1.0), 5.0)
    }

    #[test]
    fn summary_statistics() {
        let e = ValueEstimate::from_samples(&[-0.3; 7], 1);
        assert_eq!((e.mean, e.std_error), (-0.3, 0.0));
        let e = ValueEstimate::from_samples(&[1.0, 2.0, 3.0, 4.0], 1);
        assert_eq!(e.mean, 2.5);
        assert!((e.std_error - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert_eq!(z_score(&e, &e), 0.0);
    }

    #[test]
    fn idle_value_is_exact() {
        let s = scenario(0.3, (1.0, 1.0), (2.0, 1.0), 1.0);
        let g = s.grid(50);
        let zero_pi = PiecewiseControl::zero(g.clone(), ControlKind::AuxHolding);
        let zero_x = PiecewiseControl::zero(g.clone(), ControlKind::TradingRate);
        let noise = BrownianBundle::new(g, 1000, 5);
        let e = estimate_value(&s, Investor::One, &zero_pi, &zero_x, &noise).unwrap();
        assert_eq!(e.mean, cara(0.0, 2.0));
        assert_eq!(e.std_error, 0.0);
    }

    #[test]
    fn constant_holding_matches_gaussian_formula() {
        let s = scenario(0.3, (1.0, 1.0), (2.0, 1.0), 1.0);
        let g = s.grid(50);
        let noise = BrownianBundle::new(g.clone(), 20_000, 6);
        let x = PiecewiseControl::from_fn(g.clone(), ControlKind::TradingRate, |t| 0.5 - t);
        for (c, seed) in [(0.8, 1u64), (-1.5, 2)] {
            let pi = PiecewiseControl::constant(g.clone(), c, ControlKind::AuxHolding);
            let e = estimate_value(&s, Investor::One, &pi, &x, &noise).unwrap();
            let exact = cara_gaussian_value(&s, Investor::One, c, &x).unwrap();
            assert!(
                (e.mean - exact).abs() < 3.0 * e.std_error,
                "seed {seed}: {} vs {exact}",
                e.mean
            );
            if x.integral() == 0.0 {
                assert!(exact < cara(0.0, 2.0));
            }
        }
    }

    #[test]
    fn standard_error_scales_with_sample_size() {
        let s = scenario(0.3, (1.0, 1.0), (1.0, 1.0), 1.0);
        let g = s.grid(10);
        let pi = PiecewiseControl::constant(g.clone(), 1.0, ControlKind::AuxHolding);
        let x = PiecewiseControl::zero(g.clone(), ControlKind::TradingRate);
        let small = estimate_value(&s, Investor::One, &pi, &x, &BrownianBundle::new(g.clone(), 10_000, 3)).unwrap();
        let large = estimate_value(&s, Investor::One, &pi, &x, &BrownianBundle::new(g, 100_000, 3)).unwrap();
        let ratio = small.std_error / large.std_error;
        assert!((ratio / 10f64.sqrt() - 1.0).abs() < 0.2, "{ratio}");
    }

    #[test]
    fn zero_opponent_search_finds_zero() {
        let s = scenario(0.3, (1.0, 1.0), (1.0, 1.0), 1.0);
        let g = s.grid(40);
        let x = PiecewiseControl::zero(g.clone(), ControlKind::TradingRate);
        let noise = BrownianBundle::new(g, 2000, 9);
        let r = brute_force_best(
            &s,
            Investor::One,
            &x,
            &[-1.0, 0.0, 1.0],
            4,
            &noise,
            SearchBudget::default(),
        )
        .unwrap();
        assert!(r.exhaustive);
        assert_eq!(r.evaluations, 81);
        assert!(r.best.values().iter().all(|&v| v == 0.0));
        assert_eq!(r.estimate.mean, cara(0.0, 1.0));
        assert_eq!(r.estimate.std_error, 0.0);
    }

    #[test]
    fn search_respects_budget_and_bounds() {
        let s = scenario(0.3, (1.0, 1.0), (1.0, 1.0), 1.0);
        let g = s.grid(40);
        let x = PiecewiseControl::constant(g.clone(), -0.2, ControlKind::TradingRate);
        let noise = BrownianBundle::new(g, 500, 9);
        let levels: Vec<f64> = (0..11).map(|i| -1.0 + 0.2 * i as f64).collect();
        let budget = SearchBudget {
            random_evaluations: 300,
            ..SearchBudget::default()
        };
        let r = brute_force_best(&s, Investor::One, &x, &levels, 8, &noise, budget).unwrap();
        assert!(!r.exhaustive);
        assert_eq!(r.evaluations, 300);
        r.best.check_bounds(s.bounds()).unwrap();
        let again = brute_force_best(&s, Investor::One, &x, &levels, 8, &noise, budget).unwrap();
        assert_eq!(r.best_levels, again.best_levels);

        let none = SearchBudget {
            random_evaluations: 0,
            ..budget
        };
        assert!(matches!(
            brute_force_best(&s, Investor::One, &x, &levels, 8, &noise, none),
            Err(Error::BudgetExceeded { .. })
        ));
        assert!(brute_force_best(&s, Investor::One, &x, &[60.0], 2, &noise, budget).is_err());
    }

    #[test]
    fn affine_evaluator_agrees_with_simulation() {
        let s = scenario(0.4, (1.0, 1.0), (1.5, 1.0), 1.0);
        let g = s.grid(30);
        let x = PiecewiseControl::from_fn(g.clone(), ControlKind::TradingRate, |t| t - 0.3);
        let noise = BrownianBundle::new(g, 300, 4);
        let levels = [-0.5, 0.25, 1.0];
        let r = brute_force_best(&s, Investor::Two, &x, &levels, 3, &noise, SearchBudget::default()).unwrap();
        let family = BlockFamily {
            levels: &levels,
            block_of_step: (0..30).map(|k| k * 3 / 30).collect(),
            n_intervals: 3,
        };
        let sim = Evaluator::Simulated {
            scenario: &s,
            who: Investor::Two,
            x_opp: &x,
            noise: &noise,
        };
        let affine = Evaluator::new(&s, Investor::Two, &x, &noise, &family);
        assert!(matches!(affine, Evaluator::Affine { .. }));
        for idx in [[0, 1, 2], [2, 2, 0], r.best_levels.clone().try_into().unwrap()] {
            let a = affine.mean(&family, &idx).unwrap();
            let b = sim.mean(&family, &idx).unwrap();
            assert!((a - b).abs() < 1e-12 * b.abs(), "{a} vs {b}");
        }
        assert_eq!(sim.mean(&family, &r.best_levels).unwrap(), r.estimate.mean);
    }

    #[test]
    fn finer_partitions_do_not_lose_value() {
        let s = reference();
        let sol = nash_equilibrium(&s).unwrap();
        let g = s.grid(80);
        let x = sol.rate_control(Investor::Two, &g);
        let noise = BrownianBundle::new(g, 2000, 12);
        let levels = [0.2, 0.35, 0.5, 0.65];
        let values: Vec<ValueEstimate> = [1usize, 2, 4]
            .iter()
            .map(|&n| {
                brute_force_best(&s, Investor::One, &x, &levels, n, &noise, SearchBudget::default())
                    .unwrap()
                    .estimate
            })
            .collect();
        for w in values.windows(2) {
            assert!(w[1].mean >= w[0].mean - 1e-12, "{values:?}");
        }
    }

    #[test]
    fn dominance_gate() {
        let c = ValueEstimate {
            mean: 1.0,
            std_error: 0.1,
            n_paths: 10,
            seed: 0,
        };
        let close = ValueEstimate { mean: 1.2, ..c };
        let far = ValueEstimate { mean: 2.0, ..c };
        assert!(dominance_check(c, vec![("close".into(), close)]).pass);
        let r = dominance_check(c, vec![("close".into(), close), ("far".into(), far)]);
        assert!(!r.pass);
        assert!((r.margin + 1.0 / 0.1f64.hypot(0.1)).abs() < 1e-12);
    }

    #[test]
    fn zero_flow_gives_identical_values() {
        let s = reference();
        let sol = nash_equilibrium(&s).unwrap();
        let g = s.grid(100);
        let x = sol.rate_control(Investor::Two, &g);
        let noise = BrownianBundle::new(g, 500, 1);
        let y = s.initial_state();
        let c = invariance_check(&s, Investor::One, &y, 0.0, &x, &noise).unwrap();
        assert_eq!(c.value_a, c.value_b);
        assert_eq!(c.z, 0.0);
    }

    #[test]
    fn flow_translation_and_representation_agree() {
        let s = reference();
        let sol = nash_equilibrium(&s).unwrap();
        let g = s.grid(200);
        let noise = BrownianBundle::new(g.clone(), 4000, 77);
        for who in Investor::BOTH {
            let x = sol.rate_control(who.opponent(), &g);
            let y = s.initial_state();
            for q in [0.5, -1.0] {
                assert!(invariance_check(&s, who, &y, q, &x, &noise).unwrap().pass());
                assert!(aux_invariance_check(&s, who, q, &x, &noise).unwrap().pass());
            }
            let e = equivalence_check(&s, who, &x, &noise).unwrap();
            assert!(e.pass(), "{e:?}");
        }
    }

    #[test]
    fn concavity_examples() {
        let s = scenario(0.3, (1.0, 1.0), (1.0, 1.0), 1.0);
        let g = s.grid(20);
        let x = PiecewiseControl::zero(g.clone(), ControlKind::TradingRate);
        let noise = BrownianBundle::new(g.clone(), 2000, 2);
        let one = PiecewiseControl::constant(g.clone(), 1.0, ControlKind::AuxHolding);
        let minus = PiecewiseControl::constant(g.clone(), -1.0, ControlKind::AuxHolding);
        let r = concavity_check(&s, Investor::One, &one, &minus, 0.5, &x, &noise).unwrap();
        assert!(r.pass && r.strict_checked && r.strict);
        assert_eq!(r.h_mix, cara(0.0, 1.0));

        let r = concavity_check(&s, Investor::One, &one, &one, 0.5, &x, &noise).unwrap();
        assert!(r.degenerate && !r.strict_checked);
        assert!((r.h_mix - r.h_average).abs() < 1e-15);

        let xs = PiecewiseControl::from_fn(g.clone(), ControlKind::TradingRate, |t| 1.0 - 2.0 * t);
        for trial in 0..20u64 {
            let a = PiecewiseControl::new(
                g.clone(),
                random_levels(&[-2.0, -1.0, 0.0, 0.5, 1.5], 20, trial),
                ControlKind::AuxHolding,
            )
            .unwrap();
            let b = PiecewiseControl::new(
                g.clone(),
                random_levels(&[-1.5, -0.5, 0.25, 1.0, 2.0], 20, 100 + trial),
                ControlKind::AuxHolding,
            )
            .unwrap();
            let xi = 0.1 + 0.04 * trial as f64;
            let r = concavity_check(&s, Investor::Two, &a, &b, xi, &xs, &noise).unwrap();
            assert!(r.pass && r.strict, "trial {trial}: {r:?}");
        }
    }

    #[test]
    fn digests_are_stable() {
        let d = inputs_digest(&["a", "b"]);
        assert_eq!(d.len(), 64);
        assert_eq!(d, inputs_digest(&["a", "b"]));
        assert_ne!(d, inputs_digest(&["ab"]));
    }
}
