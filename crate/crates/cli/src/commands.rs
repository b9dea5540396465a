use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use mcg_core::arbitrage::detect_dynamic_arbitrage;
use mcg_core::bestresponse::{best_response_path, write_best_response_csv, PriceProxy};
use mcg_core::dynamics::{wealth_identity_residual, write_paths_csv, BrownianBundle, GameSim};
use mcg_core::equilibrium::{
    check_conditions, nash_equilibrium, numerical_equilibrium, write_equilibrium_csv, ConditionsReport,
};
use mcg_core::oracle::ValueEstimate;
use mcg_core::{cara_utility, ControlKind, Error, Investor, PiecewiseControl, Scenario, TimeGrid};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ConfigError, ScenarioConfig};

pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_CONDITIONS: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;
pub const EXIT_CHECK: i32 = 4;

/// A failed command: process exit code plus message.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(EXIT_INTERNAL, message)
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::new(EXIT_CONFIG, e.to_string())
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::ConditionsFailed(_) => EXIT_CONDITIONS,
            Error::Invalid(_) | Error::NonPositiveDelta(_) | Error::BadParams(_) => EXIT_CONFIG,
            _ => EXIT_INTERNAL,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::internal(format!("i/o error: {e}"))
    }
}

pub type CmdResult<T = ()> = Result<T, Failure>;

/// Everything a subcommand needs.
pub struct Context {
    pub config: ScenarioConfig,
    pub scenario: Scenario,
    pub out: PathBuf,
}

impl Context {
    pub fn new(config: ScenarioConfig, out: Option<PathBuf>) -> CmdResult<Context> {
        let scenario = config.scenario()?;
        let out = out
            .or_else(|| config.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        fs::create_dir_all(&out)?;
        Ok(Context { config, scenario, out })
    }

    pub fn grid(&self) -> TimeGrid {
        self.scenario.grid(self.config.n_steps)
    }

    pub fn noise(&self) -> BrownianBundle {
        BrownianBundle::new(self.grid(), self.config.n_paths, self.config.seed)
    }

    fn create(&self, name: &str) -> CmdResult<BufWriter<File>> {
        Ok(BufWriter::new(File::create(self.out.join(name))?))
    }

    pub fn write_json(&self, name: &str, value: &impl Serialize) -> CmdResult {
        let mut f = self.create(name)?;
        serde_json::to_writer_pretty(&mut f, value).map_err(|e| Failure::internal(e.to_string()))?;
        writeln!(f)?;
        f.flush()?;
        Ok(())
    }
}

fn conditions_json(r: &ConditionsReport) -> Value {
    let mut v = serde_json::to_value(r).expect("plain struct");
    v["failed"] = json!(r.failed());
    v["all_hold"] = json!(r.all_hold());
    v
}

pub fn cmd_equilibrium(ctx: &Context) -> CmdResult {
    let report = check_conditions(&ctx.scenario)?;
    ctx.write_json("conditions.json", &conditions_json(&report))?;
    let grid = ctx.grid();
    let sol = match nash_equilibrium(&ctx.scenario) {
        Ok(sol) => sol,
        Err(Error::ConditionsFailed(r)) => {
            if !r.cond_i && r.cond_ii {
                // ϕ = 1: offer the numerical solution, labelled as such
                let num = numerical_equilibrium(&ctx.scenario, &grid, 4)?;
                let mut f = ctx.create("equilibrium_numerical.csv")?;
                writeln!(f, "# {}", num.method)?;
                writeln!(f, "t,pi1,pi2")?;
                for k in 0..num.t.len() {
                    writeln!(f, "{},{},{}", num.t[k], num.pi1[k], num.pi2[k])?;
                }
                f.flush()?;
            }
            return Err(Failure::new(
                EXIT_CONDITIONS,
                format!("equilibrium conditions failed: {}", r.failed().join(", ")),
            ));
        }
        Err(e) => return Err(e.into()),
    };
    let mut f = ctx.create("equilibrium.csv")?;
    write_equilibrium_csv(&mut f, &sol, &grid)?;
    f.flush()?;
    ctx.write_json(
        "crossing.json",
        &json!({
            "investor_1": sol.crossing_time(Investor::One),
            "investor_2": sol.crossing_time(Investor::Two),
            "chi": sol.constants.chi,
            "varphi": sol.constants.varphi,
        }),
    )?;
    println!(
        "chi = {}, varphi = {}, crossing times: investor 1 {:?}, investor 2 {:?}",
        sol.constants.chi,
        sol.constants.varphi,
        sol.crossing_time(Investor::One),
        sol.crossing_time(Investor::Two)
    );
    Ok(())
}

/// Read a control file with one `t,x` row per grid interval (header optional).
pub fn read_control(path: &Path, grid: &TimeGrid, kind: ControlKind) -> CmdResult<PiecewiseControl> {
    let bad = |msg: String| Failure::new(EXIT_CONFIG, format!("{}: {msg}", path.display()));
    let text = fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || (i == 0 && line.starts_with(|c: char| c.is_alphabetic())) {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: Option<(f64, f64)> = match cols.as_slice() {
            [t, x] => t.parse().ok().zip(x.parse().ok()),
            _ => None,
        };
        let (t, x) = parsed.ok_or_else(|| bad(format!("line {}: expected 't,x', got '{line}'", i + 1)))?;
        let k = values.len();
        if k >= grid.n_steps() {
            return Err(bad(format!("more rows than the {} grid intervals", grid.n_steps())));
        }
        let node = grid.nodes()[k];
        if (t - node).abs() > 1e-9 * (1.0 + node.abs()) {
            return Err(bad(format!("line {}: time {t} does not match grid node {node}", i + 1)));
        }
        values.push(x);
    }
    if values.len() != grid.n_steps() {
        return Err(bad(format!(
            "{} rows for {} grid intervals",
            values.len(),
            grid.n_steps()
        )));
    }
    PiecewiseControl::new(grid.clone(), values, kind).map_err(|e| bad(e.to_string()))
}

fn estimate_json(e: &ValueEstimate) -> Value {
    json!({ "mean": e.mean, "se": e.std_error })
}

pub struct SimulateArgs<'a> {
    pub x1: Option<&'a Path>,
    pub x2: Option<&'a Path>,
    pub equilibrium: bool,
    pub dump_paths: usize,
}

pub fn cmd_simulate(ctx: &Context, args: SimulateArgs<'_>) -> CmdResult {
    let grid = ctx.grid();
    let eq = if args.equilibrium {
        Some(nash_equilibrium(&ctx.scenario)?)
    } else {
        None
    };
    let control = |file: Option<&Path>, who: Investor| -> CmdResult<PiecewiseControl> {
        match (file, &eq) {
            (Some(p), _) => read_control(p, &grid, ControlKind::TradingRate),
            (None, Some(sol)) => Ok(sol.rate_control(who, &grid)),
            (None, None) => Ok(PiecewiseControl::zero(grid.clone(), ControlKind::TradingRate)),
        }
    };
    let x1 = control(args.x1, Investor::One)?;
    let x2 = control(args.x2, Investor::Two)?;
    let noise = ctx.noise();
    let sim = GameSim::new(&ctx.scenario, &x1, &x2, &noise)?;
    let terminal = sim.terminal()?;

    let dumped: Vec<_> = (0..args.dump_paths.min(ctx.config.n_paths))
        .map(|p| sim.path(p))
        .collect::<Result<_, _>>()?;
    let mut f = ctx.create("paths.csv")?;
    write_paths_csv(&mut f, &dumped, 0)?;
    f.flush()?;

    let column = |f: fn(&mcg_core::GameState) -> f64| {
        let v: Vec<f64> = terminal.states.iter().map(f).collect();
        estimate_json(&ValueEstimate::from_samples(&v, ctx.config.seed))
    };
    let utility = |who: Investor| -> CmdResult<Value> {
        let d = ctx.scenario.delta(who);
        let v: Vec<f64> = terminal
            .states
            .iter()
            .map(|y| cara_utility(y.wealth(who), d))
            .collect::<Result<_, _>>()?;
        Ok(estimate_json(&ValueEstimate::from_samples(&v, ctx.config.seed)))
    };
    let residual = |who: Investor| {
        dumped
            .iter()
            .map(|p| wealth_identity_residual(p, who, &ctx.scenario))
            .fold(0.0, f64::max)
    };
    let s_t = column(|y| y.s);
    let summary = json!({
        "n_paths": ctx.config.n_paths,
        "n_steps": ctx.config.n_steps,
        "seed": ctx.config.seed,
        "terminal": {
            "S": s_t,
            "pi1": column(|y| y.pi_1),
            "pi2": column(|y| y.pi_2),
            "W1": column(|y| y.w_1),
            "W2": column(|y| y.w_2),
        },
        "S_T_minus_S0": s_t["mean"].as_f64().unwrap() - ctx.config.s0,
        "utility": { "investor_1": utility(Investor::One)?, "investor_2": utility(Investor::Two)? },
        "wealth_identity_max_residual": {
            "investor_1": residual(Investor::One),
            "investor_2": residual(Investor::Two),
            "over_paths": dumped.len(),
        },
        "diagnostics": terminal.diagnostics,
    });
    ctx.write_json("summary.json", &summary)?;
    println!("simulated {} paths, {} steps", ctx.config.n_paths, ctx.config.n_steps);
    Ok(())
}

pub fn cmd_best_response(ctx: &Context, who: Investor, x_opp: Option<&Path>) -> CmdResult {
    let grid = ctx.grid();
    let x = match x_opp {
        Some(p) => read_control(p, &grid, ControlKind::TradingRate)?,
        None => nash_equilibrium(&ctx.scenario)?.rate_control(who.opponent(), &grid),
    };
    let br = best_response_path(&ctx.scenario, who, &x, &PriceProxy::None)?;
    let mut f = ctx.create("best_response.csv")?;
    write_best_response_csv(&mut f, &br)?;
    f.flush()?;
    for w in &br.warnings {
        eprintln!("warning: {w:?}");
    }
    println!("{who}: initial jump {}", br.initial_jump);
    Ok(())
}

pub fn cmd_arbitrage(ctx: &Context, alphas: &[f64], betas: &[f64], horizon: f64) -> CmdResult {
    let kappa = ctx.config.impact()?;
    let verdict = detect_dynamic_arbitrage(&kappa, alphas, betas, horizon)?;
    let mut v = serde_json::to_value(verdict.report()).expect("plain struct");
    v["kappa"] = json!(kappa.name());
    ctx.write_json("arbitrage.json", &v)?;
    println!("{}", serde_json::to_string(&v).expect("plain json"));
    Ok(())
}
