//! `key = value` scenario files.
//!
//! ```text
//! # reference two-investor game
//! theta1 = 1
//! theta2 = 1
//! sigma = 0.5
//! delta1 = 4
//! delta2 = 1
//! T = 5
//! S0 = 100
//! pi1_0 = 0.6
//! pi2_0 = -1
//! pi_lo = -50
//! pi_hi = 50
//! ```
//!
//! Blank lines and `#` comments are ignored. `s`, `W1_0`, `W2_0` default to 0,
//! `n_steps` to 1000 per unit of time, `n_paths` to 10000, `seed` to 0 and
//! `kappa` to linear impact with θ¹.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use mcg_core::arbitrage::ImpactFunction;
use mcg_core::{validate_market, ControlBounds, MarketParams, Preferences, Scenario, VolatilitySpec};

const REQUIRED: [&str; 11] = [
    "theta1", "theta2", "sigma", "delta1", "delta2", "T", "S0", "pi1_0", "pi2_0", "pi_lo", "pi_hi",
];
const OPTIONAL_NUMERIC: [&str; 3] = ["s", "W1_0", "W2_0"];
const RUN_KEYS: [&str; 5] = ["n_steps", "n_paths", "seed", "kappa", "output_dir"];

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub key: Option<String>,
    pub message: String,
}

impl ConfigError {
    fn at(line: usize, key: Option<&str>, message: impl Into<String>) -> Self {
        ConfigError {
            line: Some(line),
            key: key.map(str::to_string),
            message: message.into(),
        }
    }

    fn key(key: &str, message: impl Into<String>) -> Self {
        ConfigError {
            line: None,
            key: Some(key.to_string()),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(l) = self.line {
            write!(f, "line {l}: ")?;
        }
        if let Some(k) = &self.key {
            write!(f, "{k}: ")?;
        }
        f.write_str(&self.message)
    }
}

impl std::error::Error for ConfigError {}

/// Impact function selector for the arbitrage subcommand.
#[derive(Debug, Clone, PartialEq)]
pub enum KappaSpec {
    Linear(f64),
    QuadraticOdd,
    Affine(f64, f64),
    IdleDrift(f64, f64),
}

impl KappaSpec {
    pub fn parse(text: &str) -> Result<KappaSpec, String> {
        let t = text.trim();
        let (name, args) = match t.find('(') {
            Some(i) if t.ends_with(')') => (&t[..i], &t[i + 1..t.len() - 1]),
            Some(_) => return Err(format!("unbalanced parentheses in '{t}'")),
            None => (t, ""),
        };
        let nums: Vec<f64> = if args.trim().is_empty() {
            Vec::new()
        } else {
            args.split(',')
                .map(|a| {
                    a.trim()
                        .parse::<f64>()
                        .map_err(|_| format!("bad number '{}'", a.trim()))
                })
                .collect::<Result<_, _>>()?
        };
        match (name.trim(), nums.as_slice()) {
            ("linear", [th]) => Ok(KappaSpec::Linear(*th)),
            ("quadratic_odd", []) => Ok(KappaSpec::QuadraticOdd),
            ("affine", [th, c]) => Ok(KappaSpec::Affine(*th, *c)),
            ("idle_drift", [th, c]) => Ok(KappaSpec::IdleDrift(*th, *c)),
            _ => Err(format!(
                "unknown impact '{t}'; expected linear(θ), quadratic_odd, affine(θ,c) or idle_drift(θ,c)"
            )),
        }
    }

    pub fn build(&self) -> mcg_core::Result<ImpactFunction> {
        Ok(match *self {
            KappaSpec::Linear(th) => ImpactFunction::linear(th)?,
            KappaSpec::QuadraticOdd => ImpactFunction::quadratic_odd(),
            KappaSpec::Affine(th, c) => ImpactFunction::affine(th, c),
            KappaSpec::IdleDrift(th, c) => ImpactFunction::idle_drift(th, c),
        })
    }
}

impl fmt::Display for KappaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KappaSpec::Linear(th) => write!(f, "linear({th})"),
            KappaSpec::QuadraticOdd => write!(f, "quadratic_odd"),
            KappaSpec::Affine(th, c) => write!(f, "affine({th},{c})"),
            KappaSpec::IdleDrift(th, c) => write!(f, "idle_drift({th},{c})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub theta1: f64,
    pub theta2: f64,
    pub sigma: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub s: f64,
    pub horizon: f64,
    pub s0: f64,
    pub w1_0: f64,
    pub w2_0: f64,
    pub pi1_0: f64,
    pub pi2_0: f64,
    pub pi_lo: f64,
    pub pi_hi: f64,
    pub n_steps: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub kappa: Option<KappaSpec>,
    pub output_dir: Option<PathBuf>,
}

impl Default for ScenarioConfig {
    /// The two-investor example with χ = 0.5 and ϕ = 2.
    fn default() -> Self {
        ScenarioConfig {
            theta1: 1.0,
            theta2: 1.0,
            sigma: 0.5,
            delta1: 4.0,
            delta2: 1.0,
            s: 0.0,
            horizon: 5.0,
            s0: 100.0,
            w1_0: 0.0,
            w2_0: 0.0,
            pi1_0: 0.6,
            pi2_0: -1.0,
            pi_lo: -50.0,
            pi_hi: 50.0,
            n_steps: 5000,
            n_paths: 10_000,
            seed: 0,
            kappa: None,
            output_dir: None,
        }
    }
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<ScenarioConfig, ConfigError> {
        let mut seen: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::at(line_no, None, format!("expected 'key = value', got '{line}'")))?;
            let (key, value) = (key.trim(), value.trim());
            let known = REQUIRED.contains(&key) || OPTIONAL_NUMERIC.contains(&key) || RUN_KEYS.contains(&key);
            if !known {
                return Err(ConfigError::at(line_no, Some(key), "unknown key"));
            }
            if value.is_empty() {
                return Err(ConfigError::at(line_no, Some(key), "missing value"));
            }
            if let Some((prev, _)) = seen.get(key) {
                return Err(ConfigError::at(
                    line_no,
                    Some(key),
                    format!("duplicate key (first set on line {prev})"),
                ));
            }
            seen.insert(key.to_string(), (line_no, value.to_string()));
        }

        let num = |key: &str, default: Option<f64>| -> Result<f64, ConfigError> {
            match seen.get(key) {
                Some((line, v)) => v
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| ConfigError::at(*line, Some(key), format!("'{v}' is not a finite number"))),
                None => default.ok_or_else(|| ConfigError::key(key, "missing required key")),
            }
        };
        let int = |key: &str| -> Result<Option<u64>, ConfigError> {
            match seen.get(key) {
                Some((line, v)) => v
                    .parse::<u64>()
                    .map(Some)
                    .map_err(|_| ConfigError::at(*line, Some(key), format!("'{v}' is not a non-negative integer"))),
                None => Ok(None),
            }
        };

        let s = num("s", Some(0.0))?;
        let horizon = num("T", None)?;
        let mut cfg = ScenarioConfig {
            theta1: num("theta1", None)?,
            theta2: num("theta2", None)?,
            sigma: num("sigma", None)?,
            delta1: num("delta1", None)?,
            delta2: num("delta2", None)?,
            s,
            horizon,
            s0: num("S0", None)?,
            w1_0: num("W1_0", Some(0.0))?,
            w2_0: num("W2_0", Some(0.0))?,
            pi1_0: num("pi1_0", None)?,
            pi2_0: num("pi2_0", None)?,
            pi_lo: num("pi_lo", None)?,
            pi_hi: num("pi_hi", None)?,
            n_steps: 0,
            n_paths: int("n_paths")?.unwrap_or(10_000) as usize,
            seed: int("seed")?.unwrap_or(0),
            kappa: None,
            output_dir: seen.get("output_dir").map(|(_, v)| PathBuf::from(v)),
        };
        cfg.n_steps = match int("n_steps")? {
            Some(n) => n as usize,
            None => (1000.0 * (horizon - s)).ceil().max(1.0) as usize,
        };
        for key in ["n_steps", "n_paths"] {
            let v = if key == "n_steps" { cfg.n_steps } else { cfg.n_paths };
            if v == 0 {
                let line = seen.get(key).map(|(l, _)| *l).unwrap_or(0);
                return Err(ConfigError::at(line, Some(key), "must be at least 1"));
            }
        }
        if let Some((line, v)) = seen.get("kappa") {
            cfg.kappa = Some(KappaSpec::parse(v).map_err(|m| ConfigError::at(*line, Some("kappa"), m))?);
        }
        Ok(cfg)
    }

    /// Canonical text form; parsing it gives back an equal config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        put("theta1", self.theta1.to_string());
        put("theta2", self.theta2.to_string());
        put("sigma", self.sigma.to_string());
        put("delta1", self.delta1.to_string());
        put("delta2", self.delta2.to_string());
        put("s", self.s.to_string());
        put("T", self.horizon.to_string());
        put("S0", self.s0.to_string());
        put("W1_0", self.w1_0.to_string());
        put("W2_0", self.w2_0.to_string());
        put("pi1_0", self.pi1_0.to_string());
        put("pi2_0", self.pi2_0.to_string());
        put("pi_lo", self.pi_lo.to_string());
        put("pi_hi", self.pi_hi.to_string());
        put("n_steps", self.n_steps.to_string());
        put("n_paths", self.n_paths.to_string());
        put("seed", self.seed.to_string());
        if let Some(k) = &self.kappa {
            put("kappa", k.to_string());
        }
        if let Some(d) = &self.output_dir {
            put("output_dir", d.display().to_string());
        }
        out
    }

    /// Validated scenario; violations are reported under the config key names.
    pub fn scenario(&self) -> Result<Scenario, ConfigError> {
        let params = MarketParams {
            theta_1: self.theta1,
            theta_2: self.theta2,
            vol: VolatilitySpec::constant(self.sigma),
            start: self.s,
            horizon: self.horizon,
            s0: self.s0,
            w1_0: self.w1_0,
            w2_0: self.w2_0,
            pi1_0: self.pi1_0,
            pi2_0: self.pi2_0,
        };
        let prefs = Preferences {
            delta_1: self.delta1,
            delta_2: self.delta2,
        };
        validate_market(params, prefs, ControlBounds::new(self.pi_lo, self.pi_hi)).map_err(|e| match e {
            mcg_core::Error::Invalid(v) => {
                let first = v.first().map(|v| config_key(&v.field)).unwrap_or("scenario");
                let all: Vec<String> = v
                    .iter()
                    .map(|v| format!("{}: {}", config_key(&v.field), v.reason))
                    .collect();
                ConfigError::key(first, all.join("; "))
            }
            other => ConfigError::key("scenario", other.to_string()),
        })
    }

    pub fn impact(&self) -> mcg_core::Result<ImpactFunction> {
        match &self.kappa {
            Some(k) => k.build(),
            None => ImpactFunction::linear(self.theta1),
        }
    }
}

fn config_key(field: &str) -> &str {
    match field {
        "theta_1" => "theta1",
        "theta_2" => "theta2",
        "delta_1" => "delta1",
        "delta_2" => "delta2",
        f if f.starts_with("sigma") => "sigma",
        f => f,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "\
# comment
theta1 = 1
theta2 = 1
sigma = 0.5
delta1 = 4
delta2 = 1
T = 5
S0 = 100
pi1_0 = 0.6   # trailing comment
pi2_0 = -1
pi_lo = -50
pi_hi = 50
";

    #[test]
    fn parses_with_defaults() {
        let c = ScenarioConfig::parse(BASE).unwrap();
        assert_eq!(c.n_steps, 5000);
        assert_eq!(c.n_paths, 10_000);
        assert_eq!((c.s, c.w1_0, c.seed), (0.0, 0.0, 0));
        assert_eq!(c, ScenarioConfig::default());
        c.scenario().unwrap();
    }

    #[test]
    fn round_trip() {
        let mut c = ScenarioConfig::parse(BASE).unwrap();
        c.kappa = Some(KappaSpec::Affine(1.0, 0.3));
        c.output_dir = Some("out dir".into());
        c.pi1_0 = 0.1 + 0.2;
        let again = ScenarioConfig::parse(&c.to_text()).unwrap();
        assert_eq!(c, again);
        assert_eq!(c.scenario().unwrap(), again.scenario().unwrap());
    }

    #[test]
    fn errors_carry_line_and_key() {
        let e = ScenarioConfig::parse(&BASE.replace("sigma = 0.5\n", "")).unwrap_err();
        assert_eq!(e.key.as_deref(), Some("sigma"));
        assert!(e.to_string().contains("missing required key"));

        let e = ScenarioConfig::parse(&format!("{BASE}bogus = 1\n")).unwrap_err();
        assert_eq!((e.line, e.key.as_deref()), (Some(13), Some("bogus")));

        let e = ScenarioConfig::parse(&BASE.replace("S0 = 100", "S0 = abc")).unwrap_err();
        assert_eq!(e.line, Some(8));
        assert!(e.to_string().starts_with("line 8: S0:"));

        let e = ScenarioConfig::parse(&format!("{BASE}T = 3\n")).unwrap_err();
        assert!(e.message.contains("duplicate"));

        let e = ScenarioConfig::parse(&format!("{BASE}just words\n")).unwrap_err();
        assert_eq!(e.line, Some(13));

        let e = ScenarioConfig::parse(&format!("{BASE}kappa = cubic\n")).unwrap_err();
        assert_eq!(e.key.as_deref(), Some("kappa"));
    }

    #[test]
    fn validation_uses_config_names() {
        let c = ScenarioConfig::parse(&BASE.replace("delta2 = 1", "delta2 = -1")).unwrap();
        let e = c.scenario().unwrap_err();
        assert_eq!(e.key.as_deref(), Some("delta2"));
    }

    #[test]
    fn kappa_specs() {
        for t in ["linear(2)", "quadratic_odd", "affine(1,0.3)", "idle_drift(1,0.3)"] {
            assert_eq!(KappaSpec::parse(t).unwrap().to_string(), t);
        }
        assert!(KappaSpec::parse("linear").is_err());
        assert!(KappaSpec::parse("affine(1,").is_err());
    }
}
