use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const BASE: &str = "\
theta1 = 1
theta2 = 1
sigma = 0.5
delta1 = 4
delta2 = 1
T = 5
S0 = 100
pi1_0 = 0.6
pi2_0 = -1
pi_lo = -50
pi_hi = 50
n_steps = 500
n_paths = 2000
seed = 11
";

struct Run {
    dir: TempDir,
}

impl Run {
    fn new(config: &str) -> Run {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("scenario.cfg"), config).unwrap();
        Run { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn mcg(&self, out: &str, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_mcg"))
            .arg("--config")
            .arg(self.path("scenario.cfg"))
            .arg("--out")
            .arg(self.path(out))
            .args(args)
            .output()
            .unwrap()
    }

    fn json(&self, rel: &str) -> Value {
        serde_json::from_str(&fs::read_to_string(self.path(rel)).unwrap()).unwrap()
    }
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn csv_rows(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn equilibrium_matches_closed_form() {
    let run = Run::new(BASE);
    let o = run.mcg("out", &["equilibrium"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&run.path("out/equilibrium.csv"));
    assert_eq!(rows.len(), 501);
    for r in &rows {
        let t = r[0];
        let p1 = 0.6 * (0.5 * t).cosh() - 0.5 * (0.5 * t).sinh();
        let p2 = 1.2 * (0.5 * t).sinh() - (0.5 * t).cosh();
        assert!((r[1] - p1).abs() < 1e-9 && (r[2] - p2).abs() < 1e-9, "t = {t}");
    }
    // π² changes sign between the nodes around 2·artanh(5/6)
    let tc = 2.0 * (5.0f64 / 6.0).atanh();
    let k = rows.iter().position(|r| r[2] > 0.0).unwrap();
    assert!(rows[k - 1][0] < tc && tc <= rows[k][0]);
    let crossing = run.json("out/crossing.json");
    assert!((crossing["investor_2"].as_f64().unwrap() - tc).abs() < 1e-9);
    assert!(crossing["investor_1"].is_null());
    assert!((crossing["investor_2"].as_f64().unwrap() - 2.376).abs() < 0.05);
    assert_eq!(run.json("out/conditions.json")["all_hold"], true);
}

#[test]
fn unit_coupling_exits_with_conditions_code() {
    let run = Run::new(&BASE.replace("delta1 = 4", "delta1 = 1"));
    let o = run.mcg("out", &["equilibrium"]);
    assert_eq!(o.status.code(), Some(2));
    let c = run.json("out/conditions.json");
    assert_eq!(c["failed"], serde_json::json!(["cond_i"]));
    assert!(run.path("out/equilibrium_numerical.csv").exists());
    assert!(!run.path("out/equilibrium.csv").exists());
}

#[test]
fn missing_key_exits_with_config_code() {
    let run = Run::new(&BASE.replace("S0 = 100\n", ""));
    let o = run.mcg("out", &["equilibrium"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("S0"), "{}", stderr(&o));
}

#[test]
fn invalid_value_names_the_key_and_line() {
    let run = Run::new(&BASE.replace("sigma = 0.5", "sigma = -0.5"));
    let o = run.mcg("out", &["equilibrium"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("sigma"), "{}", stderr(&o));
}

#[test]
fn zero_controls_keep_the_price_a_martingale() {
    let run = Run::new(BASE);
    let o = run.mcg("out", &["simulate", "--dump-paths", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = run.json("out/summary.json");
    let dev = s["S_T_minus_S0"].as_f64().unwrap();
    let se = s["terminal"]["S"]["se"].as_f64().unwrap();
    assert!(dev.abs() < 4.0 * se, "{dev} vs {se}");
    assert_eq!(s["wealth_identity_max_residual"]["investor_1"], 0.0);
    let paths = fs::read_to_string(run.path("out/paths.csv")).unwrap();
    assert_eq!(paths.lines().count(), 1 + 3 * 501);
}

fn write_rates(run: &Run, name: &str, col: usize) -> PathBuf {
    let rows = csv_rows(&run.path("eq/equilibrium.csv"));
    let mut text = String::from("t,x\n");
    for r in &rows[..rows.len() - 1] {
        text.push_str(&format!("{},{}\n", r[0], r[col]));
    }
    let p = run.path(name);
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn equilibrium_rates_round_trip_through_files() {
    let run = Run::new(BASE);
    assert!(run.mcg("eq", &["equilibrium"]).status.success());
    let x1 = write_rates(&run, "x1.csv", 3);
    let x2 = write_rates(&run, "x2.csv", 4);
    let o = run.mcg(
        "files",
        &["simulate", "--x1", x1.to_str().unwrap(), "--x2", x2.to_str().unwrap()],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(run.mcg("builtin", &["simulate", "--equilibrium"]).status.success());
    let a = run.json("files/summary.json");
    let b = run.json("builtin/summary.json");
    // shortest round-trip formatting makes the file path exact
    assert_eq!(a["utility"], b["utility"]);
    assert!((a["terminal"]["pi1"]["mean"].as_f64().unwrap() - 0.654).abs() < 5e-3);
}

#[test]
fn short_control_file_is_rejected_by_name() {
    let run = Run::new(BASE);
    let p = run.path("short.csv");
    fs::write(&p, "t,x\n0,1\n0.01,1\n").unwrap();
    let o = run.mcg("out", &["simulate", "--x1", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("short.csv"), "{}", stderr(&o));
}

#[test]
fn best_response_to_equilibrium_reproduces_it() {
    let run = Run::new(BASE);
    let o = run.mcg("out", &["best-response", "--investor", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(run.path("out/best_response.csv")).unwrap();
    assert_eq!(text.lines().next(), Some("t,pi_star,x_star,region"));
    for line in text.lines().skip(1).take(500) {
        let cols: Vec<&str> = line.split(',').collect();
        let t: f64 = cols[0].parse().unwrap();
        let pi: f64 = cols[1].parse().unwrap();
        let want = 0.6 * (0.5 * t).cosh() - 0.5 * (0.5 * t).sinh();
        assert!((pi - want).abs() < 1e-9);
        assert_eq!(cols[3], "control");
    }
}

#[test]
fn quadratic_impact_arbitrage_is_reported() {
    let run = Run::new(&format!("{BASE}kappa = quadratic_odd\n"));
    let o = run.mcg("out", &["arbitrage", "--alphas", "1", "--betas", "2", "--horizon", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let a = run.json("out/arbitrage.json");
    assert_eq!(a["verdict"], "arbitrage");
    assert!((a["gain"].as_f64().unwrap() - 2.0).abs() < 1e-10);
    assert_eq!(a["witness"]["kind"], "BuyFast");

    let o = run.mcg("v", &["verify", "arbitrage"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v = run.json("v/verify.json");
    let c = v["checks"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == "arbitrage.config_kappa")
        .unwrap();
    assert_eq!(c["data"]["probe"]["gain"], 2.0);
    assert_eq!(c["data"]["probe"]["verdict"], "arbitrage");
}

#[test]
fn linear_impact_has_no_arbitrage() {
    let run = Run::new(BASE);
    assert!(run.mcg("out", &["arbitrage"]).status.success());
    assert_eq!(run.json("out/arbitrage.json")["verdict"], "no_arbitrage_found");
}

#[test]
fn verify_all_passes_and_reports_enough_checks() {
    let run = Run::new(BASE);
    let o = run.mcg("out", &["verify", "all"]);
    assert!(
        o.status.success(),
        "{}\n{}",
        String::from_utf8_lossy(&o.stdout),
        stderr(&o)
    );
    let v = run.json("out/verify.json");
    let checks = v["checks"].as_array().unwrap();
    assert!(checks.len() >= 20);
    assert!(checks.iter().all(|c| c["status"] == "pass"));
}

#[test]
fn starved_oracle_suite_still_runs_and_names_z() {
    let run = Run::new(&BASE.replace("n_paths = 2000", "n_paths = 100"));
    let o = run.mcg("out", &["verify", "oracle"]);
    let v = run.json("out/verify.json");
    let checks = v["checks"].as_array().unwrap();
    assert!(checks.len() >= 7);
    let failed: Vec<&Value> = checks.iter().filter(|c| c["status"] == "fail").collect();
    if failed.is_empty() {
        assert!(o.status.success());
    } else {
        assert_eq!(o.status.code(), Some(4));
        for c in failed {
            assert!(stderr(&o).contains(c["name"].as_str().unwrap()));
        }
    }
    for c in checks
        .iter()
        .filter(|c| c["name"].as_str().unwrap().starts_with("oracle.dominance"))
    {
        assert!(c["detail"].as_str().unwrap().contains("z = "));
    }
}

#[test]
fn reruns_are_byte_identical() {
    let run = Run::new(BASE);
    for out in ["a", "b"] {
        assert!(run.mcg(out, &["equilibrium"]).status.success());
        assert!(run.mcg(out, &["simulate", "--equilibrium"]).status.success());
        assert!(run.mcg(out, &["verify", "dynamics"]).status.success());
    }
    for f in [
        "equilibrium.csv",
        "conditions.json",
        "crossing.json",
        "paths.csv",
        "summary.json",
        "verify.json",
    ] {
        let a = fs::read(run.path(&format!("a/{f}"))).unwrap();
        let b = fs::read(run.path(&format!("b/{f}"))).unwrap();
        assert_eq!(a, b, "{f}");
    }
}

#[test]
fn seed_flag_overrides_config() {
    let run = Run::new(BASE);
    assert!(run.mcg("a", &["simulate"]).status.success());
    assert!(run.mcg("b", &["--seed", "12", "simulate"]).status.success());
    let (a, b) = (run.json("a/summary.json"), run.json("b/summary.json"));
    assert_eq!(a["seed"], 11);
    assert_eq!(b["seed"], 12);
    assert_ne!(a["terminal"]["S"], b["terminal"]["S"]);
}
