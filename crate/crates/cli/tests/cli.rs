use crossway_cli::compare::compare_modes;
use crossway_cli::{parse_grid, sha256_hex, CliError, RunManifest, MANIFEST_FILE};
use crossway_core::sim::{Mode, ScenarioConfig};
use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_crossway"));
    c.env("RUST_LOG", "warn");
    for var in ["SCENARIO", "SEED", "MODE", "DT_PRED", "OUT", "PORT", "DECIMATION", "HOST"] {
        c.env_remove(format!("CROSSWAY_{var}"));
    }
    c
}

fn short_scenario(dir: &Path) -> std::path::PathBuf {
    let mut cfg = ScenarioConfig { duration: 60.0, ..Default::default() };
    cfg.spawn.rate_per_leg = 0.1;
    let path = dir.join("scenario.json");
    std::fs::write(&path, cfg.to_json()).unwrap();
    path
}

fn manifest(dir: &Path) -> RunManifest {
    serde_json::from_str(&std::fs::read_to_string(dir.join(MANIFEST_FILE)).unwrap()).unwrap()
}

#[test]
fn run_writes_checksummed_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = short_scenario(tmp.path());
    let out = tmp.path().join("run");
    let status = bin()
        .args(["run", "--scenario"])
        .arg(&scenario)
        .args(["--seed", "5", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let m = manifest(&out);
    assert_eq!(m.seed, Some(5));
    assert_eq!(m.mode, Some(Mode::Cooperative));
    let files: Vec<&str> = m.artifacts.iter().map(|a| a.file.as_str()).collect();
    assert_eq!(files, ["trace.csv", "summary.json", "failsafe.json"]);
    for a in &m.artifacts {
        let bytes = std::fs::read(out.join(&a.file)).unwrap();
        assert_eq!(sha256_hex(&bytes), a.sha256, "{}", a.file);
        assert_eq!(bytes.len() as u64, a.bytes);
    }
    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    assert!(trace.starts_with("t,vehicle_id,role,s,x,y,v,a,slot,intersection,est_err,mode\n"));

    let again = tmp.path().join("again");
    let status = bin()
        .args(["run", "--scenario"])
        .arg(&scenario)
        .args(["--seed", "5", "--out"])
        .arg(&again)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert_eq!(manifest(&again).artifacts[0].sha256, m.artifacts[0].sha256);
}

#[test]
fn malformed_scenario_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, "{\"dt_sim\": ").unwrap();
    let status = bin().args(["run", "--scenario"]).arg(&bad).arg("--out").arg(tmp.path()).status().unwrap();
    assert_eq!(status.code(), Some(2));
    let status = bin().args(["run", "--dt-pred", "0.03", "--out"]).arg(tmp.path()).status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn environment_overrides_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = short_scenario(tmp.path());
    let status = bin()
        .arg("run")
        .env("CROSSWAY_SCENARIO", &scenario)
        .env("CROSSWAY_SEED", "8")
        .env("CROSSWAY_MODE", "signalized")
        .env("CROSSWAY_OUT", tmp.path().join("env"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let m = manifest(&tmp.path().join("env"));
    assert_eq!((m.seed, m.mode), (Some(8), Some(Mode::Signalized)));
    assert_eq!(m.scenario_path.as_deref(), Some(scenario.as_path()));
}

#[test]
fn compare_emits_deltas_and_series() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = short_scenario(tmp.path());
    let out = tmp.path().join("cmp");
    let status = bin().args(["compare", "--scenario"]).arg(&scenario).arg("--out").arg(&out).status().unwrap();
    assert_eq!(status.code(), Some(0));
    let cmp: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("compare.json")).unwrap()).unwrap();
    assert!(cmp["delta_travel_time_pct"].as_f64().unwrap() < 0.0);
    let series = std::fs::read_to_string(out.join("speed_distance.csv")).unwrap();
    let mut lines = series.lines();
    assert_eq!(lines.next(), Some("mode,vehicle_id,t,distance,v"));
    assert!(series.contains("\ncooperative,") && series.contains("\nsignalized,"));
    assert_eq!(series.matches("mode,vehicle_id").count(), 1);
}

#[test]
fn self_comparison_is_zero() {
    let mut cfg = ScenarioConfig { duration: 40.0, ..Default::default() };
    cfg.spawn.rate_per_leg = 0.1;
    let run = compare_modes(&cfg, Mode::Cooperative, Mode::Cooperative).unwrap();
    assert_eq!(run.comparison.delta_travel_time_pct, 0.0);
    assert_eq!(run.comparison.delta_energy_pct, 0.0);
}

#[test]
fn sweep_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sw");
    let status = bin().args(["sweep", "--dt-pred", "1.0,0.1,0.01", "--seed", "1", "--out"]).arg(&out).status().unwrap();
    assert_eq!(status.code(), Some(0));
    let csv = std::fs::read_to_string(out.join("sensitivity.csv")).unwrap();
    let errors: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(errors.len(), 3);
    assert!(errors.windows(2).all(|w| w[1] <= w[0]), "{errors:?}");

    let one = tmp.path().join("one");
    let status = bin().args(["sweep", "--dt-pred", "0.1", "--seed", "1", "--out"]).arg(&one).status().unwrap();
    assert_eq!(status.code(), Some(0));
    assert_eq!(std::fs::read_to_string(one.join("sensitivity.csv")).unwrap().lines().count(), 2);

    let status = bin().args(["sweep", "--dt-pred", "", "--out"]).arg(tmp.path()).status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn grid_parsing() {
    assert_eq!(parse_grid(None).unwrap(), vec![1.0, 0.5, 0.1, 0.05, 0.01]);
    assert_eq!(parse_grid(Some("0.5, 0.1")).unwrap(), vec![0.5, 0.1]);
    assert!(matches!(parse_grid(Some("")), Err(CliError::Schema(_))));
    assert!(matches!(parse_grid(Some("fast")), Err(CliError::Schema(_))));
}

#[test]
fn busy_port_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = listener.local_addr().unwrap().port().to_string();
    let status = bin().args(["serve", "--port", &port, "--out"]).arg(tmp.path()).status().unwrap();
    assert_eq!(status.code(), Some(4));
}

#[test]
fn exit_codes() {
    assert_eq!(CliError::Schema(String::new()).exit_code(), 2);
    assert_eq!(CliError::Invariant(String::new()).exit_code(), 3);
    assert_eq!(CliError::PortBusy(String::new()).exit_code(), 4);
}
