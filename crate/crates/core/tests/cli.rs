use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sdmpc(dir: &Path, config: &str, args: &[&str]) -> Output {
    let cfg = dir.join("run.toml");
    fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_sdmpc"))
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .arg("--jobs")
        .arg("1")
        .args(args)
        .output()
        .unwrap()
}

const SHORT_RUN: &str = "
[experiment]
x0 = [[0.3, -0.2]]
deltas = [0.5]
n = 5
t_sim = 6.0
";

#[test]
fn simulate_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let oa = sdmpc(a.path(), SHORT_RUN, &["simulate"]);
    let ob = sdmpc(b.path(), SHORT_RUN, &["simulate"]);
    assert!(
        oa.status.success(),
        "{}",
        String::from_utf8_lossy(&oa.stderr)
    );
    assert_eq!(oa.stdout, ob.stdout);
    for f in [
        "simulate.json",
        "simulate_0_0_trajectory.csv",
        "simulate_0_0_steps.csv",
    ] {
        let x = fs::read(a.path().join("out").join(f)).unwrap();
        let y = fs::read(b.path().join("out").join(f)).unwrap();
        assert_eq!(x, y, "{f} differs between runs");
    }
    let json: serde_json::Value =
        serde_json::from_slice(&fs::read(a.path().join("out/simulate.json")).unwrap()).unwrap();
    assert_eq!(json[0]["x0"], serde_json::json!([0.3, -0.2]));
}

#[test]
fn trajectory_csv_has_header_and_rows() {
    let d = tempfile::tempdir().unwrap();
    let o = sdmpc(d.path(), SHORT_RUN, &["simulate"]);
    assert!(o.status.success());
    let mut r = csv::Reader::from_path(d.path().join("out/simulate_0_0_trajectory.csv")).unwrap();
    let header = r.headers().unwrap().clone();
    assert_eq!(&header[0], "t");
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert!(rows.len() > 10);
    assert!(rows.iter().all(|row| row.len() == header.len()));
}

#[test]
fn config_errors_exit_with_2() {
    let d = tempfile::tempdir().unwrap();
    let o = sdmpc(d.path(), "[experiment]\ndeltas = [-0.1]\n", &["simulate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("δ"));
    let o = sdmpc(d.path(), "[experiment]\nunknown_key = 1\n", &["simulate"]);
    assert_eq!(o.status.code(), Some(2));
    let o = sdmpc(
        d.path(),
        "[experiment]\nx0 = [[0.1, 0.2, 0.3]]\n",
        &["simulate"],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn empty_horizon_range_gives_header_only_sweep() {
    let d = tempfile::tempdir().unwrap();
    let o = sdmpc(d.path(), "[experiment]\nn_range = [5, 2]\n", &["sweep"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(d.path().join("out/sweep.csv")).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("x0_1,x0_2,delta,N,success"));
}

#[test]
fn table1_cell_in_acceptance_mode() {
    let d = tempfile::tempdir().unwrap();
    let cfg = "[experiment]\nx0 = [[0.5, 0.5]]\ndeltas = [0.1]\nn_range = [1, 8]\n";
    let o = sdmpc(d.path(), cfg, &["--acceptance", "table1"]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let json: serde_json::Value =
        serde_json::from_slice(&fs::read(d.path().join("out/table1.json")).unwrap()).unwrap();
    let n = json["cells"][0][0].as_u64().unwrap();
    assert!(n.abs_diff(4) <= 1, "N = {n}");
}

#[test]
fn table1_mismatch_exits_with_4() {
    // A 1 s window leaves every horizon failing, so the cell is empty.
    let d = tempfile::tempdir().unwrap();
    let cfg = "[experiment]\nx0 = [[0.5, 0.5]]\ndeltas = [0.1]\nn_range = [1, 3]\nt_sim = 1.0\n";
    let o = sdmpc(d.path(), cfg, &["--acceptance", "table1"]);
    assert_eq!(o.status.code(), Some(4));
    let o = sdmpc(d.path(), cfg, &["table1"]);
    assert_eq!(o.status.code(), Some(0));
}
